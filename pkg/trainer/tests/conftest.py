"""Shared trainer fixtures: a small phantom cohort loaded once per session."""

import pytest
import torch

from dixonvol.phantom import generate_cohort
from dixontrain.data import load_subjects

torch.set_num_threads(2)

DIMS = (32, 32, 8)


@pytest.fixture(scope="session")
def small_cohort(tmp_path_factory):
    root = tmp_path_factory.mktemp("cohort")
    manifest = generate_cohort(root, 12, dims=DIMS, seed=11, noise=20.0)
    subjects = load_subjects(root / "catalog", root / "truth")
    return root, manifest, subjects
