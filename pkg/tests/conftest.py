"""Shared pytest fixtures."""

from pathlib import Path

import pytest


@pytest.fixture
def tmp_nifti(tmp_path: Path):
    def _write(name: str, blob: bytes) -> Path:
        path = tmp_path / name
        path.write_bytes(blob)
        return path

    return _write
