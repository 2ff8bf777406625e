"""Normalization and slice extraction contracts."""

import numpy as np
import pytest

from dixonvol.cohort import ChannelStack
from dixonvol.preprocess import (
    NormalizationSpec,
    extract_slices,
    normalize,
)

from helpers import make_volume


def make_stack(dims=(6, 5, 4), water=None, fat=None, in_phase=None, seed=0):
    rng = np.random.default_rng(seed)
    def vol(data):
        if data is None:
            data = rng.uniform(-50, 400, dims).astype(np.float32)
        return make_volume(dims=dims, data=data)
    return ChannelStack(
        subject_id="s1", water=vol(water), fat=vol(fat), in_phase=vol(in_phase)
    )


class TestNormalizationSpec:
    def test_defaults_are_imagenet(self):
        spec = NormalizationSpec()
        assert spec.mean == (0.485, 0.456, 0.406)
        assert spec.std == (0.229, 0.224, 0.225)
        assert spec.rescale

    def test_nonpositive_std_rejected(self):
        with pytest.raises(ValueError):
            NormalizationSpec(std=(0.0, 1.0, 1.0))

    def test_hash_stable_and_distinct(self):
        assert NormalizationSpec().spec_hash() == NormalizationSpec().spec_hash()
        assert NormalizationSpec().spec_hash() != NormalizationSpec.identity().spec_hash()


class TestNormalize:
    def test_rescale_only_maps_to_unit_interval(self):
        spec = NormalizationSpec(mean=(0, 0, 0), std=(1, 1, 1), rescale=True)
        out = normalize(make_stack(), spec)
        for ch in out.channels:
            assert ch.data.min() >= -1e-6
            assert ch.data.max() <= 1 + 1e-6
            assert ch.data.min() == pytest.approx(0.0, abs=1e-6)
            assert ch.data.max() == pytest.approx(1.0, abs=1e-6)

    def test_constant_channel_value(self):
        # oracle: hand arithmetic (0 - 0.485) / 0.229 = -2.1179039301310043
        const = np.full((6, 5, 4), 123.0, dtype=np.float32)
        spec = NormalizationSpec(
            mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225), rescale=True
        )
        out = normalize(make_stack(water=const), spec)
        assert np.allclose(out.water.data, -2.1179039301310043, atol=1e-4)

    def test_idempotent_with_identity_stats(self):
        spec = NormalizationSpec(mean=(0, 0, 0), std=(1, 1, 1), rescale=True)
        once = normalize(make_stack(), spec)
        twice = normalize(once, spec)
        for a, b in zip(once.channels, twice.channels):
            assert np.allclose(a.data, b.data, atol=1e-6)

    def test_monotone_per_channel(self):
        stack = make_stack(seed=3)
        out = normalize(stack, NormalizationSpec())
        for before, after in zip(stack.channels, out.channels):
            order_before = np.argsort(before.data.ravel(), kind="stable")
            ranked = after.data.ravel()[order_before]
            assert np.all(np.diff(ranked) >= 0)

    def test_full_formula_matches_reference(self):
        # reference: two-step ((x - min)/(max - min) - mean) / std in float64
        stack = make_stack(seed=9)
        spec = NormalizationSpec()
        out = normalize(stack, spec)
        for i, (before, after) in enumerate(zip(stack.channels, out.channels)):
            x = before.data.astype(np.float64)
            expected = ((x - x.min()) / (x.max() - x.min()) - spec.mean[i]) / spec.std[i]
            assert np.allclose(after.data, expected, atol=1e-5)

    def test_output_finite(self):
        out = normalize(make_stack(), NormalizationSpec())
        for ch in out.channels:
            assert np.isfinite(ch.data).all()


class TestExtractSlices:
    def test_axis2_shape(self):
        batch = extract_slices(make_stack(dims=(12, 9, 7)), axis=2)
        assert batch.slices.shape == (7, 12, 9, 3)
        assert batch.slice_indices == tuple(range(7))

    def test_axis0_shape(self):
        batch = extract_slices(make_stack(dims=(4, 4, 4)), axis=0)
        assert batch.slices.shape == (4, 4, 4, 3)

    def test_channel_order_fixed(self):
        stack = make_stack(
            water=np.full((6, 5, 4), 1.0),
            fat=np.full((6, 5, 4), 2.0),
            in_phase=np.full((6, 5, 4), 3.0),
        )
        batch = extract_slices(stack, axis=2)
        assert np.all(batch.slices[..., 0] == 1.0)
        assert np.all(batch.slices[..., 1] == 2.0)
        assert np.all(batch.slices[..., 2] == 3.0)

    @pytest.mark.parametrize("axis", [0, 1, 2])
    def test_lossless_per_axis(self, axis):
        stack = make_stack(dims=(5, 6, 7), seed=axis)
        batch = extract_slices(stack, axis)
        # restack by hand: move the slice axis back into place
        rebuilt = np.moveaxis(batch.slices, 0, axis)
        original = np.stack([c.data for c in stack.channels], axis=-1)
        assert np.array_equal(rebuilt, original)

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            extract_slices(make_stack(), axis=3)
