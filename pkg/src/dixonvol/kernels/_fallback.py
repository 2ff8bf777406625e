"""Pure-NumPy implementations of the per-voxel kernels.

Semantics here define the contract; the compiled module in ``_native.pyx``
must match these results exactly. Elementwise kernels take flat C-contiguous
arrays (uint8 masks in {0, 1}, float32 intensities/logits); ``face_touch``
takes a C-contiguous 3-D uint8 mask. Inputs are assumed finite, which the
volume loader enforces.
"""

import numpy as np

BACKEND = "numpy"


def dice_counts(a: np.ndarray, b: np.ndarray) -> tuple[int, int, int]:
    """Foreground counts of two flat masks and of their intersection."""
    n_a = int(np.count_nonzero(a))
    n_b = int(np.count_nonzero(b))
    n_inter = int(np.count_nonzero(a & b))
    return n_a, n_b, n_inter


def count_foreground(mask: np.ndarray) -> int:
    return int(np.count_nonzero(mask))


def minmax(arr: np.ndarray) -> tuple[float, float]:
    return float(arr.min()), float(arr.max())


def affine_f32(arr: np.ndarray, scale: float, offset: float) -> np.ndarray:
    """Elementwise ``arr * scale + offset`` in float32."""
    out = arr * np.float32(scale)
    out += np.float32(offset)
    return out.astype(np.float32, copy=False)


def threshold_gt(arr: np.ndarray, threshold: float) -> np.ndarray:
    """uint8 mask of ``arr > threshold`` (strict)."""
    return (arr > np.float32(threshold)).astype(np.uint8)


def argmax2(foreground: np.ndarray, background: np.ndarray) -> np.ndarray:
    """uint8 mask of ``foreground > background`` (ties resolve to background)."""
    return (foreground > background).astype(np.uint8)


def face_touch(mask: np.ndarray, axis: int, last: bool) -> bool:
    """True if the boundary plane of ``mask`` along ``axis`` has any foreground.

    ``last`` selects the high-index face (index dims[axis]-1) instead of index 0.
    """
    index = mask.shape[axis] - 1 if last else 0
    plane = np.take(mask, index, axis=axis)
    return bool(plane.any())
