"""Per-voxel kernels with a compiled core and a NumPy fallback.

The compiled extension (Cython) is preferred when importable; otherwise the
NumPy implementations are used transparently. Set ``DIXONVOL_NO_NATIVE=1``
to force the fallback (used by the parity tests and the benchmark).

Contract for elementwise kernels: flat C-contiguous arrays, float32 for
intensities/logits and uint8 for masks. ``face_touch`` takes a C-contiguous
3-D uint8 mask. Results are bit-identical across backends.
"""

import os

from . import _fallback

if os.environ.get("DIXONVOL_NO_NATIVE") == "1":
    _impl = _fallback
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _fallback

BACKEND: str = _impl.BACKEND

dice_counts = _impl.dice_counts
count_foreground = _impl.count_foreground
minmax = _impl.minmax
affine_f32 = _impl.affine_f32
threshold_gt = _impl.threshold_gt
argmax2 = _impl.argmax2
face_touch = _impl.face_touch

__all__ = [
    "BACKEND",
    "dice_counts",
    "count_foreground",
    "minmax",
    "affine_f32",
    "threshold_gt",
    "argmax2",
    "face_touch",
]
