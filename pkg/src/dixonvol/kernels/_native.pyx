# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled per-voxel kernels.

Single-pass, allocation-free counterparts of ``_fallback``; results must be
bit-identical to the NumPy versions. Masks are uint8 in {0, 1}, intensities
and logits float32, all C-contiguous.
"""

import numpy as np

BACKEND = "native"


def dice_counts(const unsigned char[::1] a, const unsigned char[::1] b):
    # Branchless {0,1} sums in u32 blocks: one fused pass over both masks,
    # vectorizable, no intermediate arrays.
    cdef Py_ssize_t i, n = a.shape[0]
    cdef Py_ssize_t start = 0, stop
    cdef long long n_a = 0, n_b = 0, n_inter = 0
    cdef unsigned int sa, sb, si
    if b.shape[0] != n:
        raise ValueError("mask length mismatch")
    while start < n:
        stop = min(start + 65536, n)
        sa = 0; sb = 0; si = 0
        for i in range(start, stop):
            sa += a[i]
            sb += b[i]
            si += a[i] & b[i]
        n_a += sa; n_b += sb; n_inter += si
        start = stop
    return n_a, n_b, n_inter


def count_foreground(const unsigned char[::1] mask):
    cdef Py_ssize_t i, n = mask.shape[0]
    cdef Py_ssize_t start = 0, stop
    cdef long long count = 0
    cdef unsigned int s
    while start < n:
        stop = min(start + 65536, n)
        s = 0
        for i in range(start, stop):
            s += mask[i]
        count += s
        start = stop
    return count


def minmax(const float[::1] arr):
    # Four independent lanes break the sequential min/max dependency chain.
    cdef Py_ssize_t i, n = arr.shape[0]
    if n == 0:
        raise ValueError("minmax of empty array")
    cdef float lo0 = arr[0], hi0 = arr[0], lo1 = arr[0], hi1 = arr[0]
    cdef float lo2 = arr[0], hi2 = arr[0], lo3 = arr[0], hi3 = arr[0]
    cdef float v0, v1, v2, v3
    cdef Py_ssize_t m = n - (n % 4)
    for i in range(0, m, 4):
        v0 = arr[i]; v1 = arr[i + 1]; v2 = arr[i + 2]; v3 = arr[i + 3]
        lo0 = v0 if v0 < lo0 else lo0; hi0 = v0 if v0 > hi0 else hi0
        lo1 = v1 if v1 < lo1 else lo1; hi1 = v1 if v1 > hi1 else hi1
        lo2 = v2 if v2 < lo2 else lo2; hi2 = v2 if v2 > hi2 else hi2
        lo3 = v3 if v3 < lo3 else lo3; hi3 = v3 if v3 > hi3 else hi3
    for i in range(m, n):
        v0 = arr[i]
        lo0 = v0 if v0 < lo0 else lo0; hi0 = v0 if v0 > hi0 else hi0
    lo0 = lo1 if lo1 < lo0 else lo0; hi0 = hi1 if hi1 > hi0 else hi0
    lo2 = lo3 if lo3 < lo2 else lo2; hi2 = hi3 if hi3 > hi2 else hi2
    lo0 = lo2 if lo2 < lo0 else lo0; hi0 = hi2 if hi2 > hi0 else hi0
    return float(lo0), float(hi0)


def affine_f32(const float[::1] arr, float scale, float offset):
    cdef Py_ssize_t i, n = arr.shape[0]
    out_arr = np.empty(n, dtype=np.float32)
    cdef float[::1] out = out_arr
    for i in range(n):
        out[i] = arr[i] * scale + offset
    return out_arr


def threshold_gt(const float[::1] arr, float threshold):
    cdef Py_ssize_t i, n = arr.shape[0]
    out_arr = np.empty(n, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    for i in range(n):
        out[i] = arr[i] > threshold
    return out_arr


def argmax2(const float[::1] foreground, const float[::1] background):
    cdef Py_ssize_t i, n = foreground.shape[0]
    if background.shape[0] != n:
        raise ValueError("logit plane length mismatch")
    out_arr = np.empty(n, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    for i in range(n):
        out[i] = foreground[i] > background[i]
    return out_arr


def face_touch(const unsigned char[:, :, ::1] mask, int axis, bint last):
    """Any-foreground test on one boundary plane, with early exit."""
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n0 = mask.shape[0], n1 = mask.shape[1], n2 = mask.shape[2]
    cdef Py_ssize_t idx
    if axis == 0:
        idx = n0 - 1 if last else 0
        for i in range(n1):
            for j in range(n2):
                if mask[idx, i, j]:
                    return True
    elif axis == 1:
        idx = n1 - 1 if last else 0
        for i in range(n0):
            for j in range(n2):
                if mask[i, idx, j]:
                    return True
    elif axis == 2:
        idx = n2 - 1 if last else 0
        for i in range(n0):
            for j in range(n1):
                if mask[i, j, idx]:
                    return True
    else:
        raise ValueError("axis must be 0, 1 or 2")
    return False
