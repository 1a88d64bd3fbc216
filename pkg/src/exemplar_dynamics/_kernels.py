"""Compiled inner loops shared by the two engines."""

import math

import numba
import numpy as np


@numba.njit(cache=True, fastmath=True)
def split_sums(pos, left, right, n, y):
    """Sum of ``left`` over positions <= y and of ``right`` over positions > y (1-d).

    Branch-free so the loop vectorizes over unsorted positions.
    """
    lower = 0.0
    upper = 0.0
    for i in range(n):
        below = pos[i] <= y
        lower += left[i] if below else 0.0
        upper += 0.0 if below else right[i]
    return lower, upper


@numba.njit(cache=True)
def kernel_sum(pos, rel, n, y, k):
    """sum_i rel_i * exp(-k |y - pos_i|) for positions of shape (cap, D)."""
    d = pos.shape[1]
    total = 0.0
    for i in range(n):
        r2 = 0.0
        for a in range(d):
            diff = y[a] - pos[i, a]
            r2 += diff * diff
        total += rel[i] * math.exp(-k * math.sqrt(r2))
    return total


def warmup() -> None:
    pos = np.zeros((2, 1))
    rel = np.ones(2)
    split_sums(pos[:, 0], rel, rel, 2, 0.0)
    kernel_sum(pos, rel, 2, np.zeros(1), 1.0)
    band_apply(np.ones((2, 1)), np.zeros(2, np.int64), np.ones(2, np.int64), rel[None, :],
               np.empty((1, 2)))
    exp_sweeps(rel[None, :], 0.5, np.empty((1, 2)))


@numba.njit(cache=True, fastmath=True)
def band_apply(band, start, width, m, out):
    """out[w, i] = sum_k band[i, k] * m[w, start[i] + k]: a row-banded matrix product."""
    for i in range(band.shape[0]):
        s = start[i]
        for w in range(m.shape[0]):
            acc = 0.0
            for k in range(width[i]):
                acc += band[i, k] * m[w, s + k]
            out[w, i] = acc


@numba.njit(cache=True)
def exp_sweeps(a, r, out):
    """out[w, i] = sum_j r**|i - j| * a[w, j] by one forward and one backward sweep.

    Every term is non-negative, so small values keep full relative accuracy.
    """
    n = a.shape[1]
    for w in range(a.shape[0]):
        acc = 0.0
        for i in range(n):
            acc = a[w, i] + r * acc
            out[w, i] = acc
        acc = 0.0
        for i in range(n - 1, 0, -1):
            acc = r * (a[w, i] + acc)
            out[w, i - 1] += acc
