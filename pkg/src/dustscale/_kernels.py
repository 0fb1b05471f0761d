"""Hot numeric kernels, each with a numba-jitted and a pure-numpy implementation.

The jitted path is used when numba imports cleanly and the environment
variable ``DUSTSCALE_NUMBA`` is not ``0``/``off``/``false``/``no``. Both paths
agree to floating-point round-off; ``benchmarks/bench_kernels.py`` compares
their throughput. The ``*_np`` and ``*_nb`` variants stay importable so tests
and benchmarks can pin a path explicitly (``*_nb`` is ``None`` when numba is
unavailable or disabled).
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "NUMBA_ENABLED",
    "hann_window",
    "stitch_accumulate",
    "stitch_accumulate_np",
    "stitch_accumulate_nb",
    "bicubic_apply",
    "bicubic_apply_np",
    "bicubic_apply_nb",
    "variogram_accumulate",
    "variogram_accumulate_np",
    "variogram_accumulate_nb",
]


def _numba_requested() -> bool:
    flag = os.environ.get("DUSTSCALE_NUMBA", "auto").strip().lower()
    return flag not in {"0", "off", "false", "no"}


NUMBA_ENABLED = False
if _numba_requested():
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - exercised via env flag in CI
        NUMBA_ENABLED = False


def hann_window(n: int) -> np.ndarray:
    """1D Hann taper of length ``n``; the degenerate length-1 window is [1.0]."""
    if n < 1:
        raise ValueError(f"window length must be >= 1, got {n}")
    if n == 1:
        return np.ones(1)
    return np.hanning(n)


# ---------------------------------------------------------------------------
# stitch accumulation: add Hann-tapered patch cores into sum/weight images
# ---------------------------------------------------------------------------


def stitch_accumulate_np(sums, weights, values, y0s, x0s, halo):
    h_img, w_img = sums.shape
    n_patches, ph, pw = values.shape
    for p in range(n_patches):
        y0 = int(y0s[p])
        x0 = int(x0s[p])
        ht = 0 if y0 == 0 else halo
        hb = 0 if y0 + ph == h_img else halo
        hl = 0 if x0 == 0 else halo
        hr = 0 if x0 + pw == w_img else halo
        nr = ph - ht - hb
        nc = pw - hl - hr
        w2d = np.outer(hann_window(nr), hann_window(nc))
        r0 = y0 + ht
        c0 = x0 + hl
        sums[r0 : r0 + nr, c0 : c0 + nc] += w2d * values[p, ht : ht + nr, hl : hl + nc]
        weights[r0 : r0 + nr, c0 : c0 + nc] += w2d


# ---------------------------------------------------------------------------
# bicubic stencil application (separable 4-tap gather per axis)
# ---------------------------------------------------------------------------


def bicubic_apply_np(src, row_idx, row_w, col_idx, col_w):
    tmp = np.einsum("ik,ikj->ij", row_w, src[row_idx, :])
    return np.einsum("jk,ijk->ij", col_w, tmp[:, col_idx])


# ---------------------------------------------------------------------------
# semivariogram accumulation: bin half squared differences over pixel pairs
# ---------------------------------------------------------------------------


def variogram_accumulate_np(z, idx_a, idx_b, bin_idx, n_bins):
    d = z[idx_a] - z[idx_b]
    contrib = 0.5 * d * d
    sums = np.bincount(bin_idx, weights=contrib, minlength=n_bins)
    counts = np.bincount(bin_idx, minlength=n_bins)
    return sums, counts.astype(np.int64)


if NUMBA_ENABLED:

    @njit(cache=True)
    def _hann_nb(n):  # pragma: no cover - executed in compiled form
        w = np.empty(n)
        if n == 1:
            w[0] = 1.0
            return w
        for i in range(n):
            w[i] = 0.5 - 0.5 * np.cos(2.0 * np.pi * i / (n - 1))
        return w

    @njit(cache=True)
    def stitch_accumulate_nb(sums, weights, values, y0s, x0s, halo):  # pragma: no cover
        h_img, w_img = sums.shape
        n_patches, ph, pw = values.shape
        for p in range(n_patches):
            y0 = y0s[p]
            x0 = x0s[p]
            ht = 0 if y0 == 0 else halo
            hb = 0 if y0 + ph == h_img else halo
            hl = 0 if x0 == 0 else halo
            hr = 0 if x0 + pw == w_img else halo
            nr = ph - ht - hb
            nc = pw - hl - hr
            wy = _hann_nb(nr)
            wx = _hann_nb(nc)
            for iy in range(nr):
                row = y0 + ht + iy
                for ix in range(nc):
                    w = wy[iy] * wx[ix]
                    col = x0 + hl + ix
                    sums[row, col] += w * values[p, ht + iy, hl + ix]
                    weights[row, col] += w

    @njit(cache=True)
    def bicubic_apply_nb(src, row_idx, row_w, col_idx, col_w):  # pragma: no cover
        n_rows = row_idx.shape[0]
        n_cols = col_idx.shape[0]
        w_src = src.shape[1]
        tmp = np.zeros((n_rows, w_src))
        for i in range(n_rows):
            for k in range(4):
                w = row_w[i, k]
                r = row_idx[i, k]
                for j in range(w_src):
                    tmp[i, j] += w * src[r, j]
        out = np.empty((n_rows, n_cols))
        for i in range(n_rows):
            for j in range(n_cols):
                acc = 0.0
                for k in range(4):
                    acc += col_w[j, k] * tmp[i, col_idx[j, k]]
                out[i, j] = acc
        return out

    @njit(cache=True)
    def variogram_accumulate_nb(z, idx_a, idx_b, bin_idx, n_bins):  # pragma: no cover
        sums = np.zeros(n_bins)
        counts = np.zeros(n_bins, dtype=np.int64)
        for p in range(idx_a.size):
            d = z[idx_a[p]] - z[idx_b[p]]
            b = bin_idx[p]
            sums[b] += 0.5 * d * d
            counts[b] += 1
        return sums, counts

else:
    stitch_accumulate_nb = None
    bicubic_apply_nb = None
    variogram_accumulate_nb = None


if NUMBA_ENABLED:
    stitch_accumulate = stitch_accumulate_nb
    bicubic_apply = bicubic_apply_nb
    variogram_accumulate = variogram_accumulate_nb
else:
    stitch_accumulate = stitch_accumulate_np
    bicubic_apply = bicubic_apply_np
    variogram_accumulate = variogram_accumulate_np
