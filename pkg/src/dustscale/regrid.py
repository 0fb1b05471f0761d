"""Align coarse fields and fine static layers onto a target grid.

Two resampling routes: separable cubic-convolution interpolation (Keys
kernel, a=-0.5) for coarse-to-fine, and cell-mean aggregation for
fine-to-coarse. Both are linear in the input field. Cubic interpolation can
overshoot the input range near sharp gradients; values are not clamped.
Interpolation happens in whatever space the field is in (log10 recommended
for skewed positive variables).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .raster import FieldStack, Grid, StaticField

# Allow target centers to sit up to half an edge cell outside the source hull;
# stencils are clamped to the edge rows/columns (replication).
_HULL_TOL_CELLS = 0.5


@dataclass(frozen=True, eq=False)
class RegridPlan:
    """Per-target-pixel 4-tap interpolation stencils for one source/target pair."""

    source_shape: tuple[int, int]
    target_shape: tuple[int, int]
    row_idx: np.ndarray  # (n_target_lat, 4) int64
    row_w: np.ndarray  # (n_target_lat, 4) float64
    col_idx: np.ndarray  # (n_target_lon, 4) int64
    col_w: np.ndarray  # (n_target_lon, 4) float64


def _keys_weights(t: np.ndarray) -> np.ndarray:
    """Cubic-convolution weights (a=-0.5) for taps at offsets -1, 0, 1, 2."""
    t = np.asarray(t, dtype=np.float64)
    t2 = t * t
    t3 = t2 * t
    w = np.empty(t.shape + (4,))
    w[..., 0] = -0.5 * t3 + t2 - 0.5 * t
    w[..., 1] = 1.5 * t3 - 2.5 * t2 + 1.0
    w[..., 2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t
    w[..., 3] = 0.5 * t3 - 0.5 * t2
    return w


def _fractional_index(src: np.ndarray, dst: np.ndarray, name: str) -> np.ndarray:
    """Map target coordinates to fractional positions in the source index space."""
    n = src.size
    if n < 2:
        raise ValueError(f"source {name} axis needs at least 2 points for interpolation")
    ascending = src[1] > src[0]
    s = src if ascending else src[::-1]
    lo_tol = abs(s[1] - s[0]) * _HULL_TOL_CELLS
    hi_tol = abs(s[-1] - s[-2]) * _HULL_TOL_CELLS
    if np.any(dst < s[0] - lo_tol) or np.any(dst > s[-1] + hi_tol):
        raise ValueError(f"target {name} centers fall outside the source hull")
    u = np.interp(dst, s, np.arange(n, dtype=np.float64))
    if not ascending:
        u = (n - 1) - u
    return u


def _axis_stencil(src: np.ndarray, dst: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    u = _fractional_index(src, dst, name)
    base = np.floor(u).astype(np.int64)
    t = u - base
    # u == n-1 exactly lands on the last node; keep t in [0, 1)
    at_end = base == src.size - 1
    base[at_end] -= 1
    t[at_end] += 1.0
    idx = base[:, None] + np.arange(-1, 3, dtype=np.int64)[None, :]
    np.clip(idx, 0, src.size - 1, out=idx)
    return idx, _keys_weights(t)


def make_bicubic_plan(source: Grid, target: Grid) -> RegridPlan:
    row_idx, row_w = _axis_stencil(source.lat, target.lat, "lat")
    col_idx, col_w = _axis_stencil(source.lon, target.lon, "lon")
    return RegridPlan(
        source_shape=source.shape,
        target_shape=target.shape,
        row_idx=row_idx,
        row_w=row_w,
        col_idx=col_idx,
        col_w=col_w,
    )


def bicubic_regrid(field: np.ndarray, plan: RegridPlan) -> np.ndarray:
    """Interpolate a 2D field at target centers via the planned stencils."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape != plan.source_shape:
        raise ValueError(f"field shape {field.shape} != plan source shape {plan.source_shape}")
    return _kernels.bicubic_apply(field, plan.row_idx, plan.row_w, plan.col_idx, plan.col_w)


def _cell_edges(centers: np.ndarray) -> np.ndarray:
    """Cell edges at midpoints between centers; single-center axes span everything."""
    c = np.asarray(centers, dtype=np.float64)
    if c.size == 1:
        return np.array([-np.inf, np.inf])
    mid = 0.5 * (c[:-1] + c[1:])
    first = c[0] - 0.5 * (c[1] - c[0])
    last = c[-1] + 0.5 * (c[-1] - c[-2])
    return np.concatenate([[first], mid, [last]])


def _axis_cells(fine: np.ndarray, coarse: np.ndarray) -> np.ndarray:
    """Map each fine center to the index of the coarse cell containing it (-1 = none)."""
    ascending = coarse.size == 1 or coarse[1] > coarse[0]
    c = coarse if ascending else coarse[::-1]
    edges = _cell_edges(c)
    idx = np.searchsorted(edges, fine, side="right") - 1
    idx[(idx < 0) | (idx >= c.size)] = -1
    if not ascending:
        inside = idx >= 0
        idx[inside] = c.size - 1 - idx[inside]
    return idx


def _mean_spacing(axis: np.ndarray) -> float:
    return float(np.mean(np.abs(np.diff(axis)))) if axis.size > 1 else np.inf


def block_average(field: np.ndarray, source: Grid, target: Grid) -> np.ndarray:
    """Average the fine samples whose centers fall inside each target cell."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape != source.shape:
        raise ValueError(f"field shape {field.shape} != source grid shape {source.shape}")
    for name in ("lat", "lon"):
        if not _mean_spacing(getattr(source, name)) < _mean_spacing(getattr(target, name)):
            raise ValueError(f"source {name} axis is not strictly finer than the target")
    rows = _axis_cells(source.lat, target.lat)
    cols = _axis_cells(source.lon, target.lon)
    inside = (rows[:, None] >= 0) & (cols[None, :] >= 0)
    cell = rows[:, None] * target.n_lon + cols[None, :]
    flat_cell = cell[inside]
    flat_val = field[inside]
    n_cells = target.n_lat * target.n_lon
    counts = np.bincount(flat_cell, minlength=n_cells)
    if np.any(counts == 0):
        k = int(np.argmax(counts == 0))
        raise ValueError(f"target cell ({k // target.n_lon}, {k % target.n_lon}) contains no fine samples")
    sums = np.bincount(flat_cell, weights=flat_val, minlength=n_cells)
    return (sums / counts).reshape(target.shape)


def regrid_stack(stack: FieldStack, target: Grid, method: str = "bicubic") -> FieldStack:
    """Apply one of the resampling routes to every day of a stack.

    The validity mask does not survive regridding and is dropped.
    """
    if method == "bicubic":
        plan = make_bicubic_plan(stack.grid, target)
        out = np.stack([bicubic_regrid(stack.values[k], plan) for k in range(stack.n_days)])
    elif method == "blockmean":
        out = np.stack([block_average(stack.values[k], stack.grid, target) for k in range(stack.n_days)])
    else:
        raise ValueError(f"unknown regrid method {method!r}")
    return FieldStack(
        values=out,
        dates=stack.dates,
        grid=target,
        space=stack.space,
        mask=None,
        var_name=stack.var_name,
    )


def regrid_field(field: StaticField, target: Grid, method: str = "blockmean") -> StaticField:
    if method == "bicubic":
        plan = make_bicubic_plan(field.grid, target)
        out = bicubic_regrid(field.values, plan)
    elif method == "blockmean":
        out = block_average(field.values, field.grid, target)
    else:
        raise ValueError(f"unknown regrid method {method!r}")
    return StaticField(values=out, grid=target, space=field.space, var_name=field.var_name)
