"""Domain-shift diagnostics via the normalized 1-Wasserstein distance.

For each day both fields are log10-transformed and min-max normalized with
shared per-day bounds, so distances land in [0, 1]. The histogram estimator
approximates the CDF-difference integral with B equal-width bins; its error
against the exact sorted-sample distance is bounded by 1/B.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date

import numpy as np

from .raster import DEFAULT_FLOOR_EPS, FieldStack, Space

DEFAULT_BINS = 256


@dataclass(frozen=True)
class JointNormBounds:
    """Shared per-day min/max of the log10 values over the valid pixel set."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"degenerate bounds: hi {self.hi} <= lo {self.lo}")


def joint_normalize(
    x_day: np.ndarray,
    y_day: np.ndarray,
    mask: np.ndarray | None = None,
    floor_eps: float = DEFAULT_FLOOR_EPS,
) -> tuple[np.ndarray, np.ndarray, JointNormBounds]:
    """Common log-min-max normalization of two same-day raw fields.

    Returns the two 1D normalized sample vectors (valid pixels in row-major
    order) and the shared bounds. Values are clipped to [0, 1].
    """
    x_day = np.asarray(x_day, dtype=np.float64)
    y_day = np.asarray(y_day, dtype=np.float64)
    if x_day.shape != y_day.shape:
        raise ValueError(f"field shapes differ: {x_day.shape} vs {y_day.shape}")
    if mask is not None:
        xs, ys = x_day[mask], y_day[mask]
    else:
        xs, ys = x_day.ravel(), y_day.ravel()
    if xs.size == 0:
        raise ValueError("valid pixel set is empty")
    bx = np.log10(np.maximum(xs, floor_eps))
    by = np.log10(np.maximum(ys, floor_eps))
    lo = min(bx.min(), by.min())
    hi = max(bx.max(), by.max())
    bounds = JointNormBounds(lo=float(lo), hi=float(hi))
    scale = bounds.hi - bounds.lo
    xn = np.clip((bx - bounds.lo) / scale, 0.0, 1.0)
    yn = np.clip((by - bounds.lo) / scale, 0.0, 1.0)
    return xn, yn, bounds


def wasserstein_exact(a: np.ndarray, b: np.ndarray) -> float:
    """Exact 1-Wasserstein distance between equal-size empirical samples."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("sample sets must be non-empty")
    if a.size != b.size:
        raise ValueError(f"sample sizes differ: {a.size} vs {b.size}")
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def wasserstein_hist(a: np.ndarray, b: np.ndarray, bins: int = DEFAULT_BINS) -> float:
    """Histogram estimate on [0, 1]: mean absolute cumulative-histogram gap."""
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("sample sets must be non-empty")
    for name, s in (("a", a), ("b", b)):
        if s.min() < 0.0 or s.max() > 1.0:
            raise ValueError(f"samples {name} fall outside [0, 1]; normalize first")
    ca = np.cumsum(np.histogram(a, bins=bins, range=(0.0, 1.0))[0]) / a.size
    cb = np.cumsum(np.histogram(b, bins=bins, range=(0.0, 1.0))[0]) / b.size
    return float(np.sum(np.abs(ca - cb)) / bins)


@dataclass(frozen=True)
class WdReport:
    """Per-day and pooled normalized Wasserstein distances."""

    per_day: tuple[tuple[date, float], ...]
    mean: float
    p10: float
    p90: float
    pooled: float
    bins: int

    def to_dict(self) -> dict:
        return {
            "per_day": [{"date": d.isoformat(), "wd": w} for d, w in self.per_day],
            "mean": self.mean,
            "p10": self.p10,
            "p90": self.p90,
            "pooled": self.pooled,
            "bins": self.bins,
        }


def _nearest_rank(sorted_vals: np.ndarray, q: float) -> float:
    k = max(1, math.ceil(q * sorted_vals.size))
    return float(sorted_vals[k - 1])


def wd_report(
    x_stack: FieldStack,
    y_stack: FieldStack,
    mask: np.ndarray | None = None,
    bins: int = DEFAULT_BINS,
    floor_eps: float = DEFAULT_FLOOR_EPS,
    threads: int = 1,
) -> WdReport:
    """Daily and pooled domain-similarity distances between two raw stacks.

    The pooled figure concatenates the per-day normalized samples of every
    day (normalization stays per-day) and measures one distance on the pools.
    """
    if x_stack.dates != y_stack.dates:
        raise ValueError("stacks are not aligned on dates")
    if not x_stack.grid.matches(y_stack.grid):
        raise ValueError("stacks are not on the same grid")
    for s in (x_stack, y_stack):
        if s.space is not Space.RAW:
            raise ValueError(f"wd_report expects raw-space stacks, got {s.space.value}")
    if mask is None:
        if x_stack.mask is not None and y_stack.mask is not None:
            mask = x_stack.mask & y_stack.mask
        else:
            mask = x_stack.mask if x_stack.mask is not None else y_stack.mask

    def one_day(k: int) -> tuple[float, np.ndarray, np.ndarray]:
        xn, yn, _ = joint_normalize(x_stack.values[k], y_stack.values[k], mask, floor_eps)
        return wasserstein_hist(xn, yn, bins), xn, yn

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_day, range(x_stack.n_days)))
    else:
        results = [one_day(k) for k in range(x_stack.n_days)]

    daily = np.array([r[0] for r in results])
    pooled_x = np.concatenate([r[1] for r in results])
    pooled_y = np.concatenate([r[2] for r in results])
    ordered = np.sort(daily)
    return WdReport(
        per_day=tuple(zip(x_stack.dates, (float(v) for v in daily))),
        mean=float(daily.mean()),
        p10=_nearest_rank(ordered, 0.10),
        p90=_nearest_rank(ordered, 0.90),
        pooled=wasserstein_hist(pooled_x, pooled_y, bins),
        bins=bins,
    )
