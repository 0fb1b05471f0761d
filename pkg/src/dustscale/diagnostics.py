"""Spatial and temporal structure diagnostics plus pointwise skill metrics.

Semivariograms are estimated from randomly sampled pixel pairs binned by
great-circle distance and summarized with a spherical model fit (nugget,
partial sill, range). Temporal structure uses ACF/PACF of the daily regional
mean and image-wise lag RMSE / R-squared. Skill metrics cover MAE, RMSE,
R-squared, Nash-Sutcliffe efficiency and the Kling-Gupta decomposition.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .raster import FieldStack, Grid

EARTH_RADIUS_KM = 6371.0088
DEFAULT_N_PAIRS = 30_000
DEFAULT_MAX_KM = 600.0
DEFAULT_N_BINS = 24
DEFAULT_ACF_LAGS = 30
DEFAULT_MAX_LAG = 10


def haversine_km(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Great-circle distance in km on a sphere of radius 6371.0088 km."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(a, dtype=np.float64)) for a in (lat1, lon1, lat2, lon2))
    s_lat = np.sin(0.5 * (lat2 - lat1))
    s_lon = np.sin(0.5 * (lon2 - lon1))
    h = s_lat * s_lat + np.cos(lat1) * np.cos(lat2) * s_lon * s_lon
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


# ---------------------------------------------------------------------------
# pair sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PairSample:
    """Sampled valid pixel pairs (flat raster indices) with their distances."""

    idx_a: np.ndarray
    idx_b: np.ndarray
    dist_km: np.ndarray
    max_km: float
    seed: int | None

    @property
    def n_pairs(self) -> int:
        return self.idx_a.size


def _flat_coords(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    lat2d, lon2d = grid.mesh()
    return lat2d.ravel(), lon2d.ravel()


def sample_pairs(
    grid: Grid,
    mask: np.ndarray | None = None,
    n_pairs: int = DEFAULT_N_PAIRS,
    max_km: float = DEFAULT_MAX_KM,
    seed: int = 0,
) -> PairSample:
    """Uniformly sample distinct valid pixel pairs with distance <= max_km.

    Sampling is without replacement over unordered pairs and deterministic
    under the seed. If fewer than ``n_pairs`` qualifying pairs can be found
    within the attempt budget, the available ones are returned.
    """
    valid = np.flatnonzero(mask.ravel()) if mask is not None else np.arange(grid.n_lat * grid.n_lon)
    if valid.size < 2:
        raise ValueError("need at least 2 valid pixels to sample pairs")
    latf, lonf = _flat_coords(grid)
    rng = np.random.default_rng(seed)
    seen: set[tuple[int, int]] = set()
    out_a: list[int] = []
    out_b: list[int] = []
    out_d: list[float] = []
    batch = max(4 * n_pairs, 1024)
    for _ in range(64):
        if len(out_a) >= n_pairs:
            break
        a = valid[rng.integers(0, valid.size, batch)]
        b = valid[rng.integers(0, valid.size, batch)]
        keep = a != b
        a, b = a[keep], b[keep]
        d = haversine_km(latf[a], lonf[a], latf[b], lonf[b])
        keep = d <= max_km
        a, b, d = a[keep], b[keep], d[keep]
        for pa, pb, pd in zip(a, b, d):
            key = (int(pa), int(pb)) if pa < pb else (int(pb), int(pa))
            if key in seen:
                continue
            seen.add(key)
            out_a.append(int(pa))
            out_b.append(int(pb))
            out_d.append(float(pd))
            if len(out_a) == n_pairs:
                break
    return PairSample(
        idx_a=np.asarray(out_a, dtype=np.int64),
        idx_b=np.asarray(out_b, dtype=np.int64),
        dist_km=np.asarray(out_d, dtype=np.float64),
        max_km=float(max_km),
        seed=seed,
    )


def all_pairs(grid: Grid, mask: np.ndarray | None = None, max_km: float = np.inf) -> PairSample:
    """Every unordered valid pixel pair (small grids only: O(n^2) pairs)."""
    valid = np.flatnonzero(mask.ravel()) if mask is not None else np.arange(grid.n_lat * grid.n_lon)
    if valid.size < 2:
        raise ValueError("need at least 2 valid pixels")
    ia, ib = np.triu_indices(valid.size, k=1)
    a, b = valid[ia], valid[ib]
    latf, lonf = _flat_coords(grid)
    d = haversine_km(latf[a], lonf[a], latf[b], lonf[b])
    keep = d <= max_km
    return PairSample(
        idx_a=a[keep].astype(np.int64),
        idx_b=b[keep].astype(np.int64),
        dist_km=d[keep],
        max_km=float(max_km),
        seed=None,
    )


# ---------------------------------------------------------------------------
# semivariogram
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VariogramEstimate:
    """Binned semivariance (NaN where a bin holds no pairs) with pair counts."""

    bin_edges: np.ndarray
    bin_centers: np.ndarray
    gamma: np.ndarray
    counts: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.bin_centers.size

    def to_dict(self) -> dict:
        return {
            "bin_edges_km": self.bin_edges.tolist(),
            "bin_centers_km": self.bin_centers.tolist(),
            "gamma": [None if np.isnan(g) else float(g) for g in self.gamma],
            "pair_counts": self.counts.tolist(),
        }


def variogram_bins(max_km: float, n_bins: int = DEFAULT_N_BINS) -> np.ndarray:
    """Equal-width bin edges over (0, max_km]."""
    if n_bins < 1 or not max_km > 0:
        raise ValueError("need n_bins >= 1 and max_km > 0")
    return np.linspace(0.0, max_km, n_bins + 1)


def _bin_pairs(pairs: PairSample, bin_edges: np.ndarray):
    idx = np.digitize(pairs.dist_km, bin_edges, right=True) - 1
    keep = (idx >= 0) & (idx < bin_edges.size - 1)
    return pairs.idx_a[keep], pairs.idx_b[keep], idx[keep].astype(np.int64)


def empirical_variogram(
    field: np.ndarray, pairs: PairSample, bin_edges: np.ndarray
) -> VariogramEstimate:
    """Per bin, the mean half squared difference of the paired pixel values."""
    z = np.asarray(field, dtype=np.float64).ravel()
    if pairs.n_pairs == 0:
        raise ValueError("pair sample is empty")
    if pairs.idx_a.max() >= z.size or pairs.idx_b.max() >= z.size:
        raise ValueError("pair indices fall outside the field")
    n_bins = bin_edges.size - 1
    ia, ib, bidx = _bin_pairs(pairs, bin_edges)
    if ia.size == 0:
        raise ValueError("all bins are empty for this pair sample")
    sums, counts = _kernels.variogram_accumulate(z, ia, ib, bidx, n_bins)
    gamma = np.full(n_bins, np.nan)
    nz = counts > 0
    gamma[nz] = sums[nz] / counts[nz]
    return VariogramEstimate(
        bin_edges=bin_edges,
        bin_centers=0.5 * (bin_edges[:-1] + bin_edges[1:]),
        gamma=gamma,
        counts=counts,
    )


def stack_variogram(
    stack: FieldStack,
    pairs: PairSample,
    bin_edges: np.ndarray,
    threads: int = 1,
) -> VariogramEstimate:
    """Daily semivariograms averaged across days (plain mean per bin)."""

    def one_day(k: int) -> VariogramEstimate:
        return empirical_variogram(stack.values[k], pairs, bin_edges)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            daily = list(pool.map(one_day, range(stack.n_days)))
    else:
        daily = [one_day(k) for k in range(stack.n_days)]
    gamma = np.nanmean(np.stack([d.gamma for d in daily]), axis=0)
    return VariogramEstimate(
        bin_edges=bin_edges,
        bin_centers=daily[0].bin_centers,
        gamma=gamma,
        counts=daily[0].counts,
    )


# ---------------------------------------------------------------------------
# spherical model fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SphericalFit:
    """Spherical variogram parameters; sill = nugget + partial sill."""

    nugget: float
    psill: float
    range_km: float
    rmse: float
    pure_nugget: bool = False

    def to_dict(self) -> dict:
        return {
            "nugget": self.nugget,
            "partial_sill": self.psill,
            "range_km": self.range_km,
            "sill": self.nugget + self.psill,
            "rmse": self.rmse,
            "pure_nugget": self.pure_nugget,
        }


def spherical_model(h, nugget: float, psill: float, range_km: float) -> np.ndarray:
    """nugget + psill * (1.5 u - 0.5 u^3) with u = min(h / range, 1)."""
    u = np.minimum(np.asarray(h, dtype=np.float64) / range_km, 1.0)
    return nugget + psill * (1.5 * u - 0.5 * u**3)


def _nnls_2(f: np.ndarray, g: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    """Weighted least squares of g ~ c0 + c * f with both coefficients >= 0."""
    sw = w.sum()
    swf = (w * f).sum()
    swff = (w * f * f).sum()
    swg = (w * g).sum()
    swfg = (w * f * g).sum()

    def sse(c0: float, c: float) -> float:
        r = g - c0 - c * f
        return float((w * r * r).sum())

    candidates: list[tuple[float, float]] = []
    det = sw * swff - swf * swf
    if det > 1e-12 * max(sw * swff, 1.0):
        c0 = (swg * swff - swfg * swf) / det
        c = (sw * swfg - swf * swg) / det
        if c0 >= -1e-12 and c >= -1e-12:
            candidates.append((max(c0, 0.0), max(c, 0.0)))
    candidates.append((max(swg / sw, 0.0), 0.0))
    if swff > 0:
        candidates.append((0.0, max(swfg / swff, 0.0)))
    best = min(candidates, key=lambda p: sse(*p))
    return best[0], best[1], sse(*best)


def fit_spherical(vg: VariogramEstimate) -> SphericalFit:
    """Pair-count-weighted fit of the spherical model to a binned semivariogram.

    The range is located on a 64-point log-spaced grid spanning the bin
    centers with a closed-form non-negative solve for nugget and partial sill
    at each candidate, then refined by golden-section search. Deterministic.
    An all-flat curve is returned as a flagged pure-nugget fit.
    """
    valid = (vg.counts > 0) & np.isfinite(vg.gamma)
    if valid.sum() < 3:
        raise ValueError(f"need at least 3 non-empty bins, got {int(valid.sum())}")
    h = vg.bin_centers[valid]
    g = vg.gamma[valid]
    w = vg.counts[valid].astype(np.float64)
    sw = w.sum()
    if np.ptp(g) <= 1e-12 * max(1.0, np.abs(g).max()):
        return SphericalFit(
            nugget=float(np.average(g, weights=w)),
            psill=0.0,
            range_km=float(h.max()),
            rmse=0.0,
            pure_nugget=True,
        )

    def sse_at(a: float) -> tuple[float, float, float]:
        f = 1.5 * np.minimum(h / a, 1.0) - 0.5 * np.minimum(h / a, 1.0) ** 3
        return _nnls_2(f, g, w)

    a_grid = np.geomspace(h.min(), h.max(), 64)
    sses = np.array([sse_at(a)[2] for a in a_grid])
    k = int(np.argmin(sses))
    lo = np.log(a_grid[max(k - 1, 0)])
    hi = np.log(a_grid[min(k + 1, a_grid.size - 1)])
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1 = sse_at(np.exp(x1))[2]
    f2 = sse_at(np.exp(x2))[2]
    for _ in range(80):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = sse_at(np.exp(x1))[2]
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = sse_at(np.exp(x2))[2]
    a_best = float(np.exp(0.5 * (lo + hi)))
    c0, c, sse = sse_at(a_best)
    return SphericalFit(
        nugget=float(c0),
        psill=float(c),
        range_km=a_best,
        rmse=float(np.sqrt(sse / sw)),
        pure_nugget=False,
    )


# ---------------------------------------------------------------------------
# temporal structure
# ---------------------------------------------------------------------------


def regional_mean_series(stack: FieldStack, mask: np.ndarray | None = None) -> np.ndarray:
    """Daily mean over valid pixels."""
    if mask is None:
        mask = stack.mask
    if mask is not None:
        if not mask.any():
            raise ValueError("mask selects no pixels")
        return stack.values[:, mask].mean(axis=1)
    return stack.values.reshape(stack.n_days, -1).mean(axis=1)


@dataclass(frozen=True, eq=False)
class AcfPacf:
    """Auto- and partial autocorrelations at lags 1..K."""

    lags: np.ndarray
    acf: np.ndarray
    pacf: np.ndarray
    n_obs: int

    def to_dict(self) -> dict:
        return {
            "lags": self.lags.tolist(),
            "acf": self.acf.tolist(),
            "pacf": self.pacf.tolist(),
            "n_obs": self.n_obs,
        }


def sample_acf(series: np.ndarray, nlags: int) -> np.ndarray:
    """Autocorrelations rho(1..nlags) with the biased (1/n) covariance."""
    z = np.asarray(series, dtype=np.float64)
    z = z - z.mean()
    denom = float((z * z).sum())
    if denom <= 0:
        raise ValueError("series has zero variance")
    return np.array([(z[k:] * z[:-k]).sum() / denom for k in range(1, nlags + 1)])


def pacf_durbin_levinson(acf: np.ndarray) -> np.ndarray:
    """Partial autocorrelations from rho(1..K) via the Durbin-Levinson recursion."""
    rho = np.concatenate([[1.0], np.asarray(acf, dtype=np.float64)])
    k_max = rho.size - 1
    pacf = np.empty(k_max)
    phi_prev = np.array([rho[1]])
    pacf[0] = rho[1]
    for k in range(2, k_max + 1):
        num = rho[k] - (phi_prev * rho[k - 1 : 0 : -1]).sum()
        den = 1.0 - (phi_prev * rho[1:k]).sum()
        phi_kk = num / den
        phi = np.empty(k)
        phi[: k - 1] = phi_prev - phi_kk * phi_prev[::-1]
        phi[k - 1] = phi_kk
        phi_prev = phi
        pacf[k - 1] = phi_kk
    return pacf


def acf_pacf(series: np.ndarray, nlags: int = DEFAULT_ACF_LAGS) -> AcfPacf:
    series = np.asarray(series, dtype=np.float64)
    if series.size <= nlags + 1:
        raise ValueError(f"series length {series.size} too short for {nlags} lags")
    acf = sample_acf(series, nlags)
    return AcfPacf(
        lags=np.arange(1, nlags + 1),
        acf=acf,
        pacf=pacf_durbin_levinson(acf),
        n_obs=series.size,
    )


@dataclass(frozen=True, eq=False)
class LagCurve:
    """Image-wise RMSE and R-squared between day t and day t - lag, per lag."""

    lags: np.ndarray
    rmse: np.ndarray
    r2: np.ndarray

    def to_dict(self) -> dict:
        return {"lags": self.lags.tolist(), "rmse": self.rmse.tolist(), "r2": self.r2.tolist()}


def lag_metrics(
    stack: FieldStack, max_lag: int = DEFAULT_MAX_LAG, mask: np.ndarray | None = None
) -> LagCurve:
    """Mean image-wise RMSE(l) and R2(l) over all valid day pairs, l = 1..max_lag."""
    if stack.n_days < max_lag + 1:
        raise ValueError(f"need at least {max_lag + 1} days, got {stack.n_days}")
    if mask is None:
        mask = stack.mask
    vals = stack.values[:, mask] if mask is not None else stack.values.reshape(stack.n_days, -1)
    rmse = np.empty(max_lag)
    r2 = np.empty(max_lag)
    for lag in range(1, max_lag + 1):
        rm, rr = [], []
        for t in range(lag, stack.n_days):
            zt = vals[t]
            zl = vals[t - lag]
            sq = zt - zl
            num = float((sq * sq).sum())
            rm.append(np.sqrt(num / zt.size))
            centered = zt - zt.mean()
            sst = float((centered * centered).sum())
            rr.append(1.0 - num / sst if sst > 0 else np.nan)
        rmse[lag - 1] = np.mean(rm)
        r2[lag - 1] = np.mean(rr)
    return LagCurve(lags=np.arange(1, max_lag + 1), rmse=rmse, r2=r2)


# ---------------------------------------------------------------------------
# pointwise skill metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    """Pixelwise skill scores for one day (or a mean over days).

    R-squared and the Nash-Sutcliffe efficiency share one formula here (both
    are 1 - SSE / SStot with the observed mean as reference) and are reported
    as separate fields as a cross-check. ``degenerate`` marks days where the
    truth (or prediction) had zero variance and correlation-based scores are
    undefined (NaN).
    """

    mae: float
    rmse: float
    r2: float
    nse: float
    kge: float
    r: float
    beta: float
    gamma_ratio: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        def val(x: float):
            return None if np.isnan(x) else float(x)

        return {
            "mae": val(self.mae),
            "rmse": val(self.rmse),
            "r2": val(self.r2),
            "nse": val(self.nse),
            "kge": val(self.kge),
            "r": val(self.r),
            "beta": val(self.beta),
            "gamma_ratio": val(self.gamma_ratio),
            "degenerate": self.degenerate,
        }


def day_metrics(pred: np.ndarray, true: np.ndarray, mask: np.ndarray | None = None) -> MetricsReport:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {true.shape}")
    if mask is not None:
        pred, true = pred[mask], true[mask]
    pred, true = pred.ravel(), true.ravel()
    err = pred - true
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err * err).mean()))
    t_mean = true.mean()
    p_mean = pred.mean()
    t_std = float(true.std())
    p_std = float(pred.std())
    sst = float(((true - t_mean) ** 2).sum())
    degenerate = sst <= 0 or t_std <= 0 or p_std <= 0
    skill = 1.0 - float((err * err).sum()) / sst if sst > 0 else np.nan
    beta = float(p_mean / t_mean) if t_mean != 0 else np.nan
    gamma_ratio = float(p_std / t_std) if t_std > 0 else np.nan
    if t_std > 0 and p_std > 0:
        r = float(((true - t_mean) * (pred - p_mean)).sum() / (true.size * t_std * p_std))
    else:
        r = np.nan
    kge = 1.0 - np.sqrt((r - 1.0) ** 2 + (beta - 1.0) ** 2 + (gamma_ratio - 1.0) ** 2)
    return MetricsReport(
        mae=mae,
        rmse=rmse,
        r2=skill,
        nse=skill,
        kge=float(kge),
        r=r,
        beta=beta,
        gamma_ratio=gamma_ratio,
        degenerate=bool(degenerate),
    )


def eval_metrics(
    pred_stack: FieldStack,
    true_stack: FieldStack,
    mask: np.ndarray | None = None,
) -> tuple[list[MetricsReport], MetricsReport]:
    """Per-day pixelwise metrics plus their mean over days (NaN-aware)."""
    if pred_stack.dates != true_stack.dates:
        raise ValueError("stacks are not aligned on dates")
    if pred_stack.values.shape != true_stack.values.shape:
        raise ValueError("stack shapes differ")
    per_day = [
        day_metrics(pred_stack.values[k], true_stack.values[k], mask)
        for k in range(pred_stack.n_days)
    ]
    fields = ("mae", "rmse", "r2", "nse", "kge", "r", "beta", "gamma_ratio")
    means = {f: float(np.nanmean([getattr(m, f) for m in per_day])) for f in fields}
    aggregate = MetricsReport(degenerate=any(m.degenerate for m in per_day), **means)
    return per_day, aggregate
