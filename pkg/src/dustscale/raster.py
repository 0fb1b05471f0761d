"""Grid and day-stack containers, log transform, train-only standardization, file I/O.

Stacks are stored on disk as NPY v1.0 little-endian float32 payloads with a
UTF-8 JSON sidecar ``<name>.meta.json`` carrying dates, coordinates and the
value-space tag. An optional boolean ``<name>.mask.npy`` sidecar marks valid
pixels; non-finite values are rejected unless confined to masked-out pixels.
All in-memory computation is float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from datetime import date, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_FLOOR_EPS = 1e-6


class Space(str, Enum):
    """Which transform chain the values are in: raw -> log10 -> standardized."""

    RAW = "raw"
    LOG10 = "log10"
    STANDARDIZED = "standardized"


def _as_readonly_f64(values, ndim: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Grid:
    """Regular lat/lon grid; axes are strictly monotone (either direction)."""

    lat: np.ndarray
    lon: np.ndarray

    def __post_init__(self):
        for name in ("lat", "lon"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            if arr.ndim != 1 or arr.size < 1:
                raise ValueError(f"{name} must be a non-empty 1D array")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            if arr.size > 1:
                d = np.diff(arr)
                if not (np.all(d > 0) or np.all(d < 0)):
                    raise ValueError(f"{name} must be strictly monotone")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_lat(self) -> int:
        return self.lat.size

    @property
    def n_lon(self) -> int:
        return self.lon.size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.lat.size, self.lon.size)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """2D latitude and longitude planes aligned with field pixels."""
        lat2d = np.repeat(self.lat[:, None], self.n_lon, axis=1)
        lon2d = np.repeat(self.lon[None, :], self.n_lat, axis=0)
        return lat2d, lon2d

    def matches(self, other: "Grid") -> bool:
        return np.array_equal(self.lat, other.lat) and np.array_equal(self.lon, other.lon)


def _check_mask(mask, shape) -> np.ndarray | None:
    if mask is None:
        return None
    m = np.asarray(mask)
    if m.dtype != np.bool_:
        raise ValueError("mask must be boolean")
    if m.shape != shape:
        raise ValueError(f"mask shape {m.shape} does not match grid shape {shape}")
    m = m.copy()
    m.setflags(write=False)
    return m


@dataclass(frozen=True, eq=False)
class FieldStack:
    """day x lat x lon array of one variable plus calendar and grid metadata.

    Immutable after construction; transforms return new stacks.
    """

    values: np.ndarray
    dates: tuple[date, ...]
    grid: Grid
    space: Space = Space.RAW
    mask: np.ndarray | None = None
    var_name: str = "value"

    def __post_init__(self):
        values = _as_readonly_f64(self.values, 3, "values")
        object.__setattr__(self, "values", values)
        dates = tuple(self.dates)
        if not dates:
            raise ValueError("stack needs at least one day")
        if any(not isinstance(d, date) for d in dates):
            raise ValueError("dates must be datetime.date instances")
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ValueError("dates must be strictly increasing")
        object.__setattr__(self, "dates", dates)
        if values.shape != (len(dates),) + self.grid.shape:
            raise ValueError(
                f"values shape {values.shape} does not match "
                f"{len(dates)} dates x grid {self.grid.shape}"
            )
        mask = _check_mask(self.mask, self.grid.shape)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "space", Space(self.space))
        bad = ~np.isfinite(values)
        if bad.any():
            if mask is None:
                raise ValueError("non-finite values present and no validity mask given")
            if bad[:, mask].any():
                raise ValueError("non-finite values at pixels marked valid")

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def index_of(self, day: date) -> int:
        try:
            return self.dates.index(day)
        except ValueError:
            raise KeyError(f"{day.isoformat()} not in stack") from None

    def day_indices(self, days: Iterable[date]) -> list[int]:
        return [self.index_of(d) for d in days]

    def select_days(self, days: Sequence[date]) -> "FieldStack":
        idx = self.day_indices(days)
        return replace(self, values=self.values[idx], dates=tuple(days))

    def with_values(self, values: np.ndarray, space: Space | None = None) -> "FieldStack":
        return replace(self, values=values, space=self.space if space is None else space)


@dataclass(frozen=True, eq=False)
class StaticField:
    """Time-invariant 2D field (e.g. elevation) on a grid."""

    values: np.ndarray
    grid: Grid
    space: Space = Space.RAW
    var_name: str = "static"

    def __post_init__(self):
        values = _as_readonly_f64(self.values, 2, "values")
        if values.shape != self.grid.shape:
            raise ValueError(f"values shape {values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("static field contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "space", Space(self.space))


@dataclass(frozen=True)
class StandardizationParams:
    """Pooled mean/std in log10 space, fitted on training days only."""

    mean: float
    std: float
    floor_eps: float = DEFAULT_FLOOR_EPS

    def __post_init__(self):
        if not (self.std > 0):
            raise ValueError(f"std must be > 0, got {self.std}")
        if not (self.floor_eps > 0):
            raise ValueError(f"floor_eps must be > 0, got {self.floor_eps}")


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


def to_log10(stack: FieldStack, floor_eps: float = DEFAULT_FLOOR_EPS) -> FieldStack:
    """log10 with a positive floor: v -> log10(max(v, floor_eps))."""
    if stack.space is not Space.RAW:
        raise ValueError(f"expected raw-space stack, got {stack.space.value}")
    if not floor_eps > 0:
        raise ValueError("floor_eps must be > 0")
    vals = np.log10(np.maximum(stack.values, floor_eps))
    return stack.with_values(vals, Space.LOG10)


def from_log10(stack: FieldStack) -> FieldStack:
    if stack.space is not Space.LOG10:
        raise ValueError(f"expected log10-space stack, got {stack.space.value}")
    return stack.with_values(np.power(10.0, stack.values), Space.RAW)


def fit_standardizer(
    stack: FieldStack,
    train_days: Iterable[int],
    floor_eps: float = DEFAULT_FLOOR_EPS,
    extra_stacks: Sequence[FieldStack] = (),
) -> StandardizationParams:
    """Pool all pixels of the training days and fit population mean/std.

    ``extra_stacks`` lets callers pool several variables into one shared
    parameter set; every stack contributes the same train-day indices.
    """
    idx = sorted(set(int(i) for i in train_days))
    if not idx:
        raise ValueError("train day set is empty")
    pools = []
    for s in (stack, *extra_stacks):
        if s.space is not Space.LOG10:
            raise ValueError(f"expected log10-space stack, got {s.space.value}")
        if max(idx) >= s.n_days or min(idx) < 0:
            raise ValueError("train day index out of range")
        vals = s.values[idx]
        pools.append(vals[:, s.mask].ravel() if s.mask is not None else vals.ravel())
    pooled = np.concatenate(pools)
    mean = float(pooled.mean())
    std = float(pooled.std())  # population convention (divide by N)
    if std <= 0:
        raise ValueError("pooled training pixels have zero variance")
    return StandardizationParams(mean=mean, std=std, floor_eps=floor_eps)


def standardize(
    stack: FieldStack, params: StandardizationParams, direction: str = "forward"
) -> FieldStack:
    """Forward: (v - mean) / std on log10 values. Inverse: exact round-trip."""
    if direction == "forward":
        if stack.space is not Space.LOG10:
            raise ValueError(f"forward standardization expects log10 space, got {stack.space.value}")
        vals = (stack.values - params.mean) / params.std
        return stack.with_values(vals, Space.STANDARDIZED)
    if direction == "inverse":
        if stack.space is not Space.STANDARDIZED:
            raise ValueError(f"inverse standardization expects standardized space, got {stack.space.value}")
        vals = stack.values * params.std + params.mean
        return stack.with_values(vals, Space.LOG10)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def _sidecar_paths(path: Path) -> tuple[Path, Path]:
    return path.with_name(path.stem + ".meta.json"), path.with_name(path.stem + ".mask.npy")


def save_stack(stack: FieldStack, path: str | Path) -> Path:
    """Write float32 NPY payload plus the JSON metadata sidecar."""
    path = Path(path)
    if path.suffix != ".npy":
        path = path.with_suffix(".npy")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, stack.values.astype("<f4"))
    meta_path, mask_path = _sidecar_paths(path)
    meta = {
        "dates": [d.isoformat() for d in stack.dates],
        "lat": stack.grid.lat.tolist(),
        "lon": stack.grid.lon.tolist(),
        "space": stack.space.value,
        "var_name": stack.var_name,
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if stack.mask is not None:
        np.save(mask_path, stack.mask)
    return path


def load_stack(path: str | Path) -> FieldStack:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    meta_path, mask_path = _sidecar_paths(path)
    if not meta_path.exists():
        raise ValueError(f"missing metadata sidecar {meta_path.name}")
    try:
        values = np.load(path, allow_pickle=False)
    except Exception as exc:
        raise ValueError(f"malformed array file {path.name}: {exc}") from exc
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed sidecar {meta_path.name}: {exc}") from exc
    if values.ndim != 3:
        raise ValueError(f"expected a 3D day x lat x lon payload, got shape {values.shape}")
    dates = tuple(date.fromisoformat(d) for d in meta["dates"])
    grid = Grid(lat=np.asarray(meta["lat"]), lon=np.asarray(meta["lon"]))
    expected = (len(dates),) + grid.shape
    if values.shape != expected:
        raise ValueError(
            f"shape mismatch: sidecar declares {expected}, payload has {values.shape}"
        )
    mask = None
    if mask_path.exists():
        mask = np.load(mask_path, allow_pickle=False).astype(bool)
    return FieldStack(
        values=values.astype(np.float64),
        dates=dates,
        grid=grid,
        space=Space(meta.get("space", "raw")),
        mask=mask,
        var_name=meta.get("var_name", "value"),
    )


def save_field(field: StaticField, path: str | Path) -> Path:
    path = Path(path)
    if path.suffix != ".npy":
        path = path.with_suffix(".npy")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, field.values.astype("<f4"))
    meta_path, _ = _sidecar_paths(path)
    meta = {
        "dates": None,
        "lat": field.grid.lat.tolist(),
        "lon": field.grid.lon.tolist(),
        "space": field.space.value,
        "var_name": field.var_name,
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_field(path: str | Path) -> StaticField:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    meta_path, _ = _sidecar_paths(path)
    if not meta_path.exists():
        raise ValueError(f"missing metadata sidecar {meta_path.name}")
    try:
        values = np.load(path, allow_pickle=False)
    except Exception as exc:
        raise ValueError(f"malformed array file {path.name}: {exc}") from exc
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if values.ndim != 2:
        raise ValueError(f"expected a 2D payload, got shape {values.shape}")
    grid = Grid(lat=np.asarray(meta["lat"]), lon=np.asarray(meta["lon"]))
    if values.shape != grid.shape:
        raise ValueError(f"shape mismatch: sidecar declares {grid.shape}, payload has {values.shape}")
    return StaticField(
        values=values.astype(np.float64),
        grid=grid,
        space=Space(meta.get("space", "raw")),
        var_name=meta.get("var_name", "static"),
    )


def daterange(start: date, end: date) -> tuple[date, ...]:
    """Inclusive daily calendar from start to end."""
    if end < start:
        raise ValueError("end precedes start")
    n = (end - start).days + 1
    return tuple(start + timedelta(days=k) for k in range(n))
