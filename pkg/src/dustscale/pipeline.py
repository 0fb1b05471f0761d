"""Seasonal windows, buffered lag context, leakage-safe splits, patch extraction.

Splits are strictly chronological; day-level grouping guarantees that the
patches cut from one day never appear in both the training and validation
streams of an epoch.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta
from typing import Iterable, Sequence

import numpy as np

SEASONS = ("DJF", "MAM", "JJA", "SON")
_SEASON_MONTHS = {
    "DJF": (12, 1, 2),
    "MAM": (3, 4, 5),
    "JJA": (6, 7, 8),
    "SON": (9, 10, 11),
}
BUFFER_DAYS = 45
DEFAULT_SPLIT_RATIOS = (0.8, 0.1, 0.1)


def season_of(day: date) -> str:
    for name, months in _SEASON_MONTHS.items():
        if day.month in months:
            return name
    raise AssertionError("unreachable")


def season_index(season: str) -> int:
    """Integer label 1..4 in DJF, MAM, JJA, SON order."""
    return SEASONS.index(season.upper()) + 1


@dataclass(frozen=True)
class SeasonWindow:
    """Year-agnostic seasonal target days plus the preceding lag-context buffer."""

    season: str
    target_days: tuple[date, ...]
    buffer_days: tuple[date, ...]

    def __post_init__(self):
        if set(self.target_days) & set(self.buffer_days):
            raise ValueError("buffer days must not be prediction targets")


def build_season_windows(dates: Sequence[date], season: str) -> SeasonWindow:
    """Collect all in-season days across years, with a 45-day buffer per block.

    Buffer days directly precede each contiguous seasonal block; they provide
    lag context only and are never prediction targets. Buffer days outside the
    calendar are dropped.
    """
    season = season.upper()
    if season not in _SEASON_MONTHS:
        raise ValueError(f"unknown season {season!r}; expected one of {SEASONS}")
    dates = tuple(dates)
    if not dates:
        raise ValueError("empty calendar")
    deltas = {(b - a).days for a, b in zip(dates, dates[1:])}
    if deltas - {1}:
        raise ValueError("calendar must be contiguous daily dates")
    months = _SEASON_MONTHS[season]
    in_season = [d.month in months for d in dates]
    targets = [d for d, s in zip(dates, in_season) if s]
    if not targets:
        raise ValueError(f"season {season} absent from calendar")
    calendar = set(dates)
    block_starts = [
        d for d, s, prev in zip(dates, in_season, [False] + in_season[:-1]) if s and not prev
    ]
    buffer: set[date] = set()
    for start in block_starts:
        for k in range(1, BUFFER_DAYS + 1):
            day = start - timedelta(days=k)
            if day in calendar:
                buffer.add(day)
    buffer -= set(targets)
    return SeasonWindow(
        season=season, target_days=tuple(targets), buffer_days=tuple(sorted(buffer))
    )


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint chronological train/val/test day lists."""

    train: tuple[date, ...]
    val: tuple[date, ...]
    test: tuple[date, ...]

    def __post_init__(self):
        for name in ("train", "val", "test"):
            days = tuple(getattr(self, name))
            object.__setattr__(self, name, days)
            if any(b <= a for a, b in zip(days, days[1:])):
                raise ValueError(f"{name} days must be strictly increasing")
        roles = (self.train, self.val, self.test)
        total = sum(len(r) for r in roles)
        if len(set(self.train) | set(self.val) | set(self.test)) != total:
            raise ValueError("a day appears in more than one split")
        for earlier, later in ((self.train, self.val), (self.val, self.test), (self.train, self.test)):
            if earlier and later and max(earlier) >= min(later):
                raise ValueError("split roles must be in chronological order")

    def role_of(self) -> dict[date, str]:
        mapping: dict[date, str] = {}
        for role in ("train", "val", "test"):
            for d in getattr(self, role):
                mapping[d] = role
        return mapping


def temporal_split(
    window: SeasonWindow, ratios: Sequence[float] = DEFAULT_SPLIT_RATIOS
) -> SplitAssignment:
    """Contiguous-in-order partition: floor(r0*n) train, floor(r1*n) val, rest test."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive values summing to 1, got {ratios}")
    days = window.target_days
    n = len(days)
    if n < 10:
        raise ValueError(f"need at least 10 target days to split, got {n}")
    n_train = int(np.floor(ratios[0] * n))
    n_val = int(np.floor(ratios[1] * n))
    return SplitAssignment(
        train=days[:n_train],
        val=days[n_train : n_train + n_val],
        test=days[n_train + n_val :],
    )


@dataclass(frozen=True)
class PatchSpec:
    """Sliding-window geometry: 16x16 patches, training stride 8, inference stride 2."""

    height: int = 16
    width: int = 16
    stride: int = 8
    halo: int = 2

    def __post_init__(self):
        if not (1 <= self.stride <= self.width):
            raise ValueError(f"stride must be in [1, {self.width}], got {self.stride}")
        if not (0 <= 2 * self.halo < min(self.height, self.width)):
            raise ValueError(f"halo {self.halo} leaves no patch core")


@dataclass(frozen=True, eq=False)
class Patch:
    """One window cut from a daily image, identified by its top-left pixel."""

    y0: int
    x0: int
    day: date | None
    values: np.ndarray
    channels: tuple[str, ...] | None = None


def patch_origins(image_shape: tuple[int, int], spec: PatchSpec) -> list[tuple[int, int]]:
    """Top-left corners on the stride lattice, row-major, fully inside the image."""
    h_img, w_img = image_shape
    if h_img < spec.height or w_img < spec.width:
        raise ValueError(f"image {image_shape} smaller than patch {spec.height}x{spec.width}")
    ys = range(0, h_img - spec.height + 1, spec.stride)
    xs = range(0, w_img - spec.width + 1, spec.stride)
    return [(y0, x0) for y0 in ys for x0 in xs]


def extract_patches(
    image: np.ndarray, spec: PatchSpec, day: date | None = None
) -> list[Patch]:
    """Cut all on-lattice patches from one image, in deterministic row-major order."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {image.shape}")
    return [
        Patch(y0=y0, x0=x0, day=day, values=image[y0 : y0 + spec.height, x0 : x0 + spec.width].copy())
        for y0, x0 in patch_origins(image.shape, spec)
    ]


def group_by_day(
    patches: Iterable[Patch],
    split: SplitAssignment,
    seed: int,
    train_val_frac: float = 0.0,
) -> dict[str, list[Patch]]:
    """Seeded group-aware shuffling: permute day groups, then patches within a group.

    Every day's patches land in exactly one stream. ``train_val_frac`` > 0
    optionally carves a day-level holdout out of the train role into a
    ``train_val`` stream (off by default).
    """
    if not (0.0 <= train_val_frac < 1.0):
        raise ValueError("train_val_frac must be in [0, 1)")
    role_of = split.role_of()
    rng = np.random.default_rng(seed)
    if train_val_frac > 0 and split.train:
        n_hold = int(np.floor(train_val_frac * len(split.train)))
        held = rng.choice(len(split.train), size=n_hold, replace=False)
        for k in sorted(held):
            role_of[split.train[k]] = "train_val"
    by_day: dict[date, list[Patch]] = {}
    for p in patches:
        if p.day is None or p.day not in role_of:
            raise ValueError(f"patch day {p.day} is outside every split role")
        by_day.setdefault(p.day, []).append(p)
    roles = ("train", "train_val", "val", "test") if train_val_frac > 0 else ("train", "val", "test")
    streams: dict[str, list[Patch]] = {}
    for role in roles:
        days = sorted(d for d in by_day if role_of[d] == role)
        order = rng.permutation(len(days))
        stream: list[Patch] = []
        for k in order:
            group = by_day[days[k]]
            for j in rng.permutation(len(group)):
                stream.append(group[j])
        streams[role] = stream
    return streams
