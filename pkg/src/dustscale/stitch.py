"""Reassemble overlapping predicted patches into a seamless full image.

Each patch contributes only its core (a halo of ``h`` border pixels is
dropped, except on sides touching the image boundary, where the halo is
zero). Cores are tapered with a separable 2D Hann window and added into a
weighted-sum image and a weight image; the final field is their ratio with a
small epsilon guard. Because the updates are additive, the result is
independent of how patches are batched.

Note the Hann endpoints are zero, so the outermost one-pixel frame of the
image collects zero weight and is reported as uncovered in the companion
mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .pipeline import Patch

DEFAULT_EPS = 1e-8
DEFAULT_HALO = 2


@dataclass(frozen=True)
class HaloRule:
    """Four-sided halo widths: ``h`` on interior sides, zero on boundary sides."""

    h: int

    def sides(
        self, y0: int, x0: int, patch_h: int, patch_w: int, image_shape: tuple[int, int]
    ) -> tuple[int, int, int, int]:
        h_img, w_img = image_shape
        top = 0 if y0 == 0 else self.h
        bottom = 0 if y0 + patch_h == h_img else self.h
        left = 0 if x0 == 0 else self.h
        right = 0 if x0 + patch_w == w_img else self.h
        return top, bottom, left, right


def core_region(
    y0: int,
    x0: int,
    patch_h: int,
    patch_w: int,
    image_shape: tuple[int, int],
    h: int,
) -> tuple[int, int, int, int]:
    """Retained core bounds (row0, row1, col0, col1), half-open."""
    h_img, w_img = image_shape
    if y0 < 0 or x0 < 0 or y0 + patch_h > h_img or x0 + patch_w > w_img:
        raise ValueError(f"patch at ({y0}, {x0}) falls outside the {image_shape} image")
    top, bottom, left, right = HaloRule(h).sides(y0, x0, patch_h, patch_w, image_shape)
    r0, r1 = y0 + top, y0 + patch_h - bottom
    c0, c1 = x0 + left, x0 + patch_w - right
    if r1 <= r0 or c1 <= c0:
        raise ValueError(f"halo {h} leaves an empty core for a {patch_h}x{patch_w} patch")
    return r0, r1, c0, c1


def taper_weights(n_row: int, n_col: int) -> np.ndarray:
    """Separable 2D Hann taper over an n_row x n_col core."""
    return np.outer(_kernels.hann_window(n_row), _kernels.hann_window(n_col))


@dataclass(eq=False)
class StitchAccumulator:
    """Weighted-sum image and weight image, updated additively per batch."""

    sums: np.ndarray
    weights: np.ndarray
    eps: float = DEFAULT_EPS

    @classmethod
    def for_image(cls, image_shape: tuple[int, int], eps: float = DEFAULT_EPS) -> "StitchAccumulator":
        if not eps > 0:
            raise ValueError("eps must be > 0")
        return cls(
            sums=np.zeros(image_shape, dtype=np.float64),
            weights=np.zeros(image_shape, dtype=np.float64),
            eps=eps,
        )

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.sums.shape


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 3:
        values, y0s, x0s = batch
        values = np.asarray(values, dtype=np.float64)
        y0s = np.asarray(y0s, dtype=np.int64)
        x0s = np.asarray(x0s, dtype=np.int64)
    else:
        patches: Sequence[Patch] = list(batch)
        if not patches:
            return np.empty((0, 1, 1)), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        values = np.stack([np.asarray(p.values, dtype=np.float64) for p in patches])
        y0s = np.asarray([p.y0 for p in patches], dtype=np.int64)
        x0s = np.asarray([p.x0 for p in patches], dtype=np.int64)
    if values.ndim != 3:
        raise ValueError(f"patch values must stack to (n, h, w), got shape {values.shape}")
    return values, y0s, x0s


def accumulate(acc: StitchAccumulator, batch, h: int = DEFAULT_HALO) -> None:
    """Add a batch of predicted patches into the accumulator.

    ``batch`` is either a sequence of :class:`Patch` or a ``(values, y0s,
    x0s)`` triple with values shaped (n, patch_h, patch_w).
    """
    values, y0s, x0s = _batch_arrays(batch)
    if values.shape[0] == 0:
        return
    ph, pw = values.shape[1:]
    for k in range(values.shape[0]):
        core_region(int(y0s[k]), int(x0s[k]), ph, pw, acc.image_shape, h)
    _kernels.stitch_accumulate(acc.sums, acc.weights, values, y0s, x0s, h)


def finalize(acc: StitchAccumulator) -> tuple[np.ndarray, np.ndarray]:
    """Stitched image ``sums / max(weights, eps)`` plus the coverage mask."""
    image = acc.sums / np.maximum(acc.weights, acc.eps)
    covered = acc.weights >= acc.eps
    return image, covered


def stitch_patches(
    values: np.ndarray,
    y0s: np.ndarray,
    x0s: np.ndarray,
    image_shape: tuple[int, int],
    h: int = DEFAULT_HALO,
    eps: float = DEFAULT_EPS,
) -> tuple[np.ndarray, np.ndarray]:
    """One-shot accumulate + finalize for a full patch set."""
    acc = StitchAccumulator.for_image(image_shape, eps=eps)
    accumulate(acc, (values, y0s, x0s), h=h)
    return finalize(acc)
