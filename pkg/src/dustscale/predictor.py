"""Predictor contract, desk-scale reference predictors, autoregressive rollout.

A predictor maps a per-day input bundle (same-day coarse driver on the fine
grid, static layers, calendar scalars and the last T_lag fine-resolution
fields) to a fine-grid field. Patch-based kinds predict 16x16 windows with
stride 2 and reassemble them through the halo+Hann stitcher; trivial kinds
(persistence, coarse driver) return a full field directly.

The ``external`` kind talks to a user-supplied command through a file
exchange: channel-stacked input patches are written as
``inputs_<date>.npy`` with a ``patches_<date>.json`` index, the command is
invoked with the input and output paths appended to its argv, and the
predicted patches are read back from ``preds_<date>.npy`` and stitched.
"""

from __future__ import annotations

import json
import subprocess
from collections import deque
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .pipeline import PatchSpec, patch_origins, season_index, season_of
from .raster import FieldStack, Grid
from .stitch import stitch_patches

KINDS = ("persistence", "coarse_driver", "ridge_patch", "external")
DEFAULT_T_LAG = 5
FIXED_CHANNELS = ("driver", "elevation", "lat", "lon", "season", "days", "year")


def context_channel_names(t_lag: int) -> tuple[str, ...]:
    """Lag-field channel names, oldest first (lag<t_lag> .. lag1)."""
    return tuple(f"lag{t_lag - j}" for j in range(t_lag))


def soft_clip(values: np.ndarray, lo: float, hi: float, linear_frac: float = 0.8) -> np.ndarray:
    """Sigmoid-shaped squashing into (lo, hi): identity over the central
    ``linear_frac`` of the range, smooth tanh saturation outside."""
    if not hi > lo:
        raise ValueError("clamp bounds must satisfy hi > lo")
    if not (0.0 < linear_frac < 1.0):
        raise ValueError("linear_frac must be in (0, 1)")
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    u = (np.asarray(values, dtype=np.float64) - mid) / half
    c = linear_frac
    au = np.abs(u)
    squashed = np.sign(u) * (c + (1.0 - c) * np.tanh((au - c) / (1.0 - c)))
    out = np.where(au <= c, u, squashed)
    return mid + half * out


@dataclass(frozen=True, eq=False)
class StaticFields:
    """Time-invariant predictor inputs plus the calendar reference points."""

    elevation: np.ndarray
    grid: Grid
    origin_date: date
    first_year: int
    last_year: int

    def norm_year(self, day: date) -> float:
        if self.last_year == self.first_year:
            return 0.0
        return (day.year - self.first_year) / (self.last_year - self.first_year)

    def days_since_origin(self, day: date) -> int:
        return (day - self.origin_date).days


@dataclass(frozen=True, eq=False)
class PredictorInput:
    """All channels for predicting one day, pixel-aligned on the fine grid."""

    driver: np.ndarray
    elevation: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    season_idx: int
    days_since_origin: int
    norm_year: float
    context: np.ndarray  # (t_lag, H, W), oldest to newest
    day: date | None = None

    def __post_init__(self):
        shape = np.asarray(self.driver).shape
        for name in ("elevation", "lat", "lon"):
            if np.asarray(getattr(self, name)).shape != shape:
                raise ValueError(f"channel {name} is not aligned with the driver grid {shape}")
        ctx = np.asarray(self.context)
        if ctx.ndim != 3 or ctx.shape[1:] != shape:
            raise ValueError(f"context must be (t_lag, {shape[0]}, {shape[1]}), got {ctx.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return np.asarray(self.driver).shape

    def channel_names(self) -> tuple[str, ...]:
        return FIXED_CHANNELS + context_channel_names(np.asarray(self.context).shape[0])

    def channel_stack(self) -> np.ndarray:
        h, w = self.shape

        def const(v) -> np.ndarray:
            return np.full((h, w), float(v))

        planes = [
            np.asarray(self.driver, dtype=np.float64),
            np.asarray(self.elevation, dtype=np.float64),
            np.asarray(self.lat, dtype=np.float64),
            np.asarray(self.lon, dtype=np.float64),
            const(self.season_idx),
            const(self.days_since_origin),
            const(self.norm_year),
        ]
        planes.extend(np.asarray(f, dtype=np.float64) for f in self.context)
        return np.stack(planes)


@dataclass(frozen=True)
class PredictorSpec:
    """A predictor kind plus its hyperparameters and (fitted) coefficients."""

    kind: str
    t_lag: int = DEFAULT_T_LAG
    stride: int = 2
    halo: int = 2
    ridge_lambda: float = 1e-3
    clamp: tuple[float, float] | None = None
    weights: tuple[float, ...] | None = None
    intercept: float = 0.0
    channel_names: tuple[str, ...] | None = None
    command: tuple[str, ...] | None = None
    workdir: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}; expected one of {KINDS}")
        if self.t_lag < 1:
            raise ValueError("t_lag must be >= 1")
        if self.clamp is not None and not self.clamp[1] > self.clamp[0]:
            raise ValueError("clamp bounds must satisfy hi > lo")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "t_lag": self.t_lag,
            "stride": self.stride,
            "halo": self.halo,
            "ridge_lambda": self.ridge_lambda,
            "clamp": list(self.clamp) if self.clamp is not None else None,
            "weights": list(self.weights) if self.weights is not None else None,
            "intercept": self.intercept,
            "channel_names": list(self.channel_names) if self.channel_names else None,
            "command": list(self.command) if self.command else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorSpec":
        return cls(
            kind=d["kind"],
            t_lag=int(d.get("t_lag", DEFAULT_T_LAG)),
            stride=int(d.get("stride", 2)),
            halo=int(d.get("halo", 2)),
            ridge_lambda=float(d.get("ridge_lambda", 1e-3)),
            clamp=tuple(d["clamp"]) if d.get("clamp") else None,
            weights=tuple(d["weights"]) if d.get("weights") else None,
            intercept=float(d.get("intercept", 0.0)),
            channel_names=tuple(d["channel_names"]) if d.get("channel_names") else None,
            command=tuple(d["command"]) if d.get("command") else None,
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "PredictorSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# ridge reference predictor
# ---------------------------------------------------------------------------


def fit_ridge_patch(
    inputs: np.ndarray,
    targets: np.ndarray,
    ridge_lambda: float,
    t_lag: int = DEFAULT_T_LAG,
    stride: int = 2,
    halo: int = 2,
    clamp: tuple[float, float] | None = None,
    channel_names: tuple[str, ...] | None = None,
) -> PredictorSpec:
    """Closed-form ridge fit of a per-pixel-shared linear map on channel values.

    ``inputs`` is (n_patches, n_channels, h, w) and ``targets`` is
    (n_patches, h, w). The intercept is unpenalized (channels and target are
    centered before the normal-equations solve), so lambda -> inf drives the
    coefficients to zero and predictions to the training mean.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim != 4 or targets.ndim != 3 or inputs.shape[0] != targets.shape[0]:
        raise ValueError("inputs must be (n, c, h, w) with matching (n, h, w) targets")
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")
    n, c = inputs.shape[0], inputs.shape[1]
    x = inputs.transpose(0, 2, 3, 1).reshape(-1, c)
    y = targets.reshape(-1)
    if x.shape[0] < c:
        raise ValueError(f"need at least {c} training pixels, got {x.shape[0]}")
    x_mean = x.mean(axis=0)
    y_mean = y.mean()
    xc = x - x_mean
    yc = y - y_mean
    gram = xc.T @ xc
    if ridge_lambda == 0.0 and np.linalg.cond(gram) > 1e12:
        raise ValueError("singular design matrix at lambda=0; use a ridge_lambda > 0")
    coef = np.linalg.solve(gram + ridge_lambda * np.eye(c), xc.T @ yc)
    intercept = float(y_mean - coef @ x_mean)
    return PredictorSpec(
        kind="ridge_patch",
        t_lag=t_lag,
        stride=stride,
        halo=halo,
        ridge_lambda=ridge_lambda,
        clamp=clamp,
        weights=tuple(float(w) for w in coef),
        intercept=intercept,
        channel_names=channel_names,
    )


def _linear_patch_predictions(channels: np.ndarray, spec: PredictorSpec):
    coef = np.asarray(spec.weights, dtype=np.float64)
    if coef.size != channels.shape[0]:
        raise ValueError(f"spec has {coef.size} weights but input has {channels.shape[0]} channels")
    pspec = PatchSpec(stride=spec.stride, halo=spec.halo)
    origins = patch_origins(channels.shape[1:], pspec)
    preds = np.empty((len(origins), pspec.height, pspec.width))
    for k, (y0, x0) in enumerate(origins):
        window = channels[:, y0 : y0 + pspec.height, x0 : x0 + pspec.width]
        preds[k] = np.tensordot(coef, window, axes=([0], [0])) + spec.intercept
    return preds, origins


def _patch_index_payload(origins, day: date, spec: PredictorSpec, image_shape, names) -> dict:
    return {
        "image_shape": list(image_shape),
        "patch_height": PatchSpec(stride=spec.stride, halo=spec.halo).height,
        "patch_width": PatchSpec(stride=spec.stride, halo=spec.halo).width,
        "stride": spec.stride,
        "halo": spec.halo,
        "channels": list(names),
        "entries": [{"day": day.isoformat(), "y0": y0, "x0": x0} for y0, x0 in origins],
    }


def _external_patch_predictions(inp: PredictorInput, spec: PredictorSpec):
    if not spec.command:
        raise ValueError("external predictor needs a command")
    if spec.workdir is None:
        raise ValueError("external predictor needs a workdir")
    if inp.day is None:
        raise ValueError("external predictor needs the input day for file naming")
    workdir = Path(spec.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    pspec = PatchSpec(stride=spec.stride, halo=spec.halo)
    channels = inp.channel_stack()
    origins = patch_origins(inp.shape, pspec)
    stacked = np.stack(
        [channels[:, y0 : y0 + pspec.height, x0 : x0 + pspec.width] for y0, x0 in origins]
    )
    tag = inp.day.isoformat()
    inputs_path = workdir / f"inputs_{tag}.npy"
    preds_path = workdir / f"preds_{tag}.npy"
    index_path = workdir / f"patches_{tag}.json"
    np.save(inputs_path, stacked.astype(np.float32))
    index_path.write_text(
        json.dumps(
            _patch_index_payload(origins, inp.day, spec, inp.shape, inp.channel_names()),
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    subprocess.run([*spec.command, str(inputs_path), str(preds_path)], check=True)
    preds = np.load(preds_path, allow_pickle=False).astype(np.float64)
    if preds.shape != (len(origins), pspec.height, pspec.width):
        raise ValueError(
            f"external predictor returned shape {preds.shape}, "
            f"expected {(len(origins), pspec.height, pspec.width)}"
        )
    return preds, origins


def predict_day(
    inp: PredictorInput, spec: PredictorSpec, return_coverage: bool = False
):
    """Predict the full fine-grid field for one day.

    Patch-based kinds (ridge_patch, external) run stride-``spec.stride``
    16x16 patch prediction followed by halo+Hann stitching; their outputs are
    squashed into ``spec.clamp`` when bounds are set. Trivial kinds return
    their source field unchanged.
    """
    if spec.kind == "persistence":
        field2d, covered = np.array(inp.context[-1], dtype=np.float64), None
    elif spec.kind == "coarse_driver":
        field2d, covered = np.array(inp.driver, dtype=np.float64), None
    elif spec.kind in ("ridge_patch", "external"):
        if spec.kind == "ridge_patch":
            if spec.weights is None:
                raise ValueError("ridge_patch spec has no fitted weights")
            preds, origins = _linear_patch_predictions(inp.channel_stack(), spec)
        else:
            preds, origins = _external_patch_predictions(inp, spec)
        if spec.clamp is not None:
            preds = soft_clip(preds, *spec.clamp)
        y0s = np.asarray([o[0] for o in origins], dtype=np.int64)
        x0s = np.asarray([o[1] for o in origins], dtype=np.int64)
        field2d, covered = stitch_patches(preds, y0s, x0s, inp.shape, h=spec.halo)
    else:  # pragma: no cover - guarded by PredictorSpec
        raise ValueError(f"unknown predictor kind {spec.kind!r}")
    if covered is None:
        covered = np.ones(field2d.shape, dtype=bool)
    return (field2d, covered) if return_coverage else field2d


# ---------------------------------------------------------------------------
# autoregressive rollout
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class RolloutState:
    """Ring buffer of the last t_lag fine-resolution fields, oldest first."""

    fields: deque
    current_date: date

    @classmethod
    def from_stack(cls, stack: FieldStack, t_lag: int) -> "RolloutState":
        if stack.n_days < t_lag:
            raise ValueError(f"need {t_lag} context days, stack has {stack.n_days}")
        buf = deque(
            (np.array(stack.values[k]) for k in range(stack.n_days - t_lag, stack.n_days)),
            maxlen=t_lag,
        )
        return cls(fields=buf, current_date=stack.dates[-1])

    @property
    def t_lag(self) -> int:
        return self.fields.maxlen

    def push(self, field2d: np.ndarray, day: date) -> None:
        self.fields.append(np.asarray(field2d, dtype=np.float64))
        self.current_date = day

    def context_array(self) -> np.ndarray:
        return np.stack(list(self.fields))


def rollout(
    state: RolloutState,
    drivers: FieldStack,
    statics: StaticFields,
    spec: PredictorSpec,
    true_context: FieldStack | None = None,
) -> FieldStack:
    """Day-by-day prediction over the driver horizon.

    In autoregressive mode each prediction re-enters the context buffer; when
    ``true_context`` is given (overlap period), the buffer is refilled with
    the true fields instead and predictions are one-step-ahead only.
    """
    if state.t_lag != spec.t_lag:
        raise ValueError(f"state holds {state.t_lag} fields but spec.t_lag is {spec.t_lag}")
    if not drivers.grid.matches(statics.grid):
        raise ValueError("drivers and static fields are on different grids")
    expected = state.current_date + timedelta(days=1)
    for d in drivers.dates:
        if d != expected:
            raise ValueError(f"driver gap: expected {expected.isoformat()}, got {d.isoformat()}")
        expected += timedelta(days=1)
    lat2d, lon2d = statics.grid.mesh()
    outputs = np.empty((drivers.n_days,) + statics.grid.shape)
    for k, day in enumerate(drivers.dates):
        inp = PredictorInput(
            driver=drivers.values[k],
            elevation=statics.elevation,
            lat=lat2d,
            lon=lon2d,
            season_idx=season_index(season_of(day)),
            days_since_origin=statics.days_since_origin(day),
            norm_year=statics.norm_year(day),
            context=state.context_array(),
            day=day,
        )
        outputs[k] = predict_day(inp, spec)
        if true_context is not None:
            state.push(true_context.values[true_context.index_of(day)], day)
        else:
            state.push(outputs[k], day)
    return FieldStack(
        values=outputs,
        dates=drivers.dates,
        grid=statics.grid,
        space=drivers.space,
        var_name=drivers.var_name,
    )
