"""Command-line interface: one subcommand per pipeline stage.

Every run writes its outputs plus a ``manifest.json`` (parameters, package
version, sha256 of each input file) into the output directory, so reruns with
identical inputs and seeds are byte-identical and reproducible from the
manifest alone. Exit codes: 0 success, 2 validation/usage error, 1 internal
error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import shlex
import sys
from datetime import date
from pathlib import Path

import numpy as np

from . import __version__
from .demo import run_demo
from .diagnostics import (
    acf_pacf,
    eval_metrics,
    fit_spherical,
    lag_metrics,
    regional_mean_series,
    sample_pairs,
    stack_variogram,
    variogram_bins,
)
from .pipeline import PatchSpec, build_season_windows, extract_patches, temporal_split
from .predictor import PredictorSpec, RolloutState, StaticFields, rollout
from .raster import (
    FieldStack,
    Grid,
    Space,
    daterange,
    load_field,
    load_stack,
    save_field,
    save_stack,
)
from .regrid import regrid_field, regrid_stack
from .similarity import wd_report
from .stitch import stitch_patches

ROLLOUT_CONFIG_KEYS = {
    "kind",
    "t_lag",
    "stride",
    "halo",
    "ridge_lambda",
    "clamp_lo",
    "clamp_hi",
    "origin_date",
    "first_year",
    "last_year",
    "command",
    "elevation_scale",
}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_path: Path, command: str, params: dict, inputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "params": params,
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None and Path(p).exists()},
    }
    (out_path.parent / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _dump_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _dump_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _report(path: Path, payload: dict, header: list[str], rows: list[list]) -> None:
    """JSON or CSV depending on the output extension."""
    if path.suffix == ".csv":
        _dump_csv(path, header, rows)
    else:
        _dump_json(path, payload)


def _load_grid(path: Path) -> Grid:
    if path.suffix == ".json":
        meta = json.loads(path.read_text(encoding="utf-8"))
    else:
        meta_path = path.with_name(path.stem + ".meta.json")
        if not meta_path.exists():
            raise FileNotFoundError(meta_path)
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    return Grid(lat=np.asarray(meta["lat"]), lon=np.asarray(meta["lon"]))


def _is_static(path: Path) -> bool:
    meta_path = path.with_name(path.stem + ".meta.json")
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        return meta.get("dates") is None
    raise ValueError(f"missing metadata sidecar {meta_path.name}")


def parse_config(text: str) -> dict:
    """Parse the key=value rollout config; unknown keys are rejected."""
    cfg: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in ROLLOUT_CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if value.startswith(('"', "'")) and value.endswith(value[0]) and len(value) >= 2:
            cfg[key] = value[1:-1]
            continue
        try:
            cfg[key] = int(value)
            continue
        except ValueError:
            pass
        try:
            cfg[key] = float(value)
            continue
        except ValueError:
            pass
        cfg[key] = value
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_regrid(args) -> int:
    src = Path(args.src)
    target = _load_grid(Path(args.target_grid))
    out = Path(args.out)
    if _is_static(src):
        save_field(regrid_field(load_field(src), target, method=args.method), out)
    else:
        stack = load_stack(src)
        save_stack(regrid_stack(stack, target, method=args.method), out)
    _write_manifest(out, "regrid", {"method": args.method, "src": str(src), "out": str(out)}, [src])
    return 0


def _cmd_split(args) -> int:
    if args.src:
        dates = load_stack(Path(args.src)).dates
    elif args.start and args.end:
        dates = daterange(date.fromisoformat(args.start), date.fromisoformat(args.end))
    else:
        raise ValueError("provide --src or both --start and --end")
    ratios = tuple(float(r) for r in args.ratios.split(","))
    window = build_season_windows(dates, args.season)
    split = temporal_split(window, ratios)
    out = Path(args.out)
    _dump_json(
        out,
        {
            "season": window.season,
            "ratios": list(ratios),
            "train": [d.isoformat() for d in split.train],
            "val": [d.isoformat() for d in split.val],
            "test": [d.isoformat() for d in split.test],
            "buffer": [d.isoformat() for d in window.buffer_days],
        },
    )
    _write_manifest(
        out,
        "split",
        {"season": args.season, "ratios": args.ratios, "src": args.src, "start": args.start, "end": args.end},
        [Path(args.src)] if args.src else [],
    )
    return 0


def _cmd_patch(args) -> int:
    src = Path(args.src)
    stack = load_stack(src)
    spec = PatchSpec(stride=args.stride, halo=0)
    days = (
        [date.fromisoformat(d) for d in args.days.split(",")] if args.days else list(stack.dates)
    )
    values, entries = [], []
    for day in days:
        k = stack.index_of(day)
        for patch in extract_patches(stack.values[k], spec, day):
            values.append(patch.values)
            entries.append({"day": day.isoformat(), "y0": patch.y0, "x0": patch.x0})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.save(out, np.stack(values).astype(np.float32))
    _dump_json(
        Path(args.index),
        {
            "image_shape": list(stack.grid.shape),
            "patch_height": spec.height,
            "patch_width": spec.width,
            "stride": spec.stride,
            "lat": stack.grid.lat.tolist(),
            "lon": stack.grid.lon.tolist(),
            "space": stack.space.value,
            "entries": entries,
        },
    )
    _write_manifest(out, "patch", {"stride": args.stride, "src": str(src)}, [src])
    return 0


def _cmd_stitch(args) -> int:
    patches_path = Path(args.patches)
    index_path = Path(args.index)
    values = np.load(patches_path, allow_pickle=False).astype(np.float64)
    index = json.loads(index_path.read_text(encoding="utf-8"))
    entries = index["entries"]
    if values.shape[0] != len(entries):
        raise ValueError(
            f"{values.shape[0]} patch rows but {len(entries)} index entries"
        )
    image_shape = tuple(index["image_shape"])
    by_day: dict[str, list[int]] = {}
    for row, entry in enumerate(entries):
        by_day.setdefault(entry["day"], []).append(row)
    days = sorted(by_day)
    images, masks = [], []
    for day in days:
        rows = by_day[day]
        y0s = np.asarray([entries[r]["y0"] for r in rows], dtype=np.int64)
        x0s = np.asarray([entries[r]["x0"] for r in rows], dtype=np.int64)
        image, covered = stitch_patches(values[rows], y0s, x0s, image_shape, h=args.halo, eps=args.eps)
        images.append(image)
        masks.append(covered)
    out = Path(args.out)
    space = args.space or index.get("space", "raw")
    if "lat" in index and "lon" in index:
        grid = Grid(lat=np.asarray(index["lat"]), lon=np.asarray(index["lon"]))
        stack = FieldStack(
            np.stack(images), tuple(date.fromisoformat(d) for d in days), grid, Space(space)
        )
        save_stack(stack, out)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        np.save(out, np.stack(images).astype(np.float32))
    if args.mask_out:
        np.save(Path(args.mask_out), np.stack(masks))
    _write_manifest(
        out,
        "stitch",
        {"halo": args.halo, "eps": args.eps, "space": space},
        [patches_path, index_path],
    )
    return 0


def _cmd_wd(args) -> int:
    x = load_stack(Path(args.x))
    y = load_stack(Path(args.y))
    report = wd_report(x, y, bins=args.bins, floor_eps=args.floor_eps, threads=args.threads)
    out = Path(args.out)
    rows = [[d.isoformat(), w] for d, w in report.per_day]
    _report(out, report.to_dict(), ["date", "wd"], rows)
    _write_manifest(
        out,
        "wd",
        {"bins": args.bins, "floor_eps": args.floor_eps},
        [Path(args.x), Path(args.y)],
    )
    return 0


def _cmd_variogram(args) -> int:
    src = Path(args.src)
    stack = load_stack(src)
    if args.days:
        stack = stack.select_days([date.fromisoformat(d) for d in args.days.split(",")])
    pairs = sample_pairs(
        stack.grid, mask=stack.mask, n_pairs=args.pairs, max_km=args.max_km, seed=args.seed
    )
    edges = variogram_bins(args.max_km, args.bins)
    vg = stack_variogram(stack, pairs, edges, threads=args.threads)
    payload = {"variogram": vg.to_dict(), "n_pairs": pairs.n_pairs, "seed": args.seed}
    if args.fit:
        payload["fit"] = fit_spherical(vg).to_dict()
    rows = [
        [c, None if np.isnan(g) else g, int(n)]
        for c, g, n in zip(vg.bin_centers, vg.gamma, vg.counts)
    ]
    out = Path(args.out)
    _report(out, payload, ["bin_center_km", "gamma", "pair_count"], rows)
    _write_manifest(
        out,
        "variogram",
        {
            "pairs": args.pairs,
            "max_km": args.max_km,
            "bins": args.bins,
            "seed": args.seed,
            "fit": args.fit,
        },
        [src],
    )
    return 0


def _cmd_acf(args) -> int:
    src = Path(args.src)
    stack = load_stack(src)
    series = regional_mean_series(stack)
    result = acf_pacf(series, args.lags)
    rows = [[int(l), a, p] for l, a, p in zip(result.lags, result.acf, result.pacf)]
    out = Path(args.out)
    _report(out, result.to_dict(), ["lag", "acf", "pacf"], rows)
    _write_manifest(out, "acf", {"lags": args.lags}, [src])
    return 0


def _cmd_lagmetrics(args) -> int:
    src = Path(args.src)
    stack = load_stack(src)
    curve = lag_metrics(stack, args.max_lag)
    rows = [[int(l), r, q] for l, r, q in zip(curve.lags, curve.rmse, curve.r2)]
    out = Path(args.out)
    _report(out, curve.to_dict(), ["lag", "rmse", "r2"], rows)
    _write_manifest(out, "lagmetrics", {"max_lag": args.max_lag}, [src])
    return 0


def _cmd_eval(args) -> int:
    pred = load_stack(Path(args.pred))
    true = load_stack(Path(args.true))
    per_day, aggregate = eval_metrics(pred, true)
    payload = {
        "per_day": [
            {"date": d.isoformat(), **m.to_dict()} for d, m in zip(pred.dates, per_day)
        ],
        "aggregate": aggregate.to_dict(),
    }
    fields = ["mae", "rmse", "r2", "nse", "kge", "r", "beta", "gamma_ratio"]
    rows = [
        [d.isoformat()] + [m.to_dict()[f] for f in fields]
        for d, m in zip(pred.dates, per_day)
    ]
    rows.append(["aggregate"] + [aggregate.to_dict()[f] for f in fields])
    out = Path(args.out)
    _report(out, payload, ["date"] + fields, rows)
    _write_manifest(out, "eval", {}, [Path(args.pred), Path(args.true)])
    return 0


def _cmd_rollout(args) -> int:
    cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
    drivers = load_stack(Path(args.drivers))
    context = load_stack(Path(args.context))
    elevation = load_field(Path(args.elevation))
    t_lag = int(cfg.get("t_lag", 5))
    kind = cfg.get("kind", "ridge_patch")
    clamp = None
    if "clamp_lo" in cfg and "clamp_hi" in cfg:
        clamp = (float(cfg["clamp_lo"]), float(cfg["clamp_hi"]))
    if args.model:
        spec = PredictorSpec.load(Path(args.model))
        if spec.kind != kind:
            raise ValueError(f"model kind {spec.kind!r} does not match config kind {kind!r}")
    else:
        if kind == "ridge_patch":
            raise ValueError("ridge_patch rollout needs --model with fitted weights")
        command = tuple(shlex.split(cfg["command"])) if "command" in cfg else None
        spec = PredictorSpec(
            kind=kind,
            t_lag=t_lag,
            stride=int(cfg.get("stride", 2)),
            halo=int(cfg.get("halo", 2)),
            clamp=clamp,
            command=command,
            workdir=args.workdir,
        )
    statics = StaticFields(
        elevation=elevation.values * float(cfg.get("elevation_scale", 1.0)),
        grid=elevation.grid,
        origin_date=date.fromisoformat(str(cfg.get("origin_date", drivers.dates[0].isoformat()))),
        first_year=int(cfg.get("first_year", drivers.dates[0].year)),
        last_year=int(cfg.get("last_year", drivers.dates[-1].year)),
    )
    state = RolloutState.from_stack(context, spec.t_lag)
    true_context = load_stack(Path(args.true_context)) if args.true_context else None
    predicted = rollout(state, drivers, statics, spec, true_context=true_context)
    out = Path(args.out)
    save_stack(predicted, out)
    _write_manifest(
        out,
        "rollout",
        {"config": str(args.config), "kind": spec.kind, "t_lag": spec.t_lag},
        [Path(args.config), Path(args.drivers), Path(args.context), Path(args.elevation)],
    )
    return 0


def _cmd_demo(args) -> int:
    run_demo(
        Path(args.out),
        seed=args.seed,
        horizon=args.horizon,
        threads=args.threads,
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dustscale", description="Raster downscaling pipeline and diagnostics"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("DOWNSCALE_THREADS", "1")),
        help="worker threads for per-day computations (results are independent of N)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("regrid", help="resample a stack or static field onto a target grid")
    p.add_argument("--method", choices=["bicubic", "blockmean"], required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--target-grid", required=True, help="meta.json (or npy with sidecar) defining the grid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_regrid)

    p = sub.add_parser("split", help="seasonal window + chronological train/val/test split")
    p.add_argument("--season", required=True)
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--src", help="stack whose calendar defines the dates")
    p.add_argument("--start", help="ISO date, with --end, as an alternative to --src")
    p.add_argument("--end")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("patch", help="extract sliding-window patches from a stack")
    p.add_argument("--src", required=True)
    p.add_argument("--stride", type=int, default=8)
    p.add_argument("--days", help="comma-separated ISO dates (default: all days)")
    p.add_argument("--out", required=True)
    p.add_argument("--index", required=True)
    p.set_defaults(func=_cmd_patch)

    p = sub.add_parser("stitch", help="reassemble predicted patches into full images")
    p.add_argument("--patches", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--h", dest="halo", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out")
    p.add_argument("--space", help="value-space tag recorded in the output metadata")
    p.set_defaults(func=_cmd_stitch)

    p = sub.add_parser("wd", help="normalized 1-Wasserstein domain-similarity report")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--floor-eps", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_wd)

    p = sub.add_parser("variogram", help="daily-averaged semivariogram (optionally fitted)")
    p.add_argument("--src", required=True)
    p.add_argument("--pairs", type=int, default=30000)
    p.add_argument("--max-km", type=float, default=600.0)
    p.add_argument("--bins", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", help="comma-separated ISO dates (default: all days)")
    p.add_argument("--fit", action="store_true", help="add a spherical model fit")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_variogram)

    p = sub.add_parser("acf", help="ACF/PACF of the daily regional mean")
    p.add_argument("--src", required=True)
    p.add_argument("--lags", type=int, default=30)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_acf)

    p = sub.add_parser("lagmetrics", help="image-wise RMSE and R2 between lagged days")
    p.add_argument("--src", required=True)
    p.add_argument("--max-lag", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_lagmetrics)

    p = sub.add_parser("eval", help="pointwise skill metrics of a prediction stack")
    p.add_argument("--pred", required=True)
    p.add_argument("--true", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("rollout", help="autoregressive out-of-data prediction")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--drivers", required=True, help="coarse driver stack on the fine grid")
    p.add_argument("--context", required=True, help="stack whose last t_lag days seed the buffer")
    p.add_argument("--elevation", required=True)
    p.add_argument("--model", help="fitted model.json (required for ridge_patch)")
    p.add_argument("--true-context", help="overlap mode: feed true fields back instead")
    p.add_argument("--workdir", help="exchange directory for external predictors")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rollout)

    p = sub.add_parser("demo", help="synthetic end-to-end pipeline with metric summary")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=10)
    p.set_defaults(func=_cmd_demo)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"dustscale {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level CLI guard
        print(f"dustscale {args.command}: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
