"""Command-line entry point.

Subcommands: simulate, correct, evaluate, gradcheck, ablate. Each takes an
optional JSON ``--config``, a ``--seed`` and an ``--out`` directory, and
writes the fully resolved config next to its outputs. Exit codes: 0 on
success, 1 when a check fails, 2 on invalid arguments or inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from rscorrect.corrector import CorrectorConfig, correct, evaluate
from rscorrect.experiments import (
    ABLATION_HEADER,
    ABLATION_SCHEMA,
    GRADCHECK_OPS,
    GRADCHECK_STEP,
    GRADCHECK_TOL,
    PRESETS,
    ExperimentSpec,
    gradcheck_suite,
    preset,
    run_experiment,
)
from rscorrect.io import read_pfm, write_bundle, write_frame, write_json, write_pfm
from rscorrect.motion import FieldBundle
from rscorrect.opt import write_loss_trace
from rscorrect.sim import make_scene, make_sequence

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2

METRICS_SCHEMA = "metrics/v1"
METRICS_HEADER = ["schema", "psnr", "ssim", "psnr_interior", "ssim_interior"]
GRADCHECK_SCHEMA = "gradcheck/v1"
GRADCHECK_HEADER = ["schema", "op", "trial", "group", "rel_error", "ok"]

SIMULATE_DEFAULTS = {"n": 5, "readout_ratio": 0.8, "scene": {"kind": "smooth", "size": 64}}


class InvalidInput(Exception):
    """Bad configuration or input files (exit code 2)."""


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInput(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InvalidInput("config must be a JSON object")
    return cfg


def _out_dir(args, required=True) -> Path | None:
    if args.out is None:
        if required:
            raise InvalidInput("--out is required for this command")
        return None
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidInput(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise InvalidInput(f"output directory {out} is not writable")
    return out


def _merge(defaults: dict, overrides: dict) -> dict:
    out = dict(defaults)
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = _merge(SIMULATE_DEFAULTS, _load_config(args.config))
    cfg["seed"] = args.seed
    out = _out_dir(args)
    n = int(cfg["n"])
    s = float(cfg["readout_ratio"])
    scene_kw = dict(cfg["scene"])
    scene_kw.setdefault("n_frames", n)
    scene = make_scene(args.seed, **scene_kw)
    pairs = make_sequence(scene, n, s)
    for i, pair in enumerate(pairs):
        write_frame(out / f"frame_{i:04d}_rs", pair.rs)
        write_frame(out / f"frame_{i:04d}_gs", pair.gs)
        write_pfm(out / f"gt_field_{i:04d}.pfm", pair.gt_bundle.fields[0])
    scene_info = scene.to_json()
    scene_info.update({"readout_ratio": s, "n": n, "seed": args.seed,
                       "frame_times": [p.t_mid for p in pairs]})
    write_json(out / "scene.json", scene_info)
    write_json(out / "config.json", cfg)
    print(f"wrote {n} RS/GS pairs to {out}")
    return EXIT_OK


def _frame_path(root: Path, i: int, kind: str) -> Path:
    return root / f"frame_{i:04d}_{kind}.pfm"


def cmd_correct(args) -> int:
    cfg = _load_config(args.config)
    input_dir = args.input or cfg.get("input")
    if input_dir is None:
        raise InvalidInput("correct needs an input directory (positional or config 'input')")
    input_dir = Path(input_dir)
    corr = CorrectorConfig.from_dict({**cfg.get("corrector", {}), "seed": args.seed})
    available = sorted(input_dir.glob("frame_*_rs.pfm"))
    if not available:
        raise InvalidInput(f"no frame_XXXX_rs.pfm files in {input_dir}")
    n = len(available)
    center = cfg.get("center")
    if center is None:
        center = n // 2
    center = int(center)
    first = {3: center - 1, 2: center, 1: center}[corr.frames]
    indices = list(range(first, first + corr.frames))
    if indices[0] < 0 or indices[-1] >= n:
        raise InvalidInput(f"frames {indices} out of range for {n} input frames")
    out = _out_dir(args)

    frames = [read_pfm(_frame_path(input_dir, i, "rs")) for i in indices]
    gs_path = _frame_path(input_dir, center, "gs")
    gs = read_pfm(gs_path) if gs_path.exists() else None
    gt_path = input_dir / f"gt_field_{center:04d}.pfm"
    gt = FieldBundle.single(read_pfm(gt_path, channels=2)) if gt_path.exists() else None
    if corr.mode == "fit" and gs is None:
        raise InvalidInput(f"fit mode needs {gs_path}")
    if corr.mode == "oracle" and gt is None:
        raise InvalidInput(f"oracle mode needs {gt_path}")

    result = correct(frames, corr, gs_truth=gs if corr.mode == "fit" else None, gt_bundle=gt)
    write_frame(out / "gs_estimate", result.gs_estimate)
    for k, bundle in enumerate(result.bundles):
        write_bundle(out / f"bundle_{k:02d}", bundle)
    write_loss_trace(out / "loss_trace.csv", result.loss_trace)
    if gs is not None:
        # metrics from the lossless file, as written
        est = read_pfm(out / "gs_estimate.pfm")
        m = evaluate(est, gs)
        _write_csv(out / "metrics.csv", METRICS_HEADER,
                   [[METRICS_SCHEMA] + [m[k] for k in METRICS_HEADER[1:]]])
        print(f"psnr {m['psnr']:.2f} dB  ssim {m['ssim']:.4f}")
    resolved = {"input": str(input_dir), "center": center, "frame_indices": indices,
                "corrector": corr.to_dict()}
    write_json(out / "config.json", resolved)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    est_path = args.estimate or cfg.get("estimate")
    truth_path = args.truth or cfg.get("truth")
    if est_path is None or truth_path is None:
        raise InvalidInput("evaluate needs an estimate and a truth PFM")
    try:
        est = read_pfm(est_path)
        truth = read_pfm(truth_path)
    except OSError as exc:
        raise InvalidInput(str(exc)) from exc
    m = evaluate(est, truth, margin=int(cfg.get("margin", 3)))
    row = [METRICS_SCHEMA] + [m[k] for k in METRICS_HEADER[1:]]
    out = _out_dir(args, required=False)
    if out is not None:
        _write_csv(out / "metrics.csv", METRICS_HEADER, [row])
        write_json(out / "config.json", {"estimate": str(est_path), "truth": str(truth_path),
                                         "margin": int(cfg.get("margin", 3)), "seed": args.seed})
    for k in METRICS_HEADER[1:]:
        print(f"{k} {m[k]:.6f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = {"trials": 50, "ops": list(GRADCHECK_OPS), "h": GRADCHECK_STEP, "tol": GRADCHECK_TOL,
           "perturb": 0.0}
    cfg.update(_load_config(args.config))
    cfg["seed"] = args.seed
    if int(cfg["trials"]) < 0:
        raise InvalidInput("trials must be >= 0")
    records = gradcheck_suite(args.seed, int(cfg["trials"]), tuple(cfg["ops"]), float(cfg["h"]),
                              float(cfg["tol"]), float(cfg["perturb"]))
    ok = all(r.ok for r in records)
    out = _out_dir(args, required=False)
    if out is not None:
        rows = [[GRADCHECK_SCHEMA, r.op, r.trial, r.group, r.rel_error, r.ok] for r in records]
        _write_csv(out / "gradcheck.csv", GRADCHECK_HEADER, rows)
        write_json(out / "config.json", cfg)
    worst: dict = {}
    for r in records:
        worst[r.op] = max(worst.get(r.op, 0.0), r.rel_error)
    for op, err in worst.items():
        print(f"{op:18s} max rel error {err:.3e}")
    print("gradcheck", "passed" if ok else "FAILED", f"({len(records)} comparisons)")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _experiment_spec(cfg: dict, seed: int) -> ExperimentSpec:
    cfg = dict(cfg)
    n_seeds = int(cfg.pop("n_seeds", 5))
    seeds = cfg.pop("seeds", None)
    if seeds is None:
        seeds = [seed + i for i in range(n_seeds)]
    name = cfg.pop("preset", None)
    if name is not None:
        if name not in PRESETS:
            raise InvalidInput(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
        spec = preset(name, seeds)
        if cfg:
            spec = ExperimentSpec.from_dict(_merge(spec.to_dict(), cfg))
        return spec
    cfg.setdefault("name", "custom")
    return ExperimentSpec.from_dict({**cfg, "seeds": seeds})


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    if not cfg:
        raise InvalidInput("ablate needs --config with a preset or an experiment spec")
    spec = _experiment_spec(cfg, args.seed)
    out = _out_dir(args)
    if (out / "ablation.csv").exists():
        raise InvalidInput(f"{out} already holds an ablation run; use a fresh directory")
    if args.jobs < 1:
        raise InvalidInput("--jobs must be >= 1")
    rows = run_experiment(spec, jobs=args.jobs)
    table = [[ABLATION_SCHEMA] + [r[k] for k in ABLATION_HEADER[1:]] for r in rows]
    _write_csv(out / "ablation.csv", ABLATION_HEADER, table)
    # wall times vary run to run, so they stay out of the CSV
    write_json(out / "timing.json", {"runtime_s": [r["runtime"] for r in rows]})
    write_json(out / "config.json", {**spec.to_dict(), "seed": args.seed})
    for r in rows:
        print(f"cell {r['cell']:3d} seed {r['seed']} {r['warper']:11s} M={r['m']} "
              f"frames={r['frames']} s={r['readout_ratio']}/{r['test_ratio']}: {r['psnr']:.2f} dB")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rscorrect", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=_seed, default=0, help="64-bit seed (default 0)")
        p.add_argument("--out", help="output directory")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
        return p

    p = common(sub.add_parser("simulate", help="render RS/GS frame pairs and exact fields"))
    p.set_defaults(func=cmd_simulate)
    p = common(sub.add_parser("correct", help="correct RS frames from a simulate directory"))
    p.add_argument("input", nargs="?", help="directory written by simulate")
    p.set_defaults(func=cmd_correct)
    p = common(sub.add_parser("evaluate", help="PSNR/SSIM of an estimate against the truth"))
    p.add_argument("estimate", nargs="?")
    p.add_argument("truth", nargs="?")
    p.set_defaults(func=cmd_evaluate)
    p = common(sub.add_parser("gradcheck", help="finite-difference gradient suite"))
    p.set_defaults(func=cmd_gradcheck)
    p = common(sub.add_parser("ablate", help="run an ablation grid"), jobs=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "jobs"):
        args.jobs = 1
    try:
        return args.func(args)
    except (InvalidInput, ValueError, TypeError, KeyError) as exc:
        print(f"rscorrect {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
