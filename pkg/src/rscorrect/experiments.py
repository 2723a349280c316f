"""Scene suites, the finite-difference gradient suite and ablation grids.

Every experiment is a pure function of its spec and seed. Ablation cells
can run in a process pool; rows always come back in grid order.
"""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from rscorrect.corrector import CorrectorConfig, correct, evaluate
from rscorrect.motion import FieldBundle
from rscorrect.opt import charbonnier, tv_loss
from rscorrect.sim import gt_displacement, make_scene, render_gs, render_rs
from rscorrect.warp import (
    AttentionParams,
    ada_msa_grad,
    ada_msa_warp,
    backward_warp,
    backward_warp_grad,
    dfw_forward_warp,
    dfw_grad,
)

# ---------------------------------------------------------------------------
# scene suites

SUITES = {
    # smooth global motion: translation |v| <= 3 px/interval plus a small rotation
    "standard": dict(kind="smooth", max_speed=3.0),
    # background and a disk moving differently, finer texture
    "two_layer": dict(kind="two_layer", max_speed=4.0, texture_sigma=1.2, texture_smooth=0.5),
}

# RS frames are rendered at t = 1, 2, 3; the target is the middle one
FRAME_TIMES = (1.0, 2.0, 3.0)
TARGET_TIME = 2.0


def suite_scene(suite: str, seed: int, size: int = 64):
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    return make_scene(seed, size=size, **SUITES[suite])


def select_frames(frames, n: int):
    """Pick ``n`` of three consecutive frames: all, (centre, next) or centre."""
    if n == 3:
        return list(frames)
    if n == 2:
        return list(frames[1:])
    if n == 1:
        return [frames[1]]
    raise ValueError("frame count must be 1, 2 or 3")


@dataclass
class Case:
    frames: list
    gs: np.ndarray
    gt_bundle: FieldBundle


def make_case(suite: str, seed: int, test_ratio: float = 0.8, size: int = 64) -> Case:
    """Three RS frames rendered at ``test_ratio`` plus truth at the target instant."""
    scene = suite_scene(suite, seed, size)
    frames = [render_rs(scene, t, test_ratio) for t in FRAME_TIMES]
    return Case(frames, render_gs(scene, TARGET_TIME), gt_displacement(scene, TARGET_TIME, test_ratio))


# ---------------------------------------------------------------------------
# gradient checks

GRADCHECK_OPS = ("backward_warp", "dfw_forward_warp", "ada_msa_warp", "charbonnier", "tv_loss")
GRADCHECK_STEP = 1e-6
GRADCHECK_TOL = 1e-4
KINK_MARGIN = 1e-3


def relative_error(analytic, numeric) -> float:
    """``max|a - n| / max(max|n|, 1e-8)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def central_difference(fn, x: np.ndarray, h: float = GRADCHECK_STEP) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` at ``x`` (x is restored)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fn()
        flat[i] = old - h
        fm = fn()
        flat[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return grad


def _away_from_integers(v, margin=KINK_MARGIN):
    frac = v - np.round(v)
    return np.all(np.abs(frac) > margin)


def _random_field(rng, h, w, scale=1.5):
    """Random field whose sample coordinates stay clear of integer kinks."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    while True:
        f = rng.uniform(-scale, scale, size=(h, w, 2))
        if _away_from_integers(xs + f[..., 0]) and _away_from_integers(ys + f[..., 1]):
            return f


def _check_backward(rng, h):
    hh, ww = rng.integers(3, 9, size=2)
    frame = rng.random((hh, ww, int(rng.choice([1, 3]))))
    field = _random_field(rng, hh, ww)
    up = rng.standard_normal(frame.shape)
    analytic = backward_warp_grad(frame, field, up)
    numeric = central_difference(lambda: float(np.sum(up * backward_warp(frame, field))), field, h)
    return {"field": (analytic, numeric)}


def _splat_weight(field) -> np.ndarray:
    """Accumulated (unclamped) splat weight per target pixel."""
    hh, ww = field.shape[:2]
    ys, xs = np.mgrid[0:hh, 0:ww].astype(np.float64)
    tx = (xs + field[..., 0]).ravel()
    ty = (ys + field[..., 1]).ravel()
    x0 = np.floor(tx).astype(np.intp)
    y0 = np.floor(ty).astype(np.intp)
    acc = np.zeros(hh * ww)
    for dy in (0, 1):
        for dx in (0, 1):
            cx, cy = x0 + dx, y0 + dy
            wgt = (1 - np.abs(tx - cx)) * (1 - np.abs(ty - cy))
            ok = (cx >= 0) & (cx < ww) & (cy >= 0) & (cy < hh)
            acc += np.bincount((cy * ww + cx)[ok], wgt[ok], minlength=hh * ww)
    return acc.reshape(hh, ww)


def _check_dfw(rng, h):
    hh, ww = rng.integers(3, 9, size=2)
    frame = rng.random((hh, ww, int(rng.choice([1, 3]))))
    while True:
        field = _random_field(rng, hh, ww, scale=1.2)
        wsum = _splat_weight(field)
        # keep accumulated weights clear of the hole threshold and the validity clamp
        if np.all((wsum == 0) | (wsum > 1e-3)) and np.all(np.abs(wsum - 1.0) > 1e-4):
            break
    up = rng.standard_normal(frame.shape)
    up_v = rng.standard_normal(frame.shape[:2])

    def fn():
        out = dfw_forward_warp(frame, field)
        return float(np.sum(up * out.frame) + np.sum(up_v * out.validity))

    analytic = dfw_grad(frame, field, up, up_v)
    return {"field": (analytic, central_difference(fn, field, h))}


def _check_ada(rng, h):
    hh, ww = rng.integers(3, 7, size=2)
    c = int(rng.choice([1, 3]))
    m = int(rng.integers(1, 5))
    heads = int(rng.choice([1, 2]))
    dim = heads * int(rng.integers(1, 3))
    frame = rng.random((hh, ww, c))
    params = AttentionParams.random(rng, c, dim, heads, scale=0.7)
    ys, xs = np.mgrid[0:hh, 0:ww].astype(np.float64)
    while True:
        fields = rng.uniform(-1.5, 1.5, size=(m, hh, ww, 2))
        weights = rng.uniform(0.5, 1.5, size=(m, hh, ww))
        eff = fields * weights[..., None]
        if _away_from_integers(xs + eff[..., 0]) and _away_from_integers(ys + eff[..., 1]):
            break
    bundle = FieldBundle(fields, weights)
    up = rng.standard_normal(frame.shape)
    analytic = ada_msa_grad(frame, bundle, params, up)

    def fn():
        return float(np.sum(up * ada_msa_warp(frame, bundle, params).frame))

    out = {"fields": (analytic["fields"], central_difference(fn, bundle.fields, h)),
           "weights": (analytic["weights"], central_difference(fn, bundle.weights, h))}
    for name in ("wq", "wk", "wv", "wo"):
        out[name] = (analytic[name], central_difference(fn, getattr(params, name), h))
    return out


def _check_charbonnier(rng, h):
    hh, ww = rng.integers(2, 9, size=2)
    a = rng.random((hh, ww, 3))
    b = rng.random((hh, ww, 3))
    _, analytic = charbonnier(a, b)
    return {"a": (analytic, central_difference(lambda: charbonnier(a, b)[0], a, h))}


def _check_tv(rng, h):
    hh, ww = rng.integers(2, 9, size=2)
    fields = rng.standard_normal((int(rng.integers(1, 4)), hh, ww, 2))
    _, analytic = tv_loss(fields)
    return {"fields": (analytic, central_difference(lambda: tv_loss(fields)[0], fields, h))}


_CHECKS = {
    "backward_warp": _check_backward,
    "dfw_forward_warp": _check_dfw,
    "ada_msa_warp": _check_ada,
    "charbonnier": _check_charbonnier,
    "tv_loss": _check_tv,
}


@dataclass
class GradcheckRecord:
    op: str
    trial: int
    group: str
    rel_error: float
    ok: bool


def gradcheck_suite(seed: int = 0, trials: int = 50, ops=GRADCHECK_OPS, h: float = GRADCHECK_STEP,
                    tol: float = GRADCHECK_TOL, perturb: float = 0.0) -> list[GradcheckRecord]:
    """Analytic vs central-difference gradients on randomized small instances.

    ``perturb`` scales every analytic gradient by ``1 + perturb`` before the
    comparison; it exists so the failure path can be exercised.
    """
    records = []
    for op in ops:
        if op not in _CHECKS:
            raise ValueError(f"unknown op {op!r}")
        rng = np.random.default_rng([seed, GRADCHECK_OPS.index(op)])
        for trial in range(trials):
            for group, (analytic, numeric) in _CHECKS[op](rng, h).items():
                err = relative_error(np.asarray(analytic) * (1.0 + perturb), numeric)
                records.append(GradcheckRecord(op, trial, group, err, err < tol))
    return records


# ---------------------------------------------------------------------------
# ablation grids

ABLATION_SCHEMA = "ablation/v1"
ABLATION_HEADER = ["schema", "cell", "suite", "seed", "warper", "m", "frames", "mode",
                   "readout_ratio", "test_ratio", "psnr", "ssim", "psnr_interior",
                   "ssim_interior", "final_loss"]
GRID_KEYS = ("warper", "m", "frames", "readout_ratio", "test_ratio")


@dataclass
class ExperimentSpec:
    """A grid of corrector configurations evaluated on a scene suite.

    ``grid`` maps any of ``warper``, ``m``, ``frames``, ``readout_ratio``
    and ``test_ratio`` to a list of values. ``test_ratio`` is the readout
    ratio the frames are rendered with; when absent it equals the ratio the
    corrector assumes.
    """

    name: str
    suite: str = "standard"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    grid: dict = field(default_factory=dict)
    base: dict = field(default_factory=dict)
    size: int = 64

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ValueError(f"unknown suite {self.suite!r}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        unknown = set(self.grid) - set(GRID_KEYS)
        if unknown:
            raise ValueError(f"unknown grid keys {sorted(unknown)}")
        if any(len(v) == 0 for v in self.grid.values()):
            raise ValueError("grid axes must be non-empty")
        CorrectorConfig.from_dict(dict(self.base))  # validate early

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(**d)

    def cells(self) -> list[dict]:
        """Grid cells in deterministic order: grid axes outer, seeds inner."""
        keys = [k for k in GRID_KEYS if k in self.grid]
        out = []
        for values in itertools.product(*(self.grid[k] for k in keys)):
            combo = dict(zip(keys, values))
            test_ratio = combo.pop("test_ratio", None)
            cfg = CorrectorConfig.from_dict({**self.base, **combo}).to_dict()
            if test_ratio is None:
                test_ratio = cfg["readout_ratio"]
            for seed in self.seeds:
                out.append({"suite": self.suite, "seed": int(seed), "size": self.size,
                            "config": cfg, "test_ratio": float(test_ratio)})
        return out


def preset(name: str, seeds=(0, 1, 2, 3, 4)) -> ExperimentSpec:
    """The three ablations: warpers, field count, frame count and readout ratio."""
    seeds = list(seeds)
    if name == "warpers":
        return ExperimentSpec(name, "two_layer", seeds, {"warper": ["awm", "dfw", "backward", "fusion-only"]})
    if name == "fields":
        return ExperimentSpec(name, "two_layer", seeds, {"m": [9, 2]}, {"warper": "awm"})
    if name == "frames":
        return ExperimentSpec(name, "standard", seeds, {"frames": [3, 2, 1]}, {"warper": "awm"})
    if name == "readout":
        return ExperimentSpec(name, "standard", seeds, {"test_ratio": [0.8, 0.2]},
                              {"warper": "awm", "mode": "self", "readout_ratio": 0.8})
    raise ValueError(f"unknown preset {name!r}; choose from warpers, fields, frames, readout")


PRESETS = ("warpers", "fields", "frames", "readout")


def run_cell(cell: dict) -> dict:
    """Run one grid cell; returns the metrics row plus its wall time."""
    config = CorrectorConfig.from_dict(dict(cell["config"]))
    case = make_case(cell["suite"], cell["seed"], cell["test_ratio"], cell.get("size", 64))
    frames = select_frames(case.frames, config.frames)
    start = time.perf_counter()
    result = correct(frames, config, gs_truth=case.gs if config.mode == "fit" else None,
                     gt_bundle=case.gt_bundle)
    runtime = time.perf_counter() - start
    metrics = evaluate(result.gs_estimate, case.gs)
    return {
        "suite": cell["suite"], "seed": cell["seed"], "warper": config.warper, "m": config.m,
        "frames": config.frames, "mode": config.mode, "readout_ratio": config.readout_ratio,
        "test_ratio": cell["test_ratio"], **metrics, "final_loss": result.final_loss,
        "runtime": runtime,
    }


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> list[dict]:
    """All cells of ``spec``; rows in grid order regardless of ``jobs``."""
    cells = spec.cells()
    if jobs <= 1:
        rows = [run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_cell, cells))
    for i, row in enumerate(rows):
        row["cell"] = i
    return rows


def summarize(rows, key: str, metric: str = "psnr") -> dict:
    """Mean of ``metric`` grouped by ``key`` (insertion order kept)."""
    groups: dict = {}
    for row in rows:
        groups.setdefault(row[key], []).append(row[metric])
    return {k: float(np.mean(v)) for k, v in groups.items()}
