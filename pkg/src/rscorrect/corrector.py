"""Coarse-to-fine rolling-shutter correction by direct field optimization.

One to three consecutive RS frames go in. Each frame gets its own field
bundle that warps it to the middle-scanline instant of the centre frame;
the warped frames are fused by a validity-weighted mean. Bundles (and the
attention projections for the attention warper) are refined with Adam on
a box pyramid, coarse level first.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from rscorrect.image import as_frame, build_pyramid, psnr, sample_bilinear, ssim
from rscorrect.motion import (
    FieldBundle,
    block_match_flow,
    downsample_bundle,
    init_bundle,
    upsample_bundle,
)
from rscorrect.opt import AdamState, LossConfig, adam_step, charbonnier, tv_loss
from rscorrect.sim import TimeOffsetMap
from rscorrect.warp import (
    AttentionParams,
    ada_msa_vjp,
    ada_msa_warp,
    backward_warp,
    backward_warp_grad,
    dfw_forward_warp,
    dfw_grad,
)

MODES = ("oracle", "fit", "self")
WARPERS = ("awm", "dfw", "backward", "fusion-only")
FUSION_EPS = 1e-6
INTERIOR_MARGIN = 3


@dataclass
class CorrectorConfig:
    m: int = 9
    levels: int = 3
    iterations: int = 200  # at the coarsest level, halved on every finer level
    mode: str = "fit"
    warper: str = "awm"
    frames: int = 3
    readout_ratio: float = 0.8
    heads: int = 2
    lr: float = 0.1
    min_lr: float = 1e-3
    attention_lr: float = 1e-3
    weight_lr: float = 0.1
    jitter: float = 0.5
    flow_radius: int = 3
    flow_patch: int = 2
    flow_stride: int = 4
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    paper_lr: float = 2e-4  # reference only: learning rate of the trained network

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.m < 1:
            raise ValueError("M must be >= 1")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.warper not in WARPERS:
            raise ValueError(f"warper must be one of {WARPERS}, got {self.warper!r}")
        if self.frames not in (1, 2, 3):
            raise ValueError("frames must be 1, 2 or 3")
        if not 0.0 <= self.readout_ratio <= 1.0:
            raise ValueError("readout_ratio must be in [0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    def level_iterations(self, level: int) -> int:
        """Iterations at pyramid ``level`` (0 = full resolution)."""
        return self.iterations >> (self.levels - 1 - level)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CorrectorConfig":
        return cls(**d)


@dataclass
class CorrectionResult:
    gs_estimate: np.ndarray
    bundles: list[FieldBundle]
    loss_trace: list[tuple]
    wall_time: float
    attention: AttentionParams | None = None
    warped: list[np.ndarray] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return float(self.loss_trace[-1][5]) if self.loss_trace else float("nan")


def center_index(n_frames: int) -> int:
    return 1 if n_frames == 3 else 0


def fuse(outputs, validities, fallback):
    """Validity-weighted mean; pixels with no valid contribution take ``fallback``."""
    num = sum(v[..., None] * o for o, v in zip(outputs, validities))
    den = sum(validities)
    ok = den > FUSION_EPS
    est = np.where(ok[..., None], num / np.where(ok, den, 1.0)[..., None], fallback)
    return est, den, ok


def invert_field(field, iterations: int = 20) -> np.ndarray:
    """Forward (source-grid) field from a backward field by fixed-point iteration."""
    h, w = field.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    inv = -field.copy()
    for _ in range(iterations):
        inv = -sample_bilinear(field, xs + inv[..., 0], ys + inv[..., 1])
    return inv


class _Problem:
    """Warping + fusion objective for one pyramid level."""

    def __init__(self, frames, config: CorrectorConfig, target=None):
        self.frames = frames
        self.config = config
        self.target = target
        self.center = center_index(len(frames))

    def warp(self, k, bundle, att, need_grad=False):
        """Warped frame, validity and (optionally) a pullback to parameter gradients."""
        frame = self.frames[k]
        w = self.config.warper
        if w == "backward":
            field = bundle.modulated()[0]
            out = backward_warp(frame, field)

            def pullback(g_out, g_val):
                g = backward_warp_grad(frame, field, g_out)
                return {"fields": g[None] * bundle.weights[..., None]}

            return out, np.ones(frame.shape[:2]), pullback
        if w == "dfw":
            field = bundle.modulated()[0]
            out = dfw_forward_warp(frame, field)

            def pullback(g_out, g_val):
                g = dfw_grad(frame, field, g_out, g_val)
                return {"fields": g[None] * bundle.weights[..., None]}

            return out.frame, out.validity, pullback
        if need_grad:
            out, vjp = ada_msa_vjp(frame, bundle, att)
            return out.frame, out.validity, lambda g_out, g_val: vjp(g_out)
        out = ada_msa_warp(frame, bundle, att)
        return out.frame, out.validity, None

    def evaluate(self, bundles, att, need_grad=True):
        cfg = self.config
        eps = cfg.loss.eps_charbonnier
        warped = [self.warp(k, b, att, need_grad) for k, b in enumerate(bundles)]
        outs = [o for o, _, _ in warped]
        vals = [v for _, v, _ in warped]
        est, den, ok = fuse(outs, vals, self.frames[self.center])

        g_outs = [np.zeros_like(o) for o in outs]
        g_vals = [np.zeros_like(v) for v in vals]
        if cfg.mode == "fit":
            l_c, g_est = charbonnier(est, self.target, eps)
            g_est = g_est * ok[..., None]
            safe = np.where(ok, den, 1.0)
            for k in range(len(outs)):
                g_outs[k] = g_est * (vals[k] / safe)[..., None]
                g_vals[k] = np.sum(g_est * (outs[k] - est), axis=-1) / safe
        else:
            l_c = 0.0
            for j in range(len(outs)):
                for k in range(j + 1, len(outs)):
                    lj, gj = charbonnier(outs[j], outs[k], eps)
                    l_c += lj
                    g_outs[j] += gj
                    g_outs[k] -= gj

        l_tv = 0.0
        tv_grads = []
        for b in bundles:
            lt, gt = tv_loss(b.fields, eps)
            l_tv += lt
            tv_grads.append(gt)
        # TV is averaged over the M fields of a bundle so every warper gets
        # the same smoothness pressure per displacement field
        tv_scale = cfg.loss.lambda_tv / bundles[0].m
        total = l_c + tv_scale * l_tv
        if not need_grad:
            return (l_c, l_tv, total), est, None

        grads = {}
        att_grad = {name: 0.0 for name in ("wq", "wk", "wv", "wo")}
        for k, b in enumerate(bundles):
            g = warped[k][2](g_outs[k], g_vals[k])
            grads[f"fields{k}"] = g["fields"] + tv_scale * tv_grads[k]
            if cfg.warper == "awm":
                grads[f"weights{k}"] = g["weights"]
                for name in att_grad:
                    att_grad[name] = att_grad[name] + g[name]
        if _train_attention(cfg):
            grads.update(att_grad)
        return (l_c, l_tv, total), est, grads


def _train_attention(config: CorrectorConfig) -> bool:
    # pairwise consistency alone is trivially minimized by shrinking the
    # value/output projections, so attention stays fixed in self mode
    return config.warper == "awm" and config.mode == "fit"


def _pack(bundles, att, config):
    params = {}
    for k, b in enumerate(bundles):
        params[f"fields{k}"] = b.fields
        if config.warper == "awm":
            params[f"weights{k}"] = b.weights
    if _train_attention(config):
        params.update(att.as_dict())
    return params


def _unpack(params, bundles, att, config):
    new_bundles = []
    for k, b in enumerate(bundles):
        weights = params[f"weights{k}"] if config.warper == "awm" else b.weights
        new_bundles.append(FieldBundle(params[f"fields{k}"], weights))
    if _train_attention(config):
        att = AttentionParams(params["wq"], params["wk"], params["wv"], params["wo"], att.heads)
    return new_bundles, att


def estimate_flow(frames, config: CorrectorConfig) -> np.ndarray:
    """Per-interval content flow from consecutive frames (zero for one frame)."""
    h, w = frames[0].shape[:2]
    if len(frames) == 1:
        return np.zeros((h, w, 2))
    flows = [
        block_match_flow(a, b, config.flow_radius, config.flow_patch, config.flow_stride)
        for a, b in zip(frames[:-1], frames[1:])
    ]
    return sum(flows) / len(flows)


def initial_bundles(frames, config: CorrectorConfig) -> list[FieldBundle]:
    """Constant-velocity initialization, one bundle per input frame.

    Frame ``k`` is ``k - center`` intervals away from the target instant, so
    its displacement is ``flow * (T(row) + k - center)``. The splatting
    warper works on the source grid and starts from the negated field.
    """
    h = frames[0].shape[0]
    flow = estimate_flow(frames, config)
    tmap = TimeOffsetMap.create(h, config.readout_ratio)
    c = center_index(len(frames))
    bundles = []
    for k in range(len(frames)):
        shifted = tmap.shifted(k - c)
        if config.warper == "awm":
            b = init_bundle(flow, shifted, config.m, config.jitter, seed=config.seed * 7919 + k)
        elif config.warper == "dfw":
            b = init_bundle(-flow, shifted, 1, 0.0)
        else:
            b = init_bundle(flow, shifted, 1, 0.0)
        bundles.append(b)
    return bundles


def _attention_init(channels, config):
    heads = config.heads
    return AttentionParams.identity(channels, heads)


def _oracle(frames, config, gt_bundle):
    c = center_index(len(frames))
    center = frames[c]
    if config.warper == "fusion-only":
        return np.mean(frames, axis=0), []
    if gt_bundle is None:
        raise ValueError("oracle mode needs gt_bundle")
    if gt_bundle.shape != center.shape[:2]:
        raise ValueError("gt_bundle size does not match the frames")
    if config.warper == "backward":
        return backward_warp(center, gt_bundle.modulated()[0]), [gt_bundle]
    if config.warper == "awm":
        att = AttentionParams.identity(center.shape[2], 1)
        return ada_msa_warp(center, gt_bundle, att).frame, [gt_bundle]
    fwd = invert_field(gt_bundle.modulated()[0])
    out = dfw_forward_warp(center, fwd)
    est, _, _ = fuse([out.frame], [out.validity], center)
    return est, [FieldBundle.single(fwd)]


def correct(frames, config: CorrectorConfig | None = None, gs_truth=None, gt_bundle=None) -> CorrectionResult:
    """Estimate the GS frame at the centre frame's middle-scanline instant.

    ``frames`` holds 1-3 consecutive RS frames; with three the middle one is
    the centre, otherwise the first. ``gs_truth`` is required in ``fit``
    mode and ``gt_bundle`` in ``oracle`` mode.
    """
    config = config or CorrectorConfig()
    frames = [as_frame(f) for f in frames]
    if not 1 <= len(frames) <= 3:
        raise ValueError("correct() takes 1 to 3 frames")
    if any(f.shape != frames[0].shape for f in frames):
        raise ValueError("all frames must share one shape")
    start = time.perf_counter()
    c = center_index(len(frames))

    if config.mode == "oracle":
        est, bundles = _oracle(frames, config, gt_bundle)
        return CorrectionResult(est, bundles, [], time.perf_counter() - start)

    if config.mode == "fit":
        if gs_truth is None:
            raise ValueError("fit mode needs gs_truth")
        gs_truth = as_frame(gs_truth)
        if gs_truth.shape != frames[0].shape:
            raise ValueError("gs_truth shape does not match the frames")
    elif len(frames) < 2:
        raise ValueError("self mode needs at least 2 frames")

    if config.warper == "fusion-only":
        est = np.mean(frames, axis=0)
        # nothing to optimize; record the data term so runs stay comparable
        eps = config.loss.eps_charbonnier
        if config.mode == "fit":
            l_c = charbonnier(est, gs_truth, eps)[0]
        else:
            l_c = sum(charbonnier(a, b, eps)[0] for i, a in enumerate(frames) for b in frames[i + 1:])
        trace = [(0, 0, 0.0, l_c, 0.0, l_c)]
        return CorrectionResult(est, [], trace, time.perf_counter() - start, warped=list(frames))

    levels = config.levels
    pyramids = [build_pyramid(f, levels) for f in frames]
    target_pyr = build_pyramid(gs_truth, levels) if gs_truth is not None else None

    bundles = [downsample_bundle(b, 2 ** (levels - 1)) for b in initial_bundles(frames, config)]
    att = _attention_init(frames[0].shape[2], config) if config.warper == "awm" else None
    trace = []

    for level in range(levels - 1, -1, -1):
        level_frames = [p[level] for p in pyramids]
        shape = level_frames[0].shape[:2]
        if bundles[0].shape != shape:
            bundles = [upsample_bundle(b, shape) for b in bundles]
        problem = _Problem(level_frames, config, target_pyr[level] if target_pyr else None)
        iters = config.level_iterations(level)
        state = AdamState(base_lr=config.lr, min_lr=config.min_lr, total_steps=iters)
        if config.warper == "awm":
            scale = config.attention_lr / config.lr
            state.lr_scale = {name: scale for name in ("wq", "wk", "wv", "wo")}
            state.lr_scale.update({f"weights{k}": config.weight_lr / config.lr for k in range(len(bundles))})
        for step in range(iters):
            (l_c, l_tv, total), _, grads = problem.evaluate(bundles, att)
            trace.append((level, step, state.lr, l_c, l_tv, total))
            params = adam_step(state, _pack(bundles, att, config), grads)
            bundles, att = _unpack(params, bundles, att, config)
        (l_c, l_tv, total), _, _ = problem.evaluate(bundles, att, need_grad=False)
        trace.append((level, iters, state.lr, l_c, l_tv, total))

    problem = _Problem([p[0] for p in pyramids], config, gs_truth)
    warped = [problem.warp(k, b, att) for k, b in enumerate(bundles)]
    est, _, _ = fuse([o for o, _, _ in warped], [v for _, v, _ in warped], frames[c])
    return CorrectionResult(est, bundles, trace, time.perf_counter() - start, att, [o for o, _, _ in warped])


def evaluate(estimate, gs_truth, margin: int = INTERIOR_MARGIN) -> dict[str, float]:
    """PSNR / SSIM on the full frame and on the interior (``margin`` px cropped)."""
    estimate = getattr(estimate, "gs_estimate", estimate)
    a = as_frame(estimate)
    b = as_frame(gs_truth)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    inner = (slice(margin, -margin or None), slice(margin, -margin or None))
    return {
        "psnr": psnr(a, b),
        "ssim": ssim(a, b),
        "psnr_interior": psnr(a[inner], b[inner]),
        "ssim_interior": ssim(a[inner], b[inner]),
    }
