"""Backward warping, differentiable forward warping and attention warping.

Every operator has a matching ``*_grad`` function returning exact
reverse-mode gradients for the quantities the corrector optimizes
(displacement fields, field weights and attention projections).
Reductions run in a fixed order so results are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rscorrect.image import pixel_grid, sample_bilinear
from rscorrect.motion import FieldBundle

SPLAT_EPS = 1e-6


@dataclass
class WarpOutput:
    frame: np.ndarray
    validity: np.ndarray
    attention: np.ndarray | None = None


@dataclass
class AttentionParams:
    """Linear projections of the attention warp.

    ``wq``, ``wk``, ``wv`` map C input channels to d dims, ``wo`` maps the
    concatenated head outputs back to C channels.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    heads: int = 1

    def __post_init__(self):
        self.wq = np.asarray(self.wq, dtype=np.float64)
        self.wk = np.asarray(self.wk, dtype=np.float64)
        self.wv = np.asarray(self.wv, dtype=np.float64)
        self.wo = np.asarray(self.wo, dtype=np.float64)
        d, c = self.wq.shape
        if self.wk.shape != (d, c) or self.wv.shape != (d, c):
            raise ValueError("wq, wk, wv must share shape (d, C)")
        if self.wo.shape != (c, d):
            raise ValueError(f"wo must be (C, d) = ({c}, {d}), got {self.wo.shape}")
        if self.heads < 1 or d % self.heads:
            raise ValueError(f"embedding dim {d} not divisible by {self.heads} heads")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @property
    def channels(self) -> int:
        return self.wq.shape[1]

    @classmethod
    def identity(cls, channels: int, heads: int = 1) -> "AttentionParams":
        """Stacked-identity projections: ``d = heads * C``, each head sees every channel.

        With these parameters the operator is plain softmax-weighted
        averaging of the sampled features, and ``heads = 1`` gives ``d = C``.
        """
        eye = np.eye(channels)
        stack = np.concatenate([eye] * heads, axis=0)
        wo = np.concatenate([eye] * heads, axis=1) / heads
        return cls(stack.copy(), stack.copy(), stack.copy(), wo, heads)

    @classmethod
    def random(cls, rng: np.random.Generator, channels: int, dim: int, heads: int, scale: float = 0.5):
        return cls(
            rng.normal(scale=scale, size=(dim, channels)),
            rng.normal(scale=scale, size=(dim, channels)),
            rng.normal(scale=scale, size=(dim, channels)),
            rng.normal(scale=scale, size=(channels, dim)),
            heads,
        )

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo}

    def copy(self) -> "AttentionParams":
        return AttentionParams(self.wq.copy(), self.wk.copy(), self.wv.copy(), self.wo.copy(), self.heads)


def _check_field(frame: np.ndarray, field: np.ndarray) -> None:
    if field.shape != frame.shape[:2] + (2,):
        raise ValueError(f"field shape {field.shape} does not match frame {frame.shape[:2]}")


# ---------------------------------------------------------------------------
# backward warp


def backward_warp(frame, field) -> np.ndarray:
    """``out(x) = frame(x + U(x))`` with bilinear sampling and clamped borders."""
    frame = np.asarray(frame, dtype=np.float64)
    field = np.asarray(field, dtype=np.float64)
    _check_field(frame, field)
    xs, ys = pixel_grid(*frame.shape[:2])
    return sample_bilinear(frame, xs + field[..., 0], ys + field[..., 1])


def backward_warp_grad(frame, field, upstream) -> np.ndarray:
    """Gradient of ``sum(upstream * backward_warp(frame, field))`` w.r.t. the field."""
    frame = np.asarray(frame, dtype=np.float64)
    field = np.asarray(field, dtype=np.float64)
    _check_field(frame, field)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != frame.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match output {frame.shape}")
    xs, ys = pixel_grid(*frame.shape[:2])
    _, dx, dy = sample_bilinear(frame, xs + field[..., 0], ys + field[..., 1], with_grad=True)
    return np.stack([np.sum(upstream * dx, axis=-1), np.sum(upstream * dy, axis=-1)], axis=-1)


# ---------------------------------------------------------------------------
# differentiable forward warp (splatting)


def _splat_taps(field):
    """Bilinear splat targets: for each of 4 corners, flat index, weight, in-bounds mask,
    and d(weight)/d(target x), d(weight)/d(target y)."""
    h, w = field.shape[:2]
    xs, ys = pixel_grid(h, w)
    tx = xs + field[..., 0]
    ty = ys + field[..., 1]
    x0 = np.floor(tx)
    y0 = np.floor(ty)
    fx = tx - x0
    fy = ty - y0
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    taps = []
    for ox, oy in ((0, 0), (1, 0), (0, 1), (1, 1)):
        wx = fx if ox else 1.0 - fx
        wy = fy if oy else 1.0 - fy
        dwx = 1.0 if ox else -1.0
        dwy = 1.0 if oy else -1.0
        cx = x0 + ox
        cy = y0 + oy
        inside = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        idx = np.where(inside, cy * w + cx, 0)
        taps.append((idx, wx * wy * inside, inside, dwx * wy * inside, wx * dwy * inside))
    return taps


def _splat_accumulate(frame, taps):
    h, w, c = frame.shape
    n = h * w
    acc = np.zeros((n, c))
    wsum = np.zeros(n)
    for idx, wt, _, _, _ in taps:
        flat_idx = idx.ravel()
        flat_w = wt.ravel()
        wsum += np.bincount(flat_idx, weights=flat_w, minlength=n)
        for ch in range(c):
            acc[:, ch] += np.bincount(flat_idx, weights=flat_w * frame[..., ch].ravel(), minlength=n)
    return acc, wsum


def dfw_forward_warp(frame, field) -> WarpOutput:
    """Forward-splat every source pixel to the 4 integer neighbours of ``x + U(x)``.

    Splat weights are bilinear; the accumulated colour is normalized by the
    accumulated weight where it exceeds 1e-6. Targets falling outside the
    frame are dropped. Validity is ``min(weight, 1)``; holes are 0.
    """
    frame = np.asarray(frame, dtype=np.float64)
    field = np.asarray(field, dtype=np.float64)
    _check_field(frame, field)
    h, w, c = frame.shape
    acc, wsum = _splat_accumulate(frame, _splat_taps(field))
    covered = wsum > SPLAT_EPS
    out = np.zeros_like(acc)
    out[covered] = acc[covered] / wsum[covered, None]
    return WarpOutput(out.reshape(h, w, c), np.minimum(wsum, 1.0).reshape(h, w))


def dfw_grad(frame, field, upstream, upstream_validity=None) -> np.ndarray:
    """Gradient of ``sum(g * out.frame) + sum(g_v * out.validity)`` w.r.t. the field."""
    frame = np.asarray(frame, dtype=np.float64)
    field = np.asarray(field, dtype=np.float64)
    _check_field(frame, field)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != frame.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match output {frame.shape}")
    h, w, c = frame.shape
    taps = _splat_taps(field)
    acc, wsum = _splat_accumulate(frame, taps)
    covered = wsum > SPLAT_EPS
    out = np.zeros_like(acc)
    out[covered] = acc[covered] / wsum[covered, None]

    g = upstream.reshape(-1, c)
    g_acc = np.zeros_like(acc)
    g_acc[covered] = g[covered] / wsum[covered, None]
    g_wsum = np.zeros_like(wsum)
    g_wsum[covered] = -np.sum(g[covered] * out[covered], axis=1) / wsum[covered]
    if upstream_validity is not None:
        gv = np.asarray(upstream_validity, dtype=np.float64).reshape(-1)
        g_wsum += gv * (wsum < 1.0)

    src = frame.reshape(h, w, c)
    grad = np.zeros((h, w, 2))
    for idx, _, inside, dwdx, dwdy in taps:
        # d loss / d weight for every source pixel feeding this corner
        g_w = np.sum(g_acc[idx] * src, axis=-1) + g_wsum[idx]
        g_w = g_w * inside
        grad[..., 0] += g_w * dwdx
        grad[..., 1] += g_w * dwdy
    return grad


# ---------------------------------------------------------------------------
# adaptive multi-head attention warp


def _softmax(logits, axis=-1):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def _ada_forward(frame, bundle: FieldBundle, params: AttentionParams, need_grad: bool):
    frame = np.asarray(frame, dtype=np.float64)
    h, w, c = frame.shape
    if bundle.shape != (h, w):
        raise ValueError(f"bundle size {bundle.shape} does not match frame {(h, w)}")
    if params.channels != c:
        raise ValueError(f"attention params expect {params.channels} channels, frame has {c}")
    m = bundle.m
    p = h * w
    nh = params.heads
    dh = params.dim // nh

    xs, ys = pixel_grid(h, w)
    eff = bundle.modulated()  # (M, H, W, 2)
    sampled = sample_bilinear(frame, xs[None] + eff[..., 0], ys[None] + eff[..., 1], with_grad=need_grad)
    if need_grad:
        n_feat, n_dx, n_dy = sampled
    else:
        n_feat = sampled
    n_feat = n_feat.reshape(m, p, c)

    fq = frame.reshape(p, c)
    q = fq @ params.wq.T  # (P, d)
    k = n_feat @ params.wk.T  # (M, P, d)
    v = n_feat @ params.wv.T
    qh = q.reshape(p, nh, dh)
    kh = k.reshape(m, p, nh, dh)
    vh = v.reshape(m, p, nh, dh)
    scale = 1.0 / np.sqrt(dh)
    logits = np.einsum("phk,mphk->phm", qh, kh) * scale
    attn = _softmax(logits, axis=-1)  # (P, H, M)
    heads_out = np.einsum("phm,mphk->phk", attn, vh)  # (P, H, dh)
    concat = heads_out.reshape(p, nh * dh)
    out = concat @ params.wo.T  # (P, C)
    cache = dict(fq=fq, n_feat=n_feat, qh=qh, kh=kh, vh=vh, attn=attn, concat=concat, scale=scale)
    if need_grad:
        cache["n_dx"] = n_dx.reshape(m, p, c)
        cache["n_dy"] = n_dy.reshape(m, p, c)
    return out.reshape(h, w, c), attn, cache


def ada_msa_warp(frame, bundle: FieldBundle, params: AttentionParams) -> WarpOutput:
    """Attention warp over the M modulated displacements of ``bundle``.

    Per pixel the query comes from the unwarped feature at ``x``; keys and
    values come from the features sampled at ``x + weight_i * field_i``.
    Each head takes a scaled dot-product softmax over the M samples; the
    concatenated head outputs are projected back by ``wo``. The returned
    attention map is the per-field weight averaged over heads.
    """
    out, attn, _ = _ada_forward(frame, bundle, params, need_grad=False)
    h, w = out.shape[:2]
    att_map = attn.mean(axis=1).T.reshape(bundle.m, h, w)
    return WarpOutput(out, np.ones((h, w)), att_map)


def _ada_backward(bundle, params, attn, cache, upstream) -> dict[str, np.ndarray]:
    m, p, c = cache["n_feat"].shape
    h, w = bundle.shape
    nh = params.heads
    dh = params.dim // nh

    g_out = upstream.reshape(p, c)
    g_wo = g_out.T @ cache["concat"]
    g_heads = (g_out @ params.wo).reshape(p, nh, dh)

    g_attn = np.einsum("phk,mphk->phm", g_heads, cache["vh"])
    g_vh = np.einsum("phm,phk->mphk", attn, g_heads)
    g_logits = attn * (g_attn - np.sum(attn * g_attn, axis=-1, keepdims=True)) * cache["scale"]
    g_qh = np.einsum("phm,mphk->phk", g_logits, cache["kh"])
    g_kh = np.einsum("phm,phk->mphk", g_logits, cache["qh"])

    g_q = g_qh.reshape(p, params.dim)
    g_k = g_kh.reshape(m, p, params.dim)
    g_v = g_vh.reshape(m, p, params.dim)
    n_flat = cache["n_feat"].reshape(m * p, c)
    g_wq = g_q.T @ cache["fq"]
    g_wk = g_k.reshape(m * p, -1).T @ n_flat
    g_wv = g_v.reshape(m * p, -1).T @ n_flat

    g_n = g_k @ params.wk + g_v @ params.wv  # (M, P, C)
    g_ex = np.sum(g_n * cache["n_dx"], axis=-1).reshape(m, h, w)
    g_ey = np.sum(g_n * cache["n_dy"], axis=-1).reshape(m, h, w)
    g_eff = np.stack([g_ex, g_ey], axis=-1)  # gradient w.r.t. the modulated field
    g_fields = g_eff * bundle.weights[..., None]
    g_weights = np.sum(g_eff * bundle.fields, axis=-1)
    return {"fields": g_fields, "weights": g_weights, "wq": g_wq, "wk": g_wk, "wv": g_wv, "wo": g_wo}


def ada_msa_vjp(frame, bundle: FieldBundle, params: AttentionParams):
    """Forward pass plus a pullback ``upstream -> gradients`` sharing its cache."""
    out, attn, cache = _ada_forward(frame, bundle, params, need_grad=True)
    h, w = out.shape[:2]
    att_map = attn.mean(axis=1).T.reshape(bundle.m, h, w)

    def pullback(upstream):
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != out.shape:
            raise ValueError(f"upstream shape {upstream.shape} does not match output {out.shape}")
        return _ada_backward(bundle, params, attn, cache, upstream)

    return WarpOutput(out, np.ones((h, w)), att_map), pullback


def ada_msa_grad(frame, bundle: FieldBundle, params: AttentionParams, upstream) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of ``sum(upstream * ada_msa_warp(...).frame)``.

    Returns a dict with keys ``fields`` (M, H, W, 2), ``weights`` (M, H, W)
    and ``wq``, ``wk``, ``wv``, ``wo`` shaped like the parameters.
    """
    _, pullback = ada_msa_vjp(frame, bundle, params)
    return pullback(upstream)
