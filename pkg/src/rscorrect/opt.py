"""Charbonnier and total-variation losses, Adam with cosine annealing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LossConfig:
    """Loss weights.

    ``lambda_p`` is kept only for reference: the perceptual term needs a
    pretrained network and is not part of the optimized objective, which is
    ``charbonnier + lambda_tv * tv``.
    """

    eps_charbonnier: float = 1e-3
    lambda_p: float = 0.01
    lambda_tv: float = 0.001
    note: str = "perceptual term excluded; objective = L_c + lambda_tv * L_tv"

    def __post_init__(self):
        if min(self.eps_charbonnier, self.lambda_p, self.lambda_tv) < 0:
            raise ValueError("loss weights must be >= 0")


def charbonnier(a, b, eps: float = 1e-3) -> tuple[float, np.ndarray]:
    """Mean of ``sqrt((a - b)**2 + eps**2)`` and its gradient w.r.t. ``a``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    root = np.sqrt(diff * diff + eps * eps)
    return float(np.mean(root)), diff / root / diff.size


def _rho(d, eps):
    if eps == 0.0:
        return np.abs(d), np.sign(d)
    root = np.sqrt(d * d + eps * eps)
    return root, d / root


def tv_loss(fields, eps: float = 1e-3) -> tuple[float, np.ndarray]:
    """Smoothed total variation of a stack of displacement fields.

    For every field and channel, the mean of ``sqrt(d**2 + eps**2)`` over
    horizontal forward differences plus the same over vertical differences;
    summed over channels and fields. ``eps = 0`` gives plain ``|d|``.

    ``fields`` is (M, H, W, 2) (or a :class:`FieldBundle`). Returns the loss
    and its gradient w.r.t. ``fields``.
    """
    fields = np.asarray(getattr(fields, "fields", fields), dtype=np.float64)
    if fields.ndim == 3:
        fields = fields[None]
    m, h, w, _ = fields.shape
    grad = np.zeros_like(fields)
    total = 0.0
    if w > 1:
        dx = fields[:, :, 1:] - fields[:, :, :-1]
        r, dr = _rho(dx, eps)
        n = h * (w - 1)
        total += float(np.sum(r)) / n
        g = dr / n
        grad[:, :, 1:] += g
        grad[:, :, :-1] -= g
    if h > 1:
        dy = fields[:, 1:] - fields[:, :-1]
        r, dr = _rho(dy, eps)
        n = (h - 1) * w
        total += float(np.sum(r)) / n
        g = dr / n
        grad[:, 1:] += g
        grad[:, :-1] -= g
    return total, grad


def cosine_lr(step: int, total_steps: int, base_lr: float, min_lr: float = 0.0) -> float:
    """``min_lr + (base_lr - min_lr) * (1 + cos(pi * step / total_steps)) / 2``."""
    if total_steps <= 0:
        return base_lr
    t = min(max(step, 0), total_steps)
    if t == total_steps:
        return min_lr
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * t / total_steps))


@dataclass
class AdamState:
    """Adam moments for a dict of named parameter arrays.

    Each group may carry its own learning-rate multiplier in ``lr_scale``.
    """

    base_lr: float = 0.1
    min_lr: float = 0.0
    total_steps: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    lr_scale: dict = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return cosine_lr(self.step, self.total_steps, self.base_lr, self.min_lr)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update; returns new parameter arrays.

    The learning rate for this update is the cosine schedule evaluated at
    the current step count, which is then incremented.
    """
    if params.keys() != grads.keys():
        raise ValueError("params and grads must have the same keys")
    lr = state.lr
    t = state.step + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        p = np.asarray(p, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / c1
        v_hat = v / c2
        step_lr = lr * state.lr_scale.get(name, 1.0)
        new[name] = p - step_lr * m_hat / (np.sqrt(v_hat) + state.eps)
    state.step = t
    return new


LOSS_TRACE_HEADER = ["schema", "level", "step", "lr", "l_c", "l_tv", "total"]
LOSS_TRACE_SCHEMA = "loss_trace/v1"


def write_loss_trace(path, rows, append: bool = False) -> None:
    """Append (or write) loss rows ``(level, step, lr, l_c, l_tv, total)`` to CSV."""
    mode = "a" if append else "w"
    with open(path, mode, newline="") as f:
        writer = csv.writer(f)
        if not append or f.tell() == 0:
            writer.writerow(LOSS_TRACE_HEADER)
        for row in rows:
            level, step, lr, lc, ltv, total = row
            writer.writerow([LOSS_TRACE_SCHEMA, level, step, repr(float(lr)), repr(float(lc)),
                             repr(float(ltv)), repr(float(total))])
