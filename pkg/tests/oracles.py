"""Slow, loop-based reference implementations used as test oracles.

Nothing here shares code with the package: every value is computed one
pixel at a time from the defining formulas.
"""

import math

import numpy as np


def bilinear(frame, x, y):
    h, w, _ = frame.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    a, b = x - x0, y - y0
    return ((1 - a) * (1 - b) * frame[y0, x0] + a * (1 - b) * frame[y0, x1]
            + (1 - a) * b * frame[y1, x0] + a * b * frame[y1, x1])


def backward_warp(frame, field):
    h, w, _ = frame.shape
    out = np.zeros_like(frame)
    for y in range(h):
        for x in range(w):
            out[y, x] = bilinear(frame, x + field[y, x, 0], y + field[y, x, 1])
    return out


def dfw(frame, field, eps=1e-6):
    """Scatter every source pixel to the 4 integer neighbours of its target."""
    h, w, c = frame.shape
    acc = np.zeros((h, w, c))
    wsum = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            tx = x + field[y, x, 0]
            ty = y + field[y, x, 1]
            for cy in (math.floor(ty), math.floor(ty) + 1):
                for cx in (math.floor(tx), math.floor(tx) + 1):
                    if 0 <= cx < w and 0 <= cy < h:
                        wt = (1 - abs(tx - cx)) * (1 - abs(ty - cy))
                        acc[cy, cx] += wt * frame[y, x]
                        wsum[cy, cx] += wt
    out = np.zeros_like(acc)
    for y in range(h):
        for x in range(w):
            if wsum[y, x] > eps:
                out[y, x] = acc[y, x] / wsum[y, x]
    return out, np.minimum(wsum, 1.0)


def ada_msa(frame, fields, weights, wq, wk, wv, wo, heads):
    """Per-pixel query / sampled keys and values / per-head softmax / output projection."""
    h, w, c = frame.shape
    m = fields.shape[0]
    d = wq.shape[0]
    dh = d // heads
    out = np.zeros((h, w, wo.shape[0]))
    attn_maps = np.zeros((heads, m, h, w))
    for y in range(h):
        for x in range(w):
            q = wq @ frame[y, x]
            samples = []
            for i in range(m):
                ux = weights[i, y, x] * fields[i, y, x, 0]
                uy = weights[i, y, x] * fields[i, y, x, 1]
                samples.append(bilinear(frame, x + ux, y + uy))
            keys = [wk @ s for s in samples]
            vals = [wv @ s for s in samples]
            concat = []
            for hd in range(heads):
                sl = slice(hd * dh, (hd + 1) * dh)
                logits = [float(np.dot(q[sl], kk[sl])) / math.sqrt(dh) for kk in keys]
                top = max(logits)
                ex = [math.exp(v - top) for v in logits]
                tot = sum(ex)
                probs = [e / tot for e in ex]
                for i in range(m):
                    attn_maps[hd, i, y, x] = probs[i]
                head = sum(p * vv[sl] for p, vv in zip(probs, vals))
                concat.extend(head)
            out[y, x] = wo @ np.array(concat)
    return out, attn_maps


def tv(fields, eps):
    """Smoothed TV by explicit double loops."""
    m, h, w, _ = fields.shape
    total = 0.0
    for i in range(m):
        for c in range(2):
            if w > 1:
                s = 0.0
                for y in range(h):
                    for x in range(w - 1):
                        d = fields[i, y, x + 1, c] - fields[i, y, x, c]
                        s += math.sqrt(d * d + eps * eps) if eps else abs(d)
                total += s / (h * (w - 1))
            if h > 1:
                s = 0.0
                for y in range(h - 1):
                    for x in range(w):
                        d = fields[i, y + 1, x, c] - fields[i, y, x, c]
                        s += math.sqrt(d * d + eps * eps) if eps else abs(d)
                total += s / ((h - 1) * w)
    return total
