"""Inter-frame motion: correlation volumes, block matching, field bundles.

Displacements are in pixels with channel 0 horizontal (columns) and
channel 1 vertical (rows). A flow maps content at ``x`` in frame ``a`` to
``x + flow(x)`` in frame ``b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rscorrect.image import as_frame, sample_bilinear


@dataclass
class FieldBundle:
    """M displacement fields and their M scalar weight maps.

    ``fields`` has shape (M, H, W, 2), ``weights`` shape (M, H, W). The
    field actually used for sampling is ``weights[i] * fields[i]``.
    """

    fields: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.fields = np.asarray(self.fields, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.fields.ndim != 4 or self.fields.shape[-1] != 2 or self.fields.shape[0] < 1:
            raise ValueError(f"fields must be (M, H, W, 2), got {self.fields.shape}")
        if self.weights.shape != self.fields.shape[:3]:
            raise ValueError(f"weights {self.weights.shape} do not match fields {self.fields.shape}")
        if not (np.all(np.isfinite(self.fields)) and np.all(np.isfinite(self.weights))):
            raise ValueError("bundle contains non-finite entries")

    @property
    def m(self) -> int:
        return self.fields.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.fields.shape[1], self.fields.shape[2]

    def modulated(self) -> np.ndarray:
        """Effective fields ``weights[i] * fields[i]``, shape (M, H, W, 2)."""
        return self.weights[..., None] * self.fields

    def copy(self) -> "FieldBundle":
        return FieldBundle(self.fields.copy(), self.weights.copy())

    @classmethod
    def single(cls, field) -> "FieldBundle":
        field = np.asarray(field, dtype=np.float64)
        return cls(field[None], np.ones((1,) + field.shape[:2]))

    @classmethod
    def zeros(cls, m: int, h: int, w: int) -> "FieldBundle":
        return cls(np.zeros((m, h, w, 2)), np.ones((m, h, w)))


def _shift_clamped(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """``out[y, x] = img[clamp(y + dy), clamp(x + dx)]``."""
    h, w = img.shape[:2]
    rows = np.clip(np.arange(h) + dy, 0, h - 1)
    cols = np.clip(np.arange(w) + dx, 0, w - 1)
    return img[rows][:, cols]


def displacement_offsets(r: int) -> list[tuple[int, int]]:
    """Search offsets ``(dx, dy)`` in row-major order of (dy, dx)."""
    return [(dx, dy) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]


def correlation_volume(center, neighbor, r: int = 3) -> np.ndarray:
    """Dense correlation between ``center`` and shifted copies of ``neighbor``.

    Entry ``[k, y, x]`` for offset ``k = (dy + r) * (2r + 1) + (dx + r)`` is
    the channel mean of ``center[y, x] * neighbor[y + dy, x + dx]`` with the
    neighbor index clamped to the border. Output shape ``((2r+1)**2, H, W)``.
    """
    center = as_frame(center)
    neighbor = as_frame(neighbor)
    if center.shape != neighbor.shape:
        raise ValueError(f"shape mismatch: {center.shape} vs {neighbor.shape}")
    if r < 1:
        raise ValueError("radius must be >= 1")
    vol = np.empty(((2 * r + 1) ** 2,) + center.shape[:2])
    for k, (dx, dy) in enumerate(displacement_offsets(r)):
        vol[k] = np.mean(center * _shift_clamped(neighbor, dx, dy), axis=2)
    return vol


def block_match_flow(a, b, r: int = 3, patch: int = 2, stride: int = 4) -> np.ndarray:
    """Integer block-matching flow on a coarse grid, bilinearly upsampled.

    At grid points ``(i*stride, j*stride)`` the displacement ``d`` in
    ``[-r, r]^2`` minimizing the sum of absolute differences between the
    ``(2*patch+1)^2`` patch of ``a`` at ``x`` and of ``b`` at ``x + d`` is
    selected. Ties go to the smaller ``|d|``, then to the lexicographically
    smaller ``(dy, dx)``. Returns an (H, W, 2) flow.
    """
    a = as_frame(a)
    b = as_frame(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if patch < 1:
        raise ValueError("patch half-width must be >= 1")
    if r < 0 or stride < 1:
        raise ValueError("radius must be >= 0 and stride >= 1")
    h, w = a.shape[:2]
    gy = np.arange(0, h, stride)
    gx = np.arange(0, w, stride)

    # patch offsets sampled around every grid point, clamped at the border
    offs = np.arange(-patch, patch + 1)
    py = np.clip(gy[:, None] + offs[None, :], 0, h - 1)  # (ny, P)
    px = np.clip(gx[:, None] + offs[None, :], 0, w - 1)
    patch_a = a[py[:, None, :, None], px[None, :, None, :]]  # (ny, nx, P, P, C)

    cands = displacement_offsets(r)
    cost = np.empty((len(cands), gy.size, gx.size))
    for k, (dx, dy) in enumerate(cands):
        qy = np.clip(gy[:, None] + dy + offs[None, :], 0, h - 1)
        qx = np.clip(gx[:, None] + dx + offs[None, :], 0, w - 1)
        patch_b = b[qy[:, None, :, None], qx[None, :, None, :]]
        cost[k] = np.abs(patch_a - patch_b).sum(axis=(2, 3, 4))

    # candidate rank: |d|^2, then (dy, dx); stable argmin over the rank order
    rank = sorted(range(len(cands)), key=lambda k: (cands[k][0] ** 2 + cands[k][1] ** 2, cands[k][1], cands[k][0]))
    ordered = cost[rank]
    best = np.asarray(rank)[np.argmin(ordered, axis=0)]
    cand_arr = np.asarray(cands, dtype=np.float64)
    grid_flow = cand_arr[best]  # (ny, nx, 2)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return sample_bilinear(grid_flow, xs / stride, ys / stride)


def init_bundle(flow, tmap, m: int = 9, jitter: float = 0.5, seed: int = 0) -> FieldBundle:
    """Initial bundle from a constant-velocity model.

    Field 0 is ``flow(x) * T(row)``; fields ``1..M-1`` add seeded constant
    offsets of magnitude at most ``jitter`` so the fields start distinct.
    All weights start at 1.

    ``tmap`` is a per-row time offset array (or an object with an
    ``offsets`` attribute) in frame intervals.
    """
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {flow.shape}")
    offsets = np.asarray(getattr(tmap, "offsets", tmap), dtype=np.float64)
    if offsets.shape != (flow.shape[0],):
        raise ValueError(f"time offsets need one entry per row ({flow.shape[0]}), got {offsets.shape}")
    if m < 1:
        raise ValueError("M must be >= 1")
    if jitter < 0:
        raise ValueError("jitter must be >= 0")
    base = flow * offsets[:, None, None]
    fields = np.repeat(base[None], m, axis=0)
    if m > 1 and jitter > 0:
        rng = np.random.default_rng(seed)
        angle = rng.uniform(0.0, 2.0 * np.pi, size=m - 1)
        radius = jitter * np.sqrt(rng.uniform(0.0, 1.0, size=m - 1))
        shift = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
        fields[1:] += shift[:, None, None, :]
    weights = np.ones(fields.shape[:3])
    return FieldBundle(fields, weights)


def upsample_bundle(bundle: FieldBundle, shape: tuple[int, int] | None = None) -> FieldBundle:
    """Bilinear 2x upsampling; displacements doubled, weights unscaled.

    Output pixel ``y`` reads the coarse coordinate ``(y - 0.5) / 2`` (pixel
    centers of a 2x2 box pyramid). ``shape`` overrides the default
    ``2*H x 2*W`` output size, e.g. for odd sized pyramid levels.
    """
    h, w = bundle.shape
    oh, ow = shape if shape is not None else (2 * h, 2 * w)
    ys, xs = np.mgrid[0:oh, 0:ow].astype(np.float64)
    cx = (xs - 0.5) / 2.0
    cy = (ys - 0.5) / 2.0
    fields = np.stack([sample_bilinear(f, cx, cy) for f in bundle.fields]) * 2.0
    weights = np.stack([sample_bilinear(wm[:, :, None], cx, cy)[:, :, 0] for wm in bundle.weights])
    return FieldBundle(fields, weights)


def downsample_bundle(bundle: FieldBundle, factor: int) -> FieldBundle:
    """Box-average a bundle by ``factor`` (a power of 2), displacements divided."""
    from rscorrect.image import downsample2

    fields, weights = bundle.fields, bundle.weights
    while factor > 1:
        fields = np.stack([downsample2(f) for f in fields]) / 2.0
        weights = np.stack([downsample2(wm[:, :, None])[:, :, 0] for wm in weights])
        factor //= 2
    return FieldBundle(fields, weights)
