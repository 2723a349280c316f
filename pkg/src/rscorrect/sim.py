"""Rolling-shutter image formation from parametric 2-D scenes.

Times are in frame intervals and velocities in pixels per frame interval,
so the constant-velocity displacement of a scanline is simply
``velocity * time_offset``. A velocity here is the apparent motion of
image content in the viewport, i.e. the optical flow between consecutive
global-shutter frames.

Row ``i`` of a rolling-shutter frame centred at ``t_mid`` is exposed at
``t_mid + T(i)`` with ``T(i) = (i - (H-1)/2) * s / (H-1)``; the global
shutter frame is exposed at ``t_mid``, matching the middle scanline.
Exposure is instantaneous (no motion blur).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from rscorrect.image import sample_bilinear
from rscorrect.motion import FieldBundle


class UnsupportedSceneError(ValueError):
    """The scene motion cannot be inverted row-wise."""


@dataclass
class TimeOffsetMap:
    """Per-row exposure time offsets relative to the middle scanline."""

    offsets: np.ndarray
    readout_ratio: float

    @classmethod
    def create(cls, height: int, readout_ratio: float) -> "TimeOffsetMap":
        if not 0.0 <= readout_ratio <= 1.0:
            raise ValueError(f"readout ratio must be in [0, 1], got {readout_ratio}")
        if height < 1:
            raise ValueError("height must be >= 1")
        rows = np.arange(height, dtype=np.float64)
        if height == 1:
            return cls(np.zeros(1), float(readout_ratio))
        offsets = (rows - (height - 1) / 2.0) * (readout_ratio / (height - 1))
        return cls(offsets, float(readout_ratio))

    def shifted(self, dt: float) -> "TimeOffsetMap":
        """Offsets relative to a target instant ``dt`` intervals earlier."""
        return TimeOffsetMap(self.offsets + dt, self.readout_ratio)


@dataclass
class Layer:
    """A textured sprite translating over the background.

    ``position`` is the viewport (x, y) of the sprite origin at t = 0 and
    ``velocity`` its content velocity (px / interval).
    """

    texture: np.ndarray
    position: tuple[float, float]
    velocity: tuple[float, float]
    shape: str = "disk"
    edge: float = 1.5

    def sprite_coords(self, xs, ys, t):
        return xs - (self.position[0] + self.velocity[0] * t), ys - (self.position[1] + self.velocity[1] * t)

    def alpha(self, sx, sy):
        h, w = self.texture.shape[:2]
        if self.shape == "disk":
            cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
            radius = min(w, h) / 2.0 - self.edge
            dist = radius - np.hypot(sx - cx, sy - cy)
        elif self.shape == "rect":
            dist = np.minimum(np.minimum(sx, w - 1 - sx), np.minimum(sy, h - 1 - sy)) - self.edge
        else:
            raise ValueError(f"unknown layer shape {self.shape!r}")
        return np.clip(0.5 + dist / self.edge, 0.0, 1.0)


@dataclass
class SceneSpec:
    """Background texture with rigid motion plus optional translating layers.

    The viewport pixel ``p`` at time ``t`` shows the background texture at
    ``R(-rotation * t) (p - c) + c + origin - velocity * t`` where ``c`` is
    the viewport centre.
    """

    texture: np.ndarray
    viewport: tuple[int, int]
    origin: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    rotation: float = 0.0
    layers: list[Layer] = field(default_factory=list)
    t_span: tuple[float, float] = (-1.0, 5.0)
    params: dict = field(default_factory=dict)

    @property
    def center(self) -> tuple[float, float]:
        h, w = self.viewport
        return (w - 1) / 2.0, (h - 1) / 2.0

    def background_coords(self, xs, ys, t):
        cx, cy = self.center
        ang = -self.rotation * t
        c, s = np.cos(ang), np.sin(ang)
        dx, dy = xs - cx, ys - cy
        tx = c * dx - s * dy + cx + self.origin[0] - self.velocity[0] * t
        ty = s * dx + c * dy + cy + self.origin[1] - self.velocity[1] * t
        return tx, ty

    def background_inverse(self, tx, ty, t):
        """Viewport location showing texture point ``(tx, ty)`` at time ``t``."""
        cx, cy = self.center
        ang = self.rotation * t
        c, s = np.cos(ang), np.sin(ang)
        dx = tx - cx - self.origin[0] + self.velocity[0] * t
        dy = ty - cy - self.origin[1] + self.velocity[1] * t
        return c * dx - s * dy + cx, s * dx + c * dy + cy

    def to_json(self) -> dict:
        """Human-readable description (the texture itself is regenerated from ``params``)."""
        return {
            "viewport": list(self.viewport),
            "texture_shape": list(self.texture.shape),
            "origin": list(self.origin),
            "velocity": list(self.velocity),
            "rotation": self.rotation,
            "t_span": list(self.t_span),
            "layers": [
                {
                    "texture_shape": list(layer.texture.shape),
                    "position": list(layer.position),
                    "velocity": list(layer.velocity),
                    "shape": layer.shape,
                    "edge": layer.edge,
                }
                for layer in self.layers
            ],
            "params": self.params,
            "conventions": {
                "time_unit": "frame interval",
                "velocity": "content motion, px per frame interval",
                "rotation": "rad per frame interval about viewport centre",
                "displacement_scale": 1.0,
            },
        }


@dataclass
class FramePair:
    rs: np.ndarray
    gs: np.ndarray
    gt_bundle: FieldBundle
    t_mid: float


def _check_times(scene: SceneSpec, times) -> None:
    lo, hi = scene.t_span
    times = np.asarray(times)
    if times.min() < lo or times.max() > hi:
        raise ValueError(f"time {times.min():.3f}..{times.max():.3f} outside scene span [{lo}, {hi}]")


def _render(scene: SceneSpec, t_rows: np.ndarray) -> np.ndarray:
    h, w = scene.viewport
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    t = np.broadcast_to(t_rows[:, None], (h, w))
    tx, ty = scene.background_coords(xs, ys, t)
    out = sample_bilinear(scene.texture, tx, ty)
    for layer in scene.layers:
        sx, sy = layer.sprite_coords(xs, ys, t)
        a = layer.alpha(sx, sy)[..., None]
        out = a * sample_bilinear(layer.texture, sx, sy) + (1.0 - a) * out
    return out


def render_gs(scene: SceneSpec, t: float) -> np.ndarray:
    """Global-shutter frame: every pixel sampled at instant ``t``."""
    _check_times(scene, [t])
    return _render(scene, np.full(scene.viewport[0], float(t)))


def row_times(scene: SceneSpec, t_mid: float, s: float) -> np.ndarray:
    return float(t_mid) + TimeOffsetMap.create(scene.viewport[0], s).offsets


def render_rs(scene: SceneSpec, t_mid: float, s: float) -> np.ndarray:
    """Rolling-shutter frame: row ``i`` sampled at ``t_mid + T(i)``."""
    times = row_times(scene, t_mid, s)
    _check_times(scene, times)
    return _render(scene, times)


def _solve_rows(target, t_mid, k, c_row, max_iter=100, tol=1e-12):
    """Fixed-point solve of ``q = target(t_mid + T(q_y))`` for every pixel."""
    qx, qy = target(float(t_mid))
    for _ in range(max_iter):
        t = t_mid + (qy - c_row) * k
        nx, ny = target(t)
        delta = max(np.max(np.abs(nx - qx)), np.max(np.abs(ny - qy)))
        qx, qy = nx, ny
        if delta < tol:
            return qx, qy
        if not np.isfinite(delta) or delta > 1e6:
            break
    raise UnsupportedSceneError("row-wise motion inversion did not converge")


def gt_displacement(scene: SceneSpec, t_mid: float, s: float) -> FieldBundle:
    """Exact GS-to-RS displacement as a one-field bundle with unit weight.

    ``U(p)`` is chosen so that the rolling-shutter frame sampled at
    ``p + U(p)`` shows the content of the global-shutter frame at ``p``.
    Each GS pixel follows the topmost layer covering it (alpha > 0.5).
    """
    h, w = scene.viewport
    c_row = (h - 1) / 2.0
    k = s / (h - 1) if h > 1 else 0.0
    _check_times(scene, row_times(scene, t_mid, s))
    if k and abs(scene.velocity[1]) * k >= 1.0:
        raise UnsupportedSceneError("vertical velocity outruns the rolling shutter")
    for layer in scene.layers:
        if k and abs(layer.velocity[1]) * k >= 1.0:
            raise UnsupportedSceneError("layer vertical velocity outruns the rolling shutter")

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    tx, ty = scene.background_coords(xs, ys, float(t_mid))
    qx, qy = _solve_rows(lambda t: scene.background_inverse(tx, ty, t), t_mid, k, c_row)

    for layer in scene.layers:
        sx, sy = layer.sprite_coords(xs, ys, float(t_mid))
        cover = layer.alpha(sx, sy) > 0.5
        if not cover.any():
            continue

        def target(t, sx=sx, sy=sy, layer=layer):
            return sx + layer.position[0] + layer.velocity[0] * t, sy + layer.position[1] + layer.velocity[1] * t

        lx, ly = _solve_rows(target, t_mid, k, c_row)
        qx = np.where(cover, lx, qx)
        qy = np.where(cover, ly, qy)

    field = np.stack([qx - xs, qy - ys], axis=-1)
    return FieldBundle.single(field)


def make_sequence(scene: SceneSpec, n: int, s: float) -> list[FramePair]:
    """RS frames at ``t = 0 .. n-1`` with middle-scanline GS ground truth."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pairs = []
    for i in range(n):
        t = float(i)
        pairs.append(FramePair(render_rs(scene, t, s), render_gs(scene, t), gt_displacement(scene, t, s), t))
    return pairs


# ---------------------------------------------------------------------------
# procedural scenes


def make_texture(rng: np.random.Generator, h: int, w: int, channels: int = 3,
                 sigma: float = 2.5, n_shapes: int = 12, smooth: float = 1.0) -> np.ndarray:
    """Band-limited colour noise with soft geometric primitives."""
    noise = gaussian_filter(rng.standard_normal((h, w, channels)), sigma=(sigma, sigma, 0))
    noise = gaussian_filter(noise, sigma=(0, 0, 0.6)) if channels > 1 else noise
    noise -= noise.min(axis=(0, 1))
    noise /= noise.max(axis=(0, 1)) + 1e-12
    tex = 0.2 + 0.6 * noise
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(n_shapes):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        size = rng.uniform(4, 14)
        color = rng.uniform(0.05, 0.95, size=channels)
        if rng.random() < 0.5:
            dist = size - np.hypot(xs - cx, ys - cy)
        else:
            dist = np.minimum(size - np.abs(xs - cx), 0.7 * size - np.abs(ys - cy))
        a = np.clip(0.5 + dist, 0.0, 1.0)[..., None] * rng.uniform(0.4, 0.9)
        tex = a * color + (1.0 - a) * tex
    if smooth > 0:
        tex = gaussian_filter(tex, sigma=(smooth, smooth, 0))
    return tex


def _margin(size, speed, rotation, t_extent):
    radius = 0.5 * np.hypot(*size)
    return int(np.ceil(speed * t_extent + radius * abs(rotation) * t_extent + 6))


def make_scene(seed: int, kind: str = "smooth", size: int = 64, n_frames: int = 5,
               max_speed: float = 3.0, channels: int = 3, texture_sigma: float = 2.5,
               texture_smooth: float = 1.0, layer_speed: float | None = None) -> SceneSpec:
    """Seeded procedural scene.

    kind
        ``static``   -- no motion.
        ``translation`` -- global constant translation.
        ``smooth``   -- translation plus a small rotation.
        ``two_layer`` -- translating background plus a disk moving differently.
    """
    rng = np.random.default_rng(seed)
    t_span = (-1.0, float(n_frames))
    t_extent = max(abs(t_span[0]), abs(t_span[1])) + 0.5

    def rand_velocity(speed):
        ang = rng.uniform(0, 2 * np.pi)
        mag = rng.uniform(0.5 * speed, speed)
        return (float(mag * np.cos(ang)), float(mag * np.sin(ang)))

    velocity = (0.0, 0.0)
    rotation = 0.0
    if kind in ("translation", "smooth", "two_layer"):
        velocity = rand_velocity(max_speed)
    if kind == "smooth":
        rotation = float(rng.uniform(-0.01, 0.01))
    elif kind not in ("static", "translation", "two_layer"):
        raise ValueError(f"unknown scene kind {kind!r}")

    margin = _margin((size, size), np.hypot(*velocity), rotation, t_extent)
    tex = make_texture(rng, size + 2 * margin, size + 2 * margin, channels,
                       sigma=texture_sigma, smooth=texture_smooth)
    layers = []
    if kind == "two_layer":
        diam = int(rng.integers(size // 3, size // 2))
        fg_speed = max_speed if layer_speed is None else layer_speed
        vel = rand_velocity(fg_speed)
        # foreground moves clearly differently from the background
        if np.hypot(vel[0] - velocity[0], vel[1] - velocity[1]) < fg_speed:
            vel = (-velocity[0], -velocity[1])
        sprite = make_texture(rng, diam, diam, channels, sigma=0.6 * texture_sigma, n_shapes=3,
                              smooth=0.7 * texture_smooth)
        mid = (n_frames - 1) / 2.0
        pos = (
            (size - diam) / 2.0 + rng.uniform(-4, 4) - vel[0] * mid,
            (size - diam) / 2.0 + rng.uniform(-4, 4) - vel[1] * mid,
        )
        layers.append(Layer(sprite, (float(pos[0]), float(pos[1])), vel, shape="disk"))

    params = {"seed": int(seed), "kind": kind, "size": size, "n_frames": n_frames,
              "max_speed": max_speed, "channels": channels, "texture_sigma": texture_sigma,
              "texture_smooth": texture_smooth, "layer_speed": layer_speed}
    return SceneSpec(tex, (size, size), (float(margin), float(margin)), velocity, rotation,
                     layers, t_span, params)
