"""Frames, bilinear sampling, box pyramids and the PSNR/SSIM metrics.

A frame is a plain ``(H, W, C)`` float64 ndarray with ``C`` in {1, 3}.
Values are nominally in [0, 1] but are never clamped inside math
operations; clamping happens only when exporting to 8-bit files.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

MIN_LEVEL_SIZE = 8


def as_frame(data, copy: bool = False) -> np.ndarray:
    """Validate and return ``data`` as an ``(H, W, C)`` float64 frame.

    2-D input is promoted to a single channel frame.
    """
    arr = np.array(data, dtype=np.float64, copy=copy) if copy else np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"frame must be (H, W, C), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("frame must be non-empty")
    if arr.shape[2] not in (1, 3):
        raise ValueError(f"frame must have 1 or 3 channels, got {arr.shape[2]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("frame contains non-finite values")
    return arr


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def sample_bilinear(frame: np.ndarray, x, y, with_grad: bool = False):
    """Vectorized bilinear sampling with clamp-to-edge borders.

    Parameters
    ----------
    frame : ndarray, shape (H, W, C)
    x, y : array_like
        Fractional column and row coordinates, broadcast together.
    with_grad : bool
        Also return the partial derivatives with respect to ``x`` and ``y``.
        Outside the open interval ``(0, W-1)`` the clamp makes the sample
        constant in that coordinate, so the derivative is zero there.

    Returns
    -------
    values : ndarray, shape ``x.shape + (C,)``
    dx, dy : ndarray, same shape as ``values`` (only if ``with_grad``)
    """
    h, w = frame.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x, y = np.broadcast_arrays(x, y)

    xc = np.clip(x, 0.0, w - 1)
    yc = np.clip(y, 0.0, h - 1)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    fx = (xc - x0)[..., None]
    fy = (yc - y0)[..., None]
    step_x = (x0 < w - 1).astype(np.intp)
    step_y = (y0 < h - 1).astype(np.intp) * w

    flat = frame.reshape(h * w, -1)
    i00 = y0 * w + x0
    f00 = flat[i00]
    f01 = flat[i00 + step_x]
    f10 = flat[i00 + step_y]
    f11 = flat[i00 + step_y + step_x]
    top = f00 + fx * (f01 - f00)
    bottom = f10 + fx * (f11 - f10)
    values = top + fy * (bottom - top)
    if not with_grad:
        return values

    inside_x = ((x > 0.0) & (x < w - 1))[..., None]
    inside_y = ((y > 0.0) & (y < h - 1))[..., None]
    dx = ((1.0 - fy) * (f01 - f00) + fy * (f11 - f10)) * inside_x
    dy = (bottom - top) * inside_y
    return values, dx, dy


def bilinear_sample(frame, x: float, y: float) -> np.ndarray:
    """Sample one fractional location (col ``x``, row ``y``) of ``frame``.

    Returns the per-channel intensity. Coordinates outside the frame are
    clamped to the border pixel.
    """
    frame = as_frame(frame)
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValueError(f"non-finite sample coordinate ({x}, {y})")
    return sample_bilinear(frame, x, y)


def pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Column and row index grids of shape (h, w) as float64."""
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(np.float64), ys.astype(np.float64)


def downsample2(frame: np.ndarray) -> np.ndarray:
    """2x2 box filter followed by 2x decimation (odd trailing row/col dropped)."""
    h, w = frame.shape[0] // 2, frame.shape[1] // 2
    f = frame[: 2 * h, : 2 * w]
    return 0.25 * (f[0::2, 0::2] + f[0::2, 1::2] + f[1::2, 0::2] + f[1::2, 1::2])


def build_pyramid(frame, levels: int) -> list[np.ndarray]:
    """Box-filter pyramid, level 0 at full resolution.

    Every level must be at least 8x8, so the input needs at least
    ``8 * 2**(levels - 1)`` pixels per side.
    """
    frame = as_frame(frame)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    need = MIN_LEVEL_SIZE * 2 ** (levels - 1)
    if frame.shape[0] < need or frame.shape[1] < need:
        raise ValueError(
            f"{levels} levels need >= {need}x{need} input, got {frame.shape[0]}x{frame.shape[1]}"
        )
    pyramid = [frame]
    for _ in range(levels - 1):
        pyramid.append(downsample2(pyramid[-1]))
    return pyramid


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0, capped at 99 dB."""
    a = as_frame(a)
    b = as_frame(b)
    _check_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b) -> float:
    """Mean structural similarity over all valid 11x11 windows.

    Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03 and dynamic range
    1.0. Channels are scored independently and averaged.
    """
    a = as_frame(a)
    b = as_frame(b)
    _check_same_shape(a, b)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"frame smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")

    win = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2

    def filt(img):
        view = sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW), axis=(0, 1))
        return np.einsum("ijcuv,uv->ijc", view, win)

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
