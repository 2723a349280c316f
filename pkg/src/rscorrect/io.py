"""PFM / PPM frame files and field-bundle serialization.

PFM files are written little-endian (scale -1.0), rows stored bottom to
top as the format requires. Data is stored as float32, so a frame that
is already float32-representable survives a write/read cycle bit-exactly.

Field bundles are stored as one 3-channel PFM per field with channels
``(u, v, weight)`` plus a JSON sidecar describing the bundle.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np


def write_pfm(path, image) -> None:
    """Write a 1- or 3-channel image as little-endian PFM.

    2-channel input (a displacement field) is padded with a zero third
    channel; :func:`read_pfm` with ``channels=2`` drops it again.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 2, 3):
        raise ValueError(f"PFM supports 1-3 channels, got shape {img.shape}")
    if img.shape[2] == 2:
        img = np.concatenate([img, np.zeros_like(img[:, :, :1])], axis=2)
    h, w, c = img.shape
    tag = b"Pf" if c == 1 else b"PF"
    data = np.ascontiguousarray(img[::-1].astype("<f4"))
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(data.tobytes())


def read_pfm(path, channels: int | None = None) -> np.ndarray:
    """Read a PFM file into an ``(H, W, C)`` float64 array.

    Handles either byte order. ``channels`` truncates the channel axis
    (used for 2-channel fields stored as PF).
    """
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag == b"PF":
            c = 3
        elif tag == b"Pf":
            c = 1
        else:
            raise ValueError(f"{path}: not a PFM file")
        dims = f.readline().split()
        while not dims:
            dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        buf = f.read(w * h * c * 4)
    if len(buf) != w * h * c * 4:
        raise ValueError(f"{path}: truncated PFM data")
    img = np.frombuffer(buf, dtype=dtype).reshape(h, w, c)[::-1].astype(np.float64)
    if channels is not None:
        img = img[:, :, :channels]
    return img


def to_uint8(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, image) -> None:
    """Write an 8-bit binary PPM (P6); values scaled by 255 and clamped.

    Single channel frames are replicated to gray RGB.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    if img.shape[2] != 3:
        raise ValueError("PPM export needs 1 or 3 channels")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(to_uint8(img).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read an 8-bit binary PPM into a float frame in [0, 1]."""
    with open(path, "rb") as f:
        raw = f.read()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval separated by whitespace / comments
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: only binary P6 PPM is supported")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM is supported")
    data = np.frombuffer(raw[pos : pos + w * h * 3], dtype=np.uint8)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def write_frame(stem, frame) -> None:
    """Write ``stem.pfm`` (lossless) and ``stem.ppm`` (viewable)."""
    stem = os.fspath(stem)
    write_pfm(stem + ".pfm", frame)
    write_ppm(stem + ".ppm", frame)


def read_frame(path) -> np.ndarray:
    path = os.fspath(path)
    if path.endswith(".pfm"):
        return read_pfm(path)
    if path.endswith(".ppm"):
        return read_ppm(path)
    raise ValueError(f"unknown frame format: {path}")


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def write_bundle(stem, bundle) -> list[Path]:
    """Serialize a field bundle as ``stem_field%02d.pfm`` files + ``stem.json``.

    Each PFM holds channels (u, v, weight) of one field; the sidecar records
    M, the dimensions and the modulation convention.
    """
    stem = Path(stem)
    paths = []
    for i in range(bundle.m):
        data = np.concatenate([bundle.fields[i], bundle.weights[i][:, :, None]], axis=2)
        p = stem.parent / f"{stem.name}_field{i:02d}.pfm"
        write_pfm(p, data)
        paths.append(p)
    meta = {
        "M": bundle.m,
        "height": bundle.shape[0],
        "width": bundle.shape[1],
        "channels": ["u (columns, px)", "v (rows, px)", "weight"],
        "modulation": "effective field i = weight[i] * (u, v)[i], applied before sampling",
        "files": [p.name for p in paths],
        "weight_stats": {
            "min": float(bundle.weights.min()),
            "max": float(bundle.weights.max()),
            "mean": float(bundle.weights.mean()),
        },
    }
    side = stem.parent / f"{stem.name}.json"
    write_json(side, meta)
    return paths + [side]


def read_bundle(stem):
    """Inverse of :func:`write_bundle` (values round-trip at float32)."""
    from rscorrect.motion import FieldBundle

    stem = Path(stem)
    with open(stem.parent / f"{stem.name}.json") as f:
        meta = json.load(f)
    fields, weights = [], []
    for name in meta["files"]:
        data = read_pfm(stem.parent / name)
        fields.append(data[:, :, :2])
        weights.append(data[:, :, 2])
    return FieldBundle(np.stack(fields), np.stack(weights))
