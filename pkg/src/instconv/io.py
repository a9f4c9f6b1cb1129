"""File formats: PPM/PGM rasters, float rasters, run configs and checkpoints."""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

FLOAT_RASTER_MAGIC = b"FR1\n"
CHECKPOINT_MAGIC = b"ICK1\n"


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# netpbm


def _read_netpbm(path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(magic):
        raise FormatError(f"{path}: not a {magic.decode()} file")
    # header: magic, width, height, maxval separated by whitespace / comments
    tokens = []
    pos = len(magic)
    while len(tokens) < 3:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*").match(data, pos)
        pos = m.end()
        m = re.compile(rb"\d+").match(data, pos)
        if m is None:
            raise FormatError(f"{path}: malformed header")
        tokens.append(int(m.group()))
        pos = m.end()
    pos += 1  # single whitespace byte before the raster
    w, h, maxval = tokens
    if not 0 < maxval < 65536 or w < 1 or h < 1:
        raise FormatError(f"{path}: bad header values {tokens}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * channels
    raw = data[pos:pos + n * dtype.itemsize]
    if len(raw) != n * dtype.itemsize:
        raise FormatError(f"{path}: truncated raster")
    arr = np.frombuffer(raw, dtype=dtype).astype(np.int64)
    shape = (h, w, channels) if channels > 1 else (h, w)
    return arr.reshape(shape), maxval


def read_ppm(path) -> np.ndarray:
    """P6 image as (H, W, 3) floats in [0, 1]."""
    arr, maxval = _read_netpbm(path, b"P6", 3)
    return arr / maxval


def write_ppm(path, rgb) -> None:
    rgb = np.asarray(rgb, dtype=np.float64)
    h, w, _ = rgb.shape
    px = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + px.tobytes())


def read_pgm(path) -> np.ndarray:
    """P5 image as integer array (8- or 16-bit samples)."""
    return _read_netpbm(path, b"P5", 1)[0]


def write_pgm(path, values, bits: int = 8) -> None:
    values = np.asarray(values)
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    if values.min(initial=0) < 0 or values.max(initial=0) > maxval:
        raise ValueError(f"values out of range for a {bits}-bit PGM")
    h, w = values.shape
    dtype = "u1" if bits == 8 else ">u2"
    Path(path).write_bytes(b"P5\n%d %d\n%d\n" % (w, h, maxval)
                           + values.astype(dtype).tobytes())


def sidecar_path(path) -> Path:
    return Path(str(path) + ".txt")


def _write_sidecar(path, items: dict) -> None:
    sidecar_path(path).write_text("".join(f"{k} = {v}\n" for k, v in items.items()))


def read_sidecar(path) -> dict[str, str]:
    out = {}
    for line in sidecar_path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def write_segment_map(path, labels, **params) -> None:
    """16-bit PGM plus a sidecar with the segment count and the producing params."""
    labels = np.asarray(labels)
    write_pgm(path, labels, bits=16)
    _write_sidecar(path, {"segment_count": int(labels.max()) + 1, **params})


def read_segment_map(path) -> np.ndarray:
    return read_pgm(path).astype(np.int32)


def write_preview(path, depth) -> tuple[float, float]:
    """8-bit min-max normalised preview; the range goes to the sidecar."""
    depth = np.asarray(depth, dtype=np.float64)
    lo, hi = float(depth.min()), float(depth.max())
    scaled = (depth - lo) / (hi - lo) if hi > lo else np.zeros_like(depth)
    write_pgm(path, np.round(scaled * 255.0).astype(np.int64), bits=8)
    _write_sidecar(path, {"min": repr(lo), "max": repr(hi)})
    return lo, hi


# ---------------------------------------------------------------------------
# float rasters


def write_float_raster(path, values) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"float raster must be 2-D, got shape {values.shape}")
    h, w = values.shape
    payload = values.astype("<f4").tobytes()
    Path(path).write_bytes(FLOAT_RASTER_MAGIC + b"%d %d\n" % (h, w) + payload)


def read_float_raster(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(FLOAT_RASTER_MAGIC):
        raise FormatError(f"{path}: missing FR1 magic")
    end = data.find(b"\n", len(FLOAT_RASTER_MAGIC))
    try:
        h, w = (int(t) for t in data[len(FLOAT_RASTER_MAGIC):end].split())
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header") from exc
    payload = data[end + 1:]
    if len(payload) != 4 * h * w:
        raise FormatError(f"{path}: expected {4 * h * w} payload bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(h, w)


# ---------------------------------------------------------------------------
# run config


@dataclass
class RunConfig:
    k: int = 64
    sigma: float = 1.0
    compactness: float = 10.0
    iterations: int = 10
    lr: float = 1e-3
    steps: int = 3000
    head: str = "ic"
    seed: int = 0
    canny_low: float = 0.05
    canny_high: float = 0.1
    dde_plane: float = 3.0
    fx: float = 580.0
    fy: float = 580.0
    cx: float | None = None  # None: image centre
    cy: float | None = None

    def to_text(self) -> str:
        return "".join(f"{k} = {'auto' if v is None else v}\n" for k, v in asdict(self).items())


def parse_config(text: str) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise FormatError(f"line {lineno}: unknown key {key!r}")
        t = types[key]
        try:
            if key in ("cx", "cy"):
                values[key] = None if raw == "auto" else float(raw)
            elif t == "int":
                values[key] = int(raw)
            elif t == "float":
                values[key] = float(raw)
            else:
                values[key] = raw
        except ValueError as exc:
            raise FormatError(f"line {lineno}: bad value for {key}: {raw!r}") from exc
    return RunConfig(**values)


def read_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Magic line, one JSON header line, then raw little-endian float64 arrays."""
    names = sorted(params)
    header = {"arrays": [[n, list(params[n].shape)] for n in names], "meta": meta or {}}
    blob = b"".join(np.ascontiguousarray(params[n], dtype="<f8").tobytes() for n in names)
    Path(path).write_bytes(CHECKPOINT_MAGIC + json.dumps(header, sort_keys=True).encode()
                           + b"\n" + blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{path}: not a checkpoint")
    end = data.index(b"\n", len(CHECKPOINT_MAGIC))
    header = json.loads(data[len(CHECKPOINT_MAGIC):end])
    pos = end + 1
    params = {}
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) * 8
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated array {name!r}")
        params[name] = np.frombuffer(data[pos:pos + n], dtype="<f8").reshape(shape).copy()
        pos += n
    if pos != len(data):
        raise FormatError(f"{path}: trailing or missing bytes")
    return params, header["meta"]
