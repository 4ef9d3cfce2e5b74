"""Binary greyscale PGM (P5) heatmaps."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def to_gray(values, mode: str = "max") -> np.ndarray:
    """Map a 2-D array to uint8.

    ``max`` scales by the maximum (for non-negative relation rows; a constant
    row becomes uniformly 255). ``minmax`` stretches the value range to
    [0, 255] and maps a constant array to 0.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"heatmap must be 2-D, got shape {v.shape}")
    if mode == "max":
        top = v.max() if v.size else 0.0
        scaled = v / top if top > 0 else np.zeros_like(v)
    elif mode == "minmax":
        lo, hi = (v.min(), v.max()) if v.size else (0.0, 0.0)
        scaled = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    else:
        raise ValueError(f"unknown normalization {mode!r}")
    return np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)


def encode(gray: np.ndarray) -> bytes:
    gray = np.asarray(gray)
    if gray.dtype != np.uint8 or gray.ndim != 2:
        raise ValueError(f"PGM payload must be a 2-D uint8 array, got {gray.dtype} {gray.shape}")
    H, W = gray.shape
    return f"P5\n{W} {H}\n255\n".encode("ascii") + gray.tobytes()


def decode(buf: bytes) -> np.ndarray:
    """Parse a P5 file with maxval 255 (comments allowed in the header)."""
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        fields.append(buf[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"not a binary PGM (magic {fields[0]!r})")
    W, H, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    pos += 1  # single whitespace after maxval
    data = buf[pos : pos + W * H]
    if len(data) != W * H:
        raise ValueError(f"PGM payload has {len(data)} bytes, expected {W * H}")
    return np.frombuffer(data, dtype=np.uint8).reshape(H, W)


def write(path, values, mode: str = "max") -> np.ndarray:
    gray = to_gray(values, mode)
    Path(path).write_bytes(encode(gray))
    return gray


def read(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def top_mass_mask(values, p: float) -> np.ndarray:
    """Smallest set of entries (largest first, ties by index) holding at least ``p`` of the mass."""
    if not 0 < p <= 1:
        raise ValueError(f"mass threshold must be in (0, 1], got {p}")
    v = np.asarray(values, dtype=np.float64).ravel()
    order = np.argsort(-v, kind="stable")
    csum = np.cumsum(v[order])
    keep = int(np.searchsorted(csum, p * csum[-1] - 1e-12)) + 1
    mask = np.zeros(v.size, dtype=bool)
    mask[order[:keep]] = True
    return mask.reshape(np.shape(values))
