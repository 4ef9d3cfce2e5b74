"""IATN binary tensor files and the text manifests that group them.

Layout: magic ``b"IATN"``, u8 rank, rank x u32 little-endian extents, then
the row-major float32 little-endian payload.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"IATN"


class FormatError(ValueError):
    """File is not a well-formed IATN tensor or manifest."""


def encode(array) -> bytes:
    arr = np.asarray(array)
    if arr.ndim > 255:
        raise FormatError(f"rank {arr.ndim} does not fit in one byte")
    head = MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 5 or buf[:4] != MAGIC:
        raise FormatError("bad magic: not an IATN tensor")
    rank = buf[4]
    end = 5 + 4 * rank
    if len(buf) < end:
        raise FormatError("truncated header")
    shape = struct.unpack(f"<{rank}I", buf[5:end])
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) - end != 4 * count:
        raise FormatError(f"payload has {len(buf) - end} bytes, expected {4 * count} for shape {shape}")
    return np.frombuffer(buf, dtype="<f4", offset=end).reshape(shape).astype(np.float32)


def save(path, array) -> None:
    Path(path).write_bytes(encode(array))


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def save_relation(path, matrix, grid) -> None:
    """Write a relation matrix plus its ``grid=HxW`` sidecar header."""
    save(path, matrix)
    H, W = grid
    Path(str(path) + ".hdr").write_text(f"grid={H}x{W}\n", encoding="utf-8")


def load_relation(path):
    matrix = load(path)
    text = Path(str(path) + ".hdr").read_text(encoding="utf-8").strip()
    key, _, val = text.partition("=")
    if key != "grid":
        raise FormatError(f"bad relation header {text!r}")
    H, W = (int(v) for v in val.split("x"))
    return matrix, (H, W)


MANIFEST = "manifest.txt"


def save_bundle(directory, tensors: dict) -> None:
    """Write named tensors as ``<name>.iatn`` files plus a ``name<TAB>file`` manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in sorted(tensors):
        fname = name + ".iatn"
        save(directory / fname, tensors[name])
        lines.append(f"{name}\t{fname}")
    (directory / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_bundle(directory) -> dict:
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {directory}")
    out = {}
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        name, sep, fname = line.partition("\t")
        if not sep or os.sep in fname:
            raise FormatError(f"{manifest}:{lineno}: malformed entry {line!r}")
        out[name] = load(directory / fname)
    return out
