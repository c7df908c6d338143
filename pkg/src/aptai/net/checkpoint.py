"""Versioned binary checkpoint container.

Layout (all integers little-endian uint32):
    magic "APTAI1" | version | kind | config yaml | tensor count |
    per tensor (sorted by name): name | rank | dims... | float32 data

Strings are length-prefixed UTF-8. Tensors are stored as little-endian
32-bit floats; loading restores float64 working copies (exact widening,
so save(load(file)) reproduces the file byte for byte).
"""

import io
import struct

import numpy as np

from ..errors import CheckpointError

MAGIC = b"APTAI1"
VERSION = 1


def _pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _unpack_str(buf):
    (n,) = struct.unpack("<I", buf.read(4))
    return buf.read(n).decode("utf-8")


def checkpoint_bytes(params, kind, config_yaml):
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    out.write(_pack_str(kind))
    out.write(_pack_str(config_yaml))
    out.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        out.write(_pack_str(name))
        out.write(struct.pack("<I", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(arr.tobytes())
    return out.getvalue()


def save_checkpoint(path, params, kind, config_yaml):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params, kind, config_yaml))


def load_checkpoint(path):
    """Returns (params as float64, kind, config yaml text)."""
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if buf.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != VERSION:
        raise CheckpointError(f"unknown checkpoint version {version}")
    kind = _unpack_str(buf)
    config_yaml = _unpack_str(buf)
    (count,) = struct.unpack("<I", buf.read(4))
    params = {}
    for _ in range(count):
        name = _unpack_str(buf)
        (rank,) = struct.unpack("<I", buf.read(4))
        dims = struct.unpack(f"<{rank}I", buf.read(4 * rank))
        n_items = int(np.prod(dims)) if rank else 1
        raw = buf.read(4 * n_items)
        if len(raw) != 4 * n_items:
            raise CheckpointError(f"truncated tensor '{name}'")
        params[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(float)
    return params, kind, config_yaml


def validate_shapes(params, expected_shapes):
    """Check loaded tensors against the shapes the config implies."""
    missing = sorted(set(expected_shapes) - set(params))
    extra = sorted(set(params) - set(expected_shapes))
    if missing or extra:
        raise CheckpointError(
            f"tensor names mismatch: missing {missing}, unexpected {extra}"
        )
    for name, shape in expected_shapes.items():
        if tuple(params[name].shape) != tuple(shape):
            raise CheckpointError(
                f"tensor '{name}' has shape {params[name].shape}, expected {shape}"
            )
