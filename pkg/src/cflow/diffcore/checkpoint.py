"""Binary checkpoint format for Mlp networks.

Layout (all integers little-endian uint32, floats little-endian float64):

    bytes 0..7   magic  b"CFLOWNET"
    uint32       format version (currently 1)
    uint32       kind tag length, then that many UTF-8 bytes
    uint32       number of widths L
    uint32 * L   layer widths
    float64 *    parameter blocks in declaration order:
                 for each layer, W (fan_in * fan_out, row-major) then b

Round trips are bit-exact: the same bytes are produced for the same
parameters, and loading restores them exactly.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .nn import Mlp

__all__ = ["save_mlp", "load_mlp", "mlp_to_bytes", "mlp_from_buffer", "CheckpointError"]

MAGIC = b"CFLOWNET"
VERSION = 1


class CheckpointError(Exception):
    """Malformed or mismatched checkpoint data."""


def mlp_to_bytes(model: Mlp, kind: str = "mlp") -> bytes:
    tag = kind.encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(tag)))
    buf.write(tag)
    buf.write(struct.pack("<I", len(model.widths)))
    buf.write(struct.pack(f"<{len(model.widths)}I", *model.widths))
    for w, b in model.layers:
        buf.write(np.ascontiguousarray(w.data, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b.data, dtype="<f8").tobytes())
    return buf.getvalue()


def mlp_from_buffer(buf: io.BufferedIOBase) -> tuple[Mlp, str]:
    """Read one serialized network from ``buf``; returns (model, kind tag)."""
    magic = buf.read(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}; not a network checkpoint")
    (version,) = struct.unpack("<I", _read_exact(buf, 4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (tag_len,) = struct.unpack("<I", _read_exact(buf, 4))
    kind = _read_exact(buf, tag_len).decode("utf-8")
    (n_widths,) = struct.unpack("<I", _read_exact(buf, 4))
    widths = list(struct.unpack(f"<{n_widths}I", _read_exact(buf, 4 * n_widths)))
    model = Mlp(widths, seed=0)
    arrays = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = np.frombuffer(_read_exact(buf, 8 * fan_in * fan_out), dtype="<f8")
        b = np.frombuffer(_read_exact(buf, 8 * fan_out), dtype="<f8")
        arrays.append(w.reshape(fan_in, fan_out))
        arrays.append(b)
    model.load_state_arrays(arrays)
    return model, kind


def save_mlp(model: Mlp, path: str | Path, kind: str = "mlp") -> None:
    Path(path).write_bytes(mlp_to_bytes(model, kind=kind))


def load_mlp(path: str | Path, expect_kind: str | None = None) -> tuple[Mlp, str]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with path.open("rb") as fh:
        model, kind = mlp_from_buffer(fh)
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"checkpoint kind is {kind!r}, expected {expect_kind!r}")
    return model, kind


def _read_exact(buf: io.BufferedIOBase, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data
