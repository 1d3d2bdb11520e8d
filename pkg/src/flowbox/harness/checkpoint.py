"""Checkpoint container.

Layout: ``FBCK`` | u32 version | u64 metadata length | metadata JSON |
u32 tensor count | per tensor: u32 name length, utf-8 name, u32 ndim,
ndim x u64 dims, little-endian f64 data.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FBCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path, tensors: dict[str, np.ndarray], metadata: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = json.dumps(metadata, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(meta)), meta, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        if not arr.flags.c_contiguous:
            arr = arr.copy(order="C")  # ascontiguousarray would promote 0-d to 1-d
        key = name.encode()
        parts.append(struct.pack("<I", len(key)) + key + struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    path.write_bytes(b"".join(parts))
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    version, mlen = struct.unpack_from("<IQ", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    metadata = json.loads(raw[pos:pos + mlen].decode())
    pos += mlen
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", raw, pos)
        pos += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return tensors, metadata


def split_sections(tensors: dict) -> dict[str, dict]:
    """``model/layers.0.q.weight`` -> {"model": {"layers.0.q.weight": ...}}."""
    out: dict[str, dict] = {}
    for name, arr in tensors.items():
        section, _, key = name.partition("/")
        out.setdefault(section, {})[key] = arr
    return out


def join_sections(sections: dict[str, dict]) -> dict:
    return {f"{sec}/{k}": v for sec, d in sections.items() for k, v in d.items()}
