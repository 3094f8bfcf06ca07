"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic        8 bytes  b"HYPCKPT\\0"
    version      uint32
    meta_len     uint32, then meta_len bytes of UTF-8 JSON (sorted keys)
    n_tensors    uint32
    per tensor:
        name_len uint32, name (UTF-8)
        spec_len uint32, spec JSON (UTF-8; "null" for raw vectors)
        data_len uint64, data as float64 little-endian (data_len bytes)

Writes go to a temporary sibling file that is renamed into place, so an
interrupted run never leaves a truncated checkpoint under the final name.
"""
import json
import os
import struct
from pathlib import Path

import numpy as np

from .nn import FlatWeights, MLPSpec

MAGIC = b"HYPCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def encode(meta, tensors):
    """Serialize ``meta`` (JSON-able dict) and ``tensors`` (name -> (spec|None, values))."""
    meta_blob = _dumps(meta)
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_blob)), meta_blob,
             struct.pack("<I", len(tensors))]
    for name, (spec, values) in tensors.items():
        name_blob = name.encode()
        spec_blob = _dumps(spec.to_dict() if spec is not None else None)
        data = np.ascontiguousarray(values, dtype="<f8").tobytes()
        parts += [
            struct.pack("<I", len(name_blob)), name_blob,
            struct.pack("<I", len(spec_blob)), spec_blob,
            struct.pack("<Q", len(data)), data,
        ]
    return b"".join(parts)


def decode(blob):
    """Inverse of :func:`encode`: returns ``(meta, {name: (spec|None, values)})``."""
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"checkpoint truncated at byte {pos} (wanted {n} more)")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(8)) != MAGIC:
        raise CheckpointError("not a hypercolor checkpoint (bad magic)")
    version, meta_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(bytes(take(meta_len)))
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = bytes(take(n)).decode()
        (n,) = struct.unpack("<I", take(4))
        spec_d = json.loads(bytes(take(n)))
        (n,) = struct.unpack("<Q", take(8))
        if n % 8:
            raise CheckpointError(f"tensor {name!r} byte length {n} is not a multiple of 8")
        values = np.frombuffer(bytes(take(n)), dtype="<f8").astype(np.float64)
        spec = MLPSpec.from_dict(spec_d) if spec_d is not None else None
        tensors[name] = (spec, values)
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after last tensor")
    return meta, tensors


def atomic_write_bytes(path, data):
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save(path, meta, tensors):
    atomic_write_bytes(path, encode(meta, tensors))


def load(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode(path.read_bytes())


def weights_entry(spec: MLPSpec, weights: FlatWeights):
    return spec, weights.values


def restore_weights(entry, dtype=np.float64):
    spec, values = entry
    return spec, FlatWeights.bind(spec, values.astype(dtype))
