"""Checkpoint container.

Layout: 8-byte magic ``SISSACK1``, little-endian u32 header length, UTF-8
JSON header, then every tensor as little-endian float32 in header order.
The header records names, shapes, the architecture config, free-form
metadata and a SHA-256 of the tensor blob.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SISSACK1"


class CheckpointError(ValueError):
    pass


def dumps_checkpoint(config: dict, state: dict[str, np.ndarray], metadata: dict | None = None) -> bytes:
    names = list(state)
    blob = b"".join(np.asarray(state[n], dtype="<f4").tobytes() for n in names)
    header = {
        "format": 1,
        "config": config,
        "tensors": [{"name": n, "shape": list(np.shape(state[n]))} for n in names],
        "metadata": metadata or {},
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(hb)) + hb + blob


def loads_checkpoint(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if raw[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12:12 + hlen].decode())
    blob = raw[12 + hlen:]
    if hashlib.sha256(blob).hexdigest() != header["sha256"]:
        raise CheckpointError("checkpoint content hash mismatch")
    state = {}
    off = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape)
        state[entry["name"]] = arr.astype(np.float32)
        off += 4 * count
    if off != len(blob):
        raise CheckpointError("checkpoint blob size does not match header")
    return header, state


def save_checkpoint(path: str | Path, config: dict, state: dict[str, np.ndarray],
                    metadata: dict | None = None) -> int:
    raw = dumps_checkpoint(config, state, metadata)
    Path(path).write_bytes(raw)
    return len(raw)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads_checkpoint(Path(path).read_bytes())
