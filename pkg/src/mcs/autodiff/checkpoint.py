"""Flat binary checkpoint container.

Layout::

    b"MCSCKPT\\0"            8-byte magic
    uint64 little-endian    header length in bytes
    header                  UTF-8 JSON: {"format_version", "dtype", "tensors": [...]}
    payload                 concatenated little-endian float64 tensors

Each header tensor entry carries ``name``, ``shape``, ``offset`` and
``nbytes`` relative to the start of the payload.
"""
from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"MCSCKPT\0"
FORMAT_VERSION = 1
DTYPE_TAG = "f64-le"


class CheckpointError(ValueError):
    pass


def encode(tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {"format_version": FORMAT_VERSION, "dtype": DTYPE_TAG, "tensors": entries}
    if meta:
        header["meta"] = dict(meta)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def decode(blob: bytes) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + hlen].decode())
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    if header.get("dtype") != DTYPE_TAG:
        raise CheckpointError(f"unsupported dtype tag {header.get('dtype')}")
    payload = memoryview(blob)[16 + hlen:]
    out = OrderedDict()
    for e in header["tensors"]:
        chunk = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointError(f"truncated payload for {e['name']!r}")
        out[e["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return out, header.get("meta", {})


def save(path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> str:
    """Write a checkpoint and return the sha256 of its bytes."""
    blob = encode(tensors, meta)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path):
    return decode(Path(path).read_bytes())


def content_hash(tensors: Mapping[str, np.ndarray]) -> str:
    return hashlib.sha256(encode(tensors)).hexdigest()
