"""Versioned checkpoint container.

Layout: an 8-byte magic, a little-endian uint32 format version, a uint64
header length, a JSON header, then the concatenated raw little-endian float32
array payload. The header records the network-config fingerprint, per-array
metadata (key, shape, offset), and arbitrary JSON metadata; loading verifies
magic, version, and fingerprint.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import StateError

MAGIC = b"CRSRCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def write_container(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Atomically write header metadata plus named float32 arrays."""
    entries = []
    chunks = []
    offset = 0
    for key in sorted(arrays):
        arr = np.asarray(arrays[key], dtype="<f4")
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        raw = arr.tobytes()
        entries.append({"key": key, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    full_header = dict(header)
    full_header["arrays"] = entries
    blob = json.dumps(full_header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)
    os.replace(tmp, path)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back (header, arrays); corrupt files raise OSError."""
    with open(path, "rb") as fh:
        prefix = fh.read(_PREFIX.size)
        if len(prefix) != _PREFIX.size:
            raise OSError(f"corrupt checkpoint {path}: truncated prefix")
        magic, version, header_len = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            raise OSError(f"not a checkpoint file: {path}")
        if version != VERSION:
            raise StateError(f"checkpoint version {version} unsupported (expected {VERSION})")
        blob = fh.read(header_len)
        if len(blob) != header_len:
            raise OSError(f"corrupt checkpoint {path}: truncated header")
        try:
            header = json.loads(blob.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise OSError(f"corrupt checkpoint {path}: bad header ({exc})") from exc
        payload = fh.read()
    arrays: dict[str, np.ndarray] = {}
    for entry in header.pop("arrays", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise OSError(f"corrupt checkpoint {path}: array {entry['key']} out of bounds")
        arrays[entry["key"]] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).copy()
    return header, arrays
