"""Versioned binary container: a JSON index followed by raw float blobs.

Layout (all integers little-endian):

    bytes 0..7    magic b"MHAPGC01" (format version folded into the magic)
    bytes 8..11   uint32 header length H
    bytes 12..12+H  UTF-8 JSON header
    remainder     blob bytes, concatenated

The header is ``{"kind": ..., "index": {...}, "blobs": [{"name", "dtype",
"shape", "offset", "nbytes"}, ...]}`` where offsets are relative to the end
of the header. Weight blobs are stored as little-endian float32 ("<f4");
integer blobs as "<i4".
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MHAPGC01"


def write_container(path, kind: str, index: dict, blobs: dict[str, np.ndarray]) -> None:
    entries = []
    payload = bytearray()
    for name, arr in blobs.items():
        arr = np.asarray(arr)
        dtype = "<i4" if np.issubdtype(arr.dtype, np.integer) else "<f4"
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(arr.shape),
                "offset": len(payload),
                "nbytes": len(raw),
            }
        )
        payload.extend(raw)
    header = json.dumps({"kind": kind, "index": index, "blobs": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(bytes(payload))


def read_container(path, expect_kind: str | None = None):
    """Returns (index, blobs) with arrays restored at their stored dtype."""
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a {MAGIC.decode()} container")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + hlen].decode())
    if expect_kind is not None and header["kind"] != expect_kind:
        raise ValueError(f"{path}: expected kind {expect_kind!r}, found {header['kind']!r}")
    base = 12 + hlen
    blobs = {}
    for entry in header["blobs"]:
        start = base + entry["offset"]
        raw = data[start : start + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"])
        blobs[entry["name"]] = arr
    return header["index"], blobs
