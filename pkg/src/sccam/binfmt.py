"""Checksummed binary container used for checkpoints and dataset caches.

Byte layout (all integers little-endian)::

    offset  size  field
    0       8     magic (identifies the payload kind)
    8       4     format version, uint32
    12      4     header length N, uint32
    16      N     header, UTF-8 JSON object; key "arrays" lists
                  {"name", "dtype", "shape"} in storage order
    16+N    ...   array blobs in that order, C-contiguous, dtype "<f8" or "<i8"
    end-8   8     checksum: BLAKE2b (8-byte digest) of every preceding byte

Readers verify length and checksum before parsing anything, so a truncated or
corrupted file never yields a partial object.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Mapping

import numpy as np

from .errors import FormatError

_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


def checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def pack(magic: bytes, version: int, header: dict, arrays: Mapping[str, np.ndarray]) -> bytes:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    table, blobs = [], []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        kind = "i8" if np.issubdtype(arr.dtype, np.integer) else "f8"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[kind])
        table.append({"name": name, "dtype": kind, "shape": list(data.shape)})
        blobs.append(data.tobytes())
    head = json.dumps({**header, "arrays": table}, sort_keys=True, separators=(",", ":")).encode()
    body = magic + struct.pack("<II", version, len(head)) + head + b"".join(blobs)
    return body + checksum(body)


def unpack(data: bytes, magic: bytes, version: int) -> tuple[dict, dict]:
    if len(data) < 24:
        raise FormatError(f"file too short ({len(data)} bytes)")
    if data[:8] != magic:
        raise FormatError(f"bad magic {data[:8]!r}, expected {magic!r}")
    body, digest = data[:-8], data[-8:]
    if checksum(body) != digest:
        raise FormatError("checksum mismatch (file truncated or corrupted)")
    ver, hlen = struct.unpack("<II", data[8:16])
    if ver != version:
        raise FormatError(f"format version {ver} not supported (expected {version})")
    header = json.loads(body[16:16 + hlen].decode())
    arrays = {}
    pos = 16 + hlen
    for entry in header.pop("arrays"):
        dt = _DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if pos + n > len(body):
            raise FormatError(f"array {entry['name']!r} overruns payload")
        arrays[entry["name"]] = np.frombuffer(body[pos:pos + n], dtype=dt).reshape(shape).copy()
        pos += n
    if pos != len(body):
        raise FormatError("trailing bytes after declared arrays")
    return header, arrays
