"""Checksummed binary container shared by checkpoints and absorbed models.

Layout (little-endian)::

    magic      4s   file kind tag
    version    u16
    reserved   u16
    layers     u32  number of layers described
    meta_len   u64  length of the JSON metadata block
    meta       meta_len bytes of UTF-8 JSON (includes the array table)
    payload    raw array bytes in table order
    checksum   8 bytes, BLAKE2b-64 over everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import ChecksumError, FormatError, UnsupportedVersionError

_HEADER = struct.Struct("<4sHHIQ")
_CHECKSUM_SIZE = 8


def checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=_CHECKSUM_SIZE).digest()


def encode(magic: bytes, version: int, layer_count: int, meta: dict, arrays: dict) -> bytes:
    table = []
    chunks = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        table.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    meta = dict(meta, arrays=table)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    body = _HEADER.pack(magic, version, 0, layer_count, len(meta_bytes)) + meta_bytes + b"".join(chunks)
    return body + checksum(body)


def decode(blob: bytes, magic: bytes, supported_versions) -> tuple[dict, dict, int]:
    """Return ``(meta, arrays, layer_count)``; validates magic, checksum, version."""
    if len(blob) < _HEADER.size + _CHECKSUM_SIZE:
        raise ChecksumError("file is truncated")
    got_magic, version, _, layer_count, meta_len = _HEADER.unpack_from(blob)
    if got_magic != magic:
        raise FormatError(f"bad magic {got_magic!r}, expected {magic!r}")
    body, stored = blob[:-_CHECKSUM_SIZE], blob[-_CHECKSUM_SIZE:]
    if checksum(body) != stored:
        raise ChecksumError("checksum mismatch (file corrupt or truncated)")
    if version not in supported_versions:
        raise UnsupportedVersionError(f"container version {version} is not supported")
    offset = _HEADER.size
    try:
        meta = json.loads(body[offset:offset + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable metadata: {exc}") from None
    offset += meta_len
    arrays = {}
    for entry in meta.pop("arrays"):
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(body):
            raise FormatError(f"array {entry['name']} runs past end of payload")
        arr = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
        offset += nbytes
    if offset != len(body):
        raise FormatError("trailing bytes after payload")
    return meta, arrays, layer_count


def write(path, magic, version, layer_count, meta, arrays):
    Path(path).write_bytes(encode(magic, version, layer_count, meta, arrays))


def read(path, magic, supported_versions):
    return decode(Path(path).read_bytes(), magic, supported_versions)
