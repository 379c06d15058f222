"""Named-tensor archive shared by encoder weight files and training checkpoints.

Layout::

    "TNSR" | version u16 | manifest length u32 | manifest (UTF-8 JSON) | data blob

The manifest lists ``{name, dtype, shape, offset, nbytes}`` for every tensor
(raw little-endian bytes inside the blob), a free-form ``meta`` object and the
SHA-256 of the blob. Readers validate the whole file before returning
anything, so a corrupted archive never yields partial state.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .errors import FormatError

MAGIC = b"TNSR"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_DTYPES = {"<f4", "<f8", "<i8", "<i4", "|u1", "|b1"}


def _as_numpy(t) -> np.ndarray:
    if isinstance(t, torch.Tensor):
        t = t.detach().cpu().numpy()
    arr = np.asarray(t, order="C")  # unlike ascontiguousarray, keeps 0-d shapes
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def encode_tensors(tensors: Mapping[str, object], meta: dict | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = _as_numpy(tensors[name])
        dtype = arr.dtype.str
        if dtype not in _DTYPES:
            raise TypeError(f"tensor {name!r}: unsupported dtype {dtype}")
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {"version": VERSION, "meta": meta or {}, "tensors": entries,
                "sha256": hashlib.sha256(blob).hexdigest()}
    mbytes = json.dumps(manifest, sort_keys=True, allow_nan=False).encode()
    return _PREFIX.pack(MAGIC, VERSION, len(mbytes)) + mbytes + blob


def decode_tensors(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(data) < _PREFIX.size:
        raise FormatError("truncated archive prefix", len(data))
    magic, version, mlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported archive version {version} (expected {VERSION})", 4)
    start = _PREFIX.size
    if start + mlen > len(data):
        raise FormatError("truncated manifest", len(data))
    try:
        manifest = json.loads(data[start:start + mlen].decode())
        entries = manifest["tensors"]
        digest = manifest["sha256"]
        meta = manifest["meta"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"corrupted manifest: {exc}", start) from None
    if manifest.get("version") != VERSION:
        raise FormatError(f"manifest version {manifest.get('version')} != {VERSION}", start)
    blob = data[start + mlen:]
    if hashlib.sha256(blob).hexdigest() != digest:
        raise FormatError("data blob checksum mismatch", start + mlen)
    out = {}
    for e in entries:
        try:
            name, dtype, shape, off, nbytes = e["name"], e["dtype"], e["shape"], e["offset"], e["nbytes"]
        except (KeyError, TypeError):
            raise FormatError(f"malformed tensor entry {e!r}", start) from None
        if dtype not in _DTYPES:
            raise FormatError(f"tensor {name!r}: unsupported dtype {dtype}", start)
        expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        if nbytes != expected or off < 0 or off + nbytes > len(blob):
            raise FormatError(f"tensor {name!r}: inconsistent size/offset", start + mlen + max(off, 0))
        out[name] = np.frombuffer(blob, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
                                  offset=off).reshape(shape).copy()
    return out, meta


def save_tensors(path, tensors: Mapping[str, object], meta: dict | None = None) -> None:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_tensors(tensors, meta))
    os.replace(tmp, path)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode_tensors(Path(path).read_bytes())


def state_hash(tensors: Mapping[str, object]) -> str:
    """SHA-256 over names, dtypes, shapes and raw bytes, in name order."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        arr = _as_numpy(tensors[name])
        h.update(name.encode())
        h.update(arr.dtype.str.encode())
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()
