"""Binary and JSON containers for (Dataset, Dag) pairs.

Binary layout (little-endian)::

    header   "SCMD" | version u16 | f u16 | n_obs u32 | n_int u32 |
             family u8 | mechanism u8 | noise u8 | seed u64
    values   n*f float64, row-major
    mask     n*f bits, row-major, packed MSB-first, padded to whole bytes
    adj      f rows, each packed MSB-first into ceil(f/8) bytes
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ContractError, FormatError
from .graphs import FAMILIES, Dag
from .scm import MECHANISMS, NOISES, Dataset

MAGIC = b"SCMD"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIBBBQ")


def _code(table, name, what):
    if name not in table:
        raise ContractError(f"cannot serialize {what} {name!r}")
    return table.index(name)


def serialize_dataset(dataset: Dataset, dag: Dag) -> bytes:
    if dataset.f != dag.f:
        raise ContractError(f"dataset has {dataset.f} features but dag has {dag.f} nodes")
    header = _HEADER.pack(
        MAGIC, VERSION, dataset.f, dataset.n_obs, dataset.n_int,
        _code(FAMILIES, dataset.family, "family"),
        _code(MECHANISMS, dataset.mechanism, "mechanism"),
        _code(NOISES, dataset.noise, "noise"),
        dataset.seed,
    )
    values = dataset.values.astype("<f8").tobytes()
    mask = np.packbits(dataset.intervention_mask.ravel()).tobytes()
    adj = np.packbits(dag.adj, axis=1).tobytes()
    return header + values + mask + adj


def deserialize_dataset(data: bytes) -> tuple[Dataset, Dag]:
    if len(data) < _HEADER.size:
        raise FormatError(f"truncated header: need {_HEADER.size} bytes, got {len(data)}", len(data))
    magic, version, f, n_obs, n_int, fam, mech, noise, seed = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if f < 2:
        raise FormatError(f"feature count {f} < 2", 6)
    for code, table, off, what in ((fam, FAMILIES, 16, "family"), (mech, MECHANISMS, 17, "mechanism"),
                                   (noise, NOISES, 18, "noise")):
        if code >= len(table):
            raise FormatError(f"unknown {what} id {code}", off)
    n = n_obs + n_int
    off = _HEADER.size

    def take(nbytes, what):
        nonlocal off
        if off + nbytes > len(data):
            raise FormatError(f"truncated {what}: need {nbytes} bytes", len(data))
        chunk = data[off:off + nbytes]
        off += nbytes
        return chunk

    values = np.frombuffer(take(8 * n * f, "values"), dtype="<f8").reshape(n, f).astype(np.float64)
    mask_start = off
    mask_bits = np.unpackbits(np.frombuffer(take((n * f + 7) // 8, "mask"), dtype=np.uint8))
    mask = mask_bits[: n * f].reshape(n, f)
    adj_start = off
    row_bytes = (f + 7) // 8
    adj = np.unpackbits(np.frombuffer(take(f * row_bytes, "adjacency"), dtype=np.uint8).reshape(f, row_bytes),
                        axis=1)[:, :f]
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes", off)
    try:
        dag = Dag(adj)
    except ContractError as exc:
        raise FormatError(f"invalid adjacency: {exc}", adj_start) from None
    try:
        ds = Dataset(values, mask, seed=seed, family=FAMILIES[fam], mechanism=MECHANISMS[mech],
                     noise=NOISES[noise], n_obs=n_obs, n_int=n_int)
    except ContractError as exc:
        raise FormatError(f"invalid intervention mask: {exc}", mask_start) from None
    return ds, dag


def write_dataset(path, dataset: Dataset, dag: Dag) -> None:
    Path(path).write_bytes(serialize_dataset(dataset, dag))


def read_dataset(path) -> tuple[Dataset, Dag]:
    return deserialize_dataset(Path(path).read_bytes())


def dataset_to_json(dataset: Dataset, dag: Dag) -> str:
    """Human-readable export; floats are written with full round-trip precision."""
    payload = {
        "meta": dataset.meta() | {"f": dataset.f},
        "adjacency": dag.adj.tolist(),
        "values": dataset.values.tolist(),
        "intervention_mask": dataset.intervention_mask.tolist(),
    }
    return json.dumps(payload)


def dataset_from_json(text: str) -> tuple[Dataset, Dag]:
    payload = json.loads(text)
    meta = dict(payload["meta"])
    meta.pop("f", None)
    return Dataset(payload["values"], payload["intervention_mask"], **meta), Dag(np.array(payload["adjacency"]))
