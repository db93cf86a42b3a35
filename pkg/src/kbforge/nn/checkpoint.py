"""Versioned binary container for named parameter tensors.

Layout (all multi-byte integers little-endian):

    bytes 0..4   magic "KBFC" + format version byte (currently 0x01)
    bytes 5..13  uint64 header length in bytes
    header       UTF-8 JSON, keys sorted: {"meta": {...}, "tensors": [
                     {"name", "dtype", "shape"} ...]} with tensors sorted
                     by name
    payload      raw buffers in tensor-list order; float32 as '<f4',
                     float64 as '<f8', C order

Sorting plus sorted JSON keys makes the file a pure function of contents.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"KBFC\x01"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(Exception):
    pass


def _tensor_dict(params) -> dict[str, np.ndarray]:
    if isinstance(params, dict):
        return dict(params)
    out: dict[str, np.ndarray] = {}
    for p in params:
        if p.name in out:
            raise CheckpointError(f"duplicate parameter name {p.name!r}")
        out[p.name] = p.data
    return out


def save_checkpoint(path, params, meta: dict | None = None) -> None:
    tensors = _tensor_dict(params)
    entries = []
    for name in sorted(tensors):
        arr = tensors[name]
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for {name!r}")
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
    header = json.dumps({"meta": meta or {}, "tensors": entries},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for entry in entries:
            arr = tensors[entry["name"]]
            fh.write(np.ascontiguousarray(arr).astype(_DTYPES[entry["dtype"]]).tobytes())


def load_checkpoint(path):
    """Returns (meta, {name: array})."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic or unsupported version")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        tensors: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * np.dtype(_DTYPES[entry["dtype"]]).itemsize)
            arr = np.frombuffer(buf, dtype=_DTYPES[entry["dtype"]]).reshape(shape)
            tensors[entry["name"]] = arr.astype(entry["dtype"])
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"{path}: trailing bytes after payload")
    return header["meta"], tensors


def restore_parameters(params, tensors: dict[str, np.ndarray]) -> None:
    for p in params:
        if p.name not in tensors:
            raise CheckpointError(f"checkpoint missing parameter {p.name!r}")
        arr = tensors[p.name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {p.name!r}: {arr.shape} vs {p.data.shape}")
        p.data = arr.astype(p.data.dtype)
