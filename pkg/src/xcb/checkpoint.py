"""Checkpoint persistence: a JSON manifest followed by one contiguous
little-endian float64 blob. Writing then reading round-trips bit-exactly,
and a write -> read -> write cycle produces byte-identical files.

Layout: 8-byte magic, little-endian uint64 manifest length, UTF-8 JSON
manifest {"meta": {...}, "tensors": [{name, shape, dtype, byte_offset}]},
then the raw tensor bytes in manifest order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError
from .tensor import Tensor

MAGIC = b"XCBCKPT1"


def save_checkpoint(path, params: dict[str, Tensor], meta: dict) -> None:
    names = sorted(params)
    tensors = []
    offset = 0
    blobs = []
    for name in names:
        data = np.ascontiguousarray(params[name].data, dtype="<f8")
        tensors.append({
            "name": name,
            "shape": list(data.shape),
            "dtype": "<f8",
            "byte_offset": offset,
        })
        raw = data.tobytes()
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"meta": meta, "tensors": tensors},
                          sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict[str, Tensor], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        try:
            manifest = json.loads(fh.read(mlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: corrupt manifest ({exc})") from None
        blob = fh.read()
    params: dict[str, Tensor] = {}
    for entry in manifest["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["byte_offset"])
        end = start + 8 * count
        if entry.get("dtype") != "<f8":
            raise DataError(f"{path}: unsupported dtype {entry.get('dtype')!r}")
        if end > len(blob):
            raise DataError(f"{path}: blob truncated for tensor {entry['name']!r}")
        arr = np.frombuffer(blob[start:end], dtype="<f8").reshape(shape)
        params[entry["name"]] = Tensor(arr.astype(np.float64), requires_grad=True)
    return params, manifest["meta"]
