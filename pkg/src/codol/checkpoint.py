"""Checkpoint container: JSON header plus raw little-endian tensor payload.

Layout on disk:

    [8 bytes]  header length N, little-endian unsigned 64-bit
    [N bytes]  canonical JSON header (sorted keys, compact separators)
    [...]      tensor bytes, concatenated in sorted tensor-name order

The header carries the config snapshot, the vocabulary, the protocol split,
the per-epoch train log, the frozen-backend spec and hash, and a tensor
directory mapping each name to its offset (relative to the payload start),
shape and dtype. Canonical JSON plus sorted tensor order makes saves
bit-identical for identical contents.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

FORMAT_VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): "f32", np.dtype("float64"): "f64"}


class CheckpointError(ValueError):
    """Raised for malformed, truncated or incompatible checkpoint files."""


@dataclass
class Checkpoint:
    config: dict[str, Any]
    vocab: dict[str, Any]
    split: dict[str, Any]
    train_log: list[dict[str, Any]]
    tensors: dict[str, np.ndarray]
    extra: dict[str, Any] = field(default_factory=dict)


def _header_dict(ckpt: Checkpoint) -> dict[str, Any]:
    directory: dict[str, Any] = {}
    offset = 0
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name])
        if arr.dtype not in _DTYPE_CODES:
            raise CheckpointError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        code = _DTYPE_CODES[arr.dtype]
        # shape is taken before ascontiguousarray elsewhere promotes 0-d to 1-d
        directory[name] = {"offset": offset, "shape": list(arr.shape), "dtype": code}
        offset += arr.nbytes
    return {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config,
        "vocab": ckpt.vocab,
        "split": ckpt.split,
        "train_log": ckpt.train_log,
        "extra": ckpt.extra,
        "tensors": directory,
    }


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(_header_dict(ckpt), sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for name in sorted(ckpt.tensors):
            arr = np.ascontiguousarray(ckpt.tensors[name])
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 8:
        raise CheckpointError(f"{path}: truncated (no header length)")
    (header_len,) = struct.unpack("<Q", blob[:8])
    if 8 + header_len > len(blob):
        raise CheckpointError(f"{path}: truncated header (want {header_len} bytes)")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path}: corrupt header ({err})") from err
    if not isinstance(header, dict):
        raise CheckpointError(f"{path}: header is not an object")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {version!r}")
    directory = header.get("tensors")
    if not isinstance(directory, dict):
        raise CheckpointError(f"{path}: missing tensor directory")
    payload = blob[8 + header_len :]
    tensors: dict[str, np.ndarray] = {}
    expected_offset = 0
    for name in sorted(directory):
        entry = directory[name]
        try:
            offset, shape, code = entry["offset"], entry["shape"], entry["dtype"]
        except (TypeError, KeyError) as err:
            raise CheckpointError(f"{path}: bad directory entry for {name!r}") from err
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype {code!r}")
        if offset != expected_offset:
            raise CheckpointError(f"{path}: tensor {name!r} offset {offset} is not contiguous")
        dtype = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
        tensors[name] = arr.reshape(shape).copy()
        expected_offset = offset + nbytes
    if expected_offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - expected_offset} trailing payload bytes")
    return Checkpoint(
        config=header.get("config", {}),
        vocab=header.get("vocab", {}),
        split=header.get("split", {}),
        train_log=header.get("train_log", []),
        tensors=tensors,
        extra=header.get("extra", {}),
    )
