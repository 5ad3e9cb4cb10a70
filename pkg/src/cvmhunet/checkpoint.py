"""Binary checkpoint format for named tensors.

Layout (all integers little-endian):

    magic   4 bytes  b"CVCK"
    version u32      currently 1
    count   u32      number of entries
    entry*  u16 name length, UTF-8 name bytes,
            u8 rank, u32 dims[rank], float32 payload (row major)

Model checkpoints store every parameter plus every persistent buffer
(batch-norm running statistics) under their hierarchical names.  Loading is
strict: unknown names, missing names, or shape mismatches raise
``CheckpointError``.
"""

from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

from .module import Module

__all__ = ["CheckpointError", "save_tensors", "load_tensors", "save_model", "load_model"]

MAGIC = b"CVCK"
VERSION = 1


class CheckpointError(IOError):
    pass


def save_tensors(path: str, tensors: Mapping[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(arr.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_tensors(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        offset = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", blob, offset) if rank else ()
            offset += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
            offset += 4 * n
            out[name] = payload.reshape(dims).copy()
        if offset != len(blob):
            raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes after last entry")
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from exc
    return out


def model_state(model: Module) -> dict[str, np.ndarray]:
    state: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        state[name] = p.data
    for name, buf in model.named_buffers():
        state[name] = buf
    return state


def save_model(path: str, model: Module) -> None:
    save_tensors(path, model_state(model))


def apply_model_state(model: Module, loaded: Mapping[str, np.ndarray], source: str = "state") -> None:
    """Strictly copy a name->array mapping into a model's params and buffers."""
    expected = model_state(model)
    missing = sorted(set(expected) - set(loaded))
    unknown = sorted(set(loaded) - set(expected))
    if missing or unknown:
        raise CheckpointError(
            f"{source}: state mismatch (missing: {missing[:5]}, unknown: {unknown[:5]})"
        )
    for name, p in model.named_parameters():
        arr = loaded[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"{source}: {name} has shape {arr.shape}, expected {p.data.shape}")
        p.data = arr.astype(p.data.dtype)
    for name, buf in model.named_buffers():
        arr = loaded[name]
        if arr.shape != buf.shape:
            raise CheckpointError(f"{source}: {name} has shape {arr.shape}, expected {buf.shape}")
        buf[...] = arr.astype(buf.dtype)


def load_model(path: str, model: Module) -> None:
    apply_model_state(model, load_tensors(path), source=str(path))
