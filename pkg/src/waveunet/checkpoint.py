"""Binary checkpoint files.

Layout (all integers little-endian)::

    b"WUNC"                      magic
    u16                          format version (1)
    u32 + UTF-8 JSON             {"model": <ModelConfig>, "training": {...}?}
    repeated until EOF:
        u32 + UTF-8              parameter name
        u8                       rank
        u32 * rank               dims
        float32 * prod(dims)     values, row-major

Optimizer moments follow the parameters under ``adam.m.<name>`` and
``adam.v.<name>``. The JSON blob is written with sorted keys so the same
state always produces the same bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DecodeError
from .model import ModelConfig, ParameterSet

MAGIC = b"WUNC"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ParameterSet
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    training: dict | None = None


def _record(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def to_bytes(ckpt: Checkpoint) -> bytes:
    blob = {"model": ckpt.config.to_dict()}
    if ckpt.training is not None:
        blob["training"] = ckpt.training
    meta = json.dumps(blob, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(meta)), meta]
    for name, arr in ckpt.params.items():
        parts.append(_record(name, arr))
    for name, arr in ckpt.adam_m.items():
        parts.append(_record(f"adam.m.{name}", arr))
    for name, arr in ckpt.adam_v.items():
        parts.append(_record(f"adam.v.{name}", arr))
    return b"".join(parts)


def from_bytes(buf: bytes) -> Checkpoint:
    view = memoryview(buf)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise DecodeError(f"checkpoint truncated reading {what} at offset {pos}")
        out = view[pos : pos + n]
        pos += n
        return out

    if bytes(take(4, "magic")) != MAGIC:
        raise DecodeError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != VERSION:
        raise DecodeError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack("<I", take(4, "config length"))
    try:
        blob = json.loads(bytes(take(n, "config")).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"corrupt config blob: {exc}") from None
    config = ModelConfig.from_dict(blob["model"])
    params, m, v = ParameterSet(), {}, {}
    while pos < len(view):
        (ln,) = struct.unpack("<I", take(4, "name length"))
        name = bytes(take(ln, "name")).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"rank of {name}"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name}"))
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(bytes(take(4 * count, f"values of {name}")), dtype="<f4").reshape(dims)
        arr = arr.astype(np.float32)
        if name.startswith("adam.m."):
            m[name[7:]] = arr
        elif name.startswith("adam.v."):
            v[name[7:]] = arr
        else:
            params[name] = arr
    return Checkpoint(config, params, m, v, blob.get("training"))


def save(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
