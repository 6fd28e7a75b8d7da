"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"RFLT"                      magic
    u32 version                  currently 1
    u32 n, n bytes               network config as UTF-8 JSON (sorted keys)
    u64 step, u64 seed
    table                        named parameters
    u32 k                        optimiser count, then per optimiser:
        u32 n, n bytes name
        u64 t
        table m, table v

    table  := u32 count, then count x (u32 n, n bytes name, tensor)
    tensor := u64 rank, rank x u64 extents, float32 data (row-major)

The feature-extractor weight file uses the same container with an empty
optimiser list.
"""
from __future__ import annotations

import io
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"RFLT"
VERSION = 1


class CheckpointError(OSError):
    """Unreadable, truncated or incompatible checkpoint file."""


@dataclass
class OptimizerState:
    t: int = 0
    m: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    v: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)


@dataclass
class Checkpoint:
    config: dict
    params: "OrderedDict[str, np.ndarray]"
    optimizers: "OrderedDict[str, OptimizerState]" = field(default_factory=OrderedDict)
    step: int = 0
    seed: int = 0


def write_tensor(fh, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<Q", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def _read(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def read_tensor(fh):
    (rank,) = struct.unpack("<Q", _read(fh, 8, "tensor rank"))
    if rank > 16:
        raise CheckpointError(f"implausible tensor rank {rank}")
    shape = struct.unpack(f"<{rank}Q", _read(fh, 8 * rank, "tensor extents"))
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    data = np.frombuffer(_read(fh, 4 * count, "tensor data"), dtype="<f4")
    return data.reshape(shape).astype(np.float32)


def _write_str(fh, s):
    b = s.encode("utf-8")
    fh.write(struct.pack("<I", len(b)))
    fh.write(b)


def _read_str(fh, what):
    (n,) = struct.unpack("<I", _read(fh, 4, what))
    return _read(fh, n, what).decode("utf-8")


def _write_table(fh, table):
    fh.write(struct.pack("<I", len(table)))
    for name, arr in table.items():
        _write_str(fh, name)
        write_tensor(fh, arr)


def _read_table(fh):
    (count,) = struct.unpack("<I", _read(fh, 4, "table size"))
    out = OrderedDict()
    for _ in range(count):
        name = _read_str(fh, "tensor name")
        out[name] = read_tensor(fh)
    return out


def dumps(ckpt):
    fh = io.BytesIO()
    fh.write(MAGIC)
    fh.write(struct.pack("<I", VERSION))
    _write_str(fh, json.dumps(ckpt.config, sort_keys=True, separators=(",", ":")))
    fh.write(struct.pack("<QQ", ckpt.step, ckpt.seed))
    _write_table(fh, ckpt.params)
    fh.write(struct.pack("<I", len(ckpt.optimizers)))
    for name, opt in ckpt.optimizers.items():
        _write_str(fh, name)
        fh.write(struct.pack("<Q", opt.t))
        _write_table(fh, opt.m)
        _write_table(fh, opt.v)
    return fh.getvalue()


def loads(buf):
    fh = io.BytesIO(buf)
    if fh.read(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic bytes)")
    (version,) = struct.unpack("<I", _read(fh, 4, "version"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        config = json.loads(_read_str(fh, "config"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt config block ({exc})") from exc
    step, seed = struct.unpack("<QQ", _read(fh, 16, "step/seed"))
    params = _read_table(fh)
    (k,) = struct.unpack("<I", _read(fh, 4, "optimizer count"))
    optimizers = OrderedDict()
    for _ in range(k):
        name = _read_str(fh, "optimizer name")
        (t,) = struct.unpack("<Q", _read(fh, 8, "optimizer step"))
        optimizers[name] = OptimizerState(t, _read_table(fh), _read_table(fh))
    if fh.read(1):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(config, params, optimizers, step, seed)


def save(path, ckpt):
    try:
        with open(path, "wb") as fh:
            fh.write(dumps(ckpt))
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot write checkpoint ({exc})") from exc


def load(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    try:
        return loads(buf)
    except CheckpointError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
