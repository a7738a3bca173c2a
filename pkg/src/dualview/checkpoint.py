"""Bit-exact checkpoint container.

Layout: magic ``DVA3``, format version u32 LE, tensor count u32 LE, then per
tensor: name length u16 LE, name UTF-8 bytes, rank u8, each dim u32 LE, raw
little-endian float32 values row-major.

Optimizer moments ride along under the reserved name prefixes ``adam.m.`` and
``adam.v.``; run metadata is a JSON text record stored byte-per-float under
``meta.config``.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .nn import AdamState, ParamSet

MAGIC = b"DVA3"
VERSION = 1
META_NAME = "meta.config"
RESERVED_PREFIXES = ("adam.m.", "adam.v.")


def _pack_tensor(fh, name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.tobytes())


def _text_to_floats(text):
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype("<f4")


def _floats_to_text(arr):
    return bytes(np.asarray(arr).astype(np.uint8)).decode("utf-8")


def save_checkpoint(path, params: ParamSet, adam: AdamState = None, meta: dict = None):
    meta = dict(meta or {})
    if adam is not None:
        meta["adam_t"] = adam.t
    entries = [(name, tensor) for name, tensor in params.items()]
    if adam is not None:
        offset = 0
        for name, shape in params.shapes():
            n = int(np.prod(shape))
            entries.append((f"adam.m.{name}", adam.m[offset:offset + n].reshape(shape)))
            entries.append((f"adam.v.{name}", adam.v[offset:offset + n].reshape(shape)))
            offset += n
    entries.append((META_NAME, _text_to_floats(json.dumps(meta, sort_keys=True))))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            _pack_tensor(fh, name, arr)


def load_checkpoint(path):
    """Returns ``(params, adam_or_none, meta)`` with float32 tensors."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    raw = {}
    order = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape)
        pos += 4 * n
        raw[name] = arr
        order.append(name)

    meta = {}
    if META_NAME in raw:
        meta = json.loads(_floats_to_text(raw.pop(META_NAME)))
        order.remove(META_NAME)
    param_names = [n for n in order if not n.startswith(RESERVED_PREFIXES)]
    params = ParamSet.from_arrays([(n, raw[n]) for n in param_names], dtype=np.float32)

    adam = None
    if any(n.startswith("adam.m.") for n in order):
        adam = AdamState.zeros(params)
        offset = 0
        for name, shape in params.shapes():
            n = int(np.prod(shape))
            adam.m[offset:offset + n] = raw[f"adam.m.{name}"].reshape(-1)
            adam.v[offset:offset + n] = raw[f"adam.v.{name}"].reshape(-1)
            offset += n
        adam.t = int(meta.get("adam_t", 0))
    return params, adam, meta
