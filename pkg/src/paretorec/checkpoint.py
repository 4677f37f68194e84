"""Binary checkpoint container.

Layout (all integers little-endian)::

    offset  size  content
    0       8     magic b"PRCKPT\\x00\\x00"
    8       4     uint32 format version (currently 1)
    12      8     uint64 header length H
    20      H     UTF-8 JSON header
    20+H    D     tensor payload, float64 little-endian, C order
    end-32  32    SHA-256 of every preceding byte

The header holds ``model_config``, ``train_config`` (or null),
``optimizer`` ({"step", "beta1", "beta2", "eps"}) and ``tensors``: a list of
``{"name", "kind", "shape", "offset", "count"}`` entries, where ``kind`` is
``param``, ``adam_m`` or ``adam_v`` and ``offset``/``count`` are in float64
elements from the start of the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Optional

import numpy as np

from .exceptions import CorruptCheckpoint, VersionMismatch
from .model import ModelConfig, Parameters
from .training import AdamState, TrainConfig

MAGIC = b"PRCKPT\x00\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32
_F64 = np.dtype("<f8")


def checkpoint_bytes(params: Parameters, opt: Optional[AdamState] = None, cfg: Optional[TrainConfig] = None) -> bytes:
    opt = AdamState() if opt is None else opt
    entries, chunks, offset = [], [], 0
    groups = [("param", params.tensors), ("adam_m", opt.m), ("adam_v", opt.v)]
    for kind, tensors in groups:
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=_F64)
            entries.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset, "count": arr.size})
            chunks.append(arr.tobytes())
            offset += arr.size
    header = {
        "model_config": params.config.to_dict(),
        "train_config": cfg.to_dict() if cfg is not None else None,
        "optimizer": {"step": opt.step, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps},
        "tensors": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(params: Parameters, opt: Optional[AdamState], cfg: Optional[TrainConfig], path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params, opt, cfg))


def parse_checkpoint(blob: bytes):
    """Return ``(params, opt, train_config_or_None)`` from checkpoint bytes."""
    if len(blob) < _PREFIX.size + _DIGEST:
        raise CorruptCheckpoint("file too short")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptCheckpoint("bad magic")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint("checksum mismatch")
    try:
        header = json.loads(body[_PREFIX.size : _PREFIX.size + head_len])
        payload = np.frombuffer(body, dtype=_F64, offset=_PREFIX.size + head_len)
        groups = {"param": {}, "adam_m": {}, "adam_v": {}}
        for e in header["tensors"]:
            arr = payload[e["offset"] : e["offset"] + e["count"]].reshape(e["shape"])
            groups[e["kind"]][e["name"]] = arr.astype(np.float64, copy=True)
        config = ModelConfig(**header["model_config"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptCheckpoint(f"unreadable header or payload: {exc}") from exc
    o = header["optimizer"]
    opt = AdamState(groups["adam_m"], groups["adam_v"], o["step"], o["beta1"], o["beta2"], o["eps"])
    tc = header["train_config"]
    cfg = TrainConfig(**tc) if tc is not None else None
    return Parameters(config, groups["param"]), opt, cfg


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
