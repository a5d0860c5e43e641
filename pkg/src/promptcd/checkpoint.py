"""Versioned checkpoint serialization.

Layout: magic, 8-byte header length, JSON header (sorted keys), then the
raw float64 little-endian buffers for every tensor in tag order (data,
first moment, second moment). No timestamps anywhere, so identical state
serializes to identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"PCDCKPT1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    meta: dict
    index_maps: dict
    adam_t: int = 0
    tensors: dict = field(default_factory=dict)
    moments: dict = field(default_factory=dict)

    def require(self, tag):
        if tag not in self.tensors:
            raise CheckpointError(f"checkpoint is missing tensor {tag!r}")
        return self.tensors[tag]


def checkpoint_from_store(store, meta, index_maps):
    ck = Checkpoint(meta=dict(meta), index_maps=index_maps, adam_t=store.adam_t)
    for tag in sorted(store.tags()):
        p = store[tag]
        ck.tensors[tag] = p.data.copy()
        ck.moments[tag] = (p.m.copy(), p.v.copy())
    return ck


def save_checkpoint(path, ck):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tags = sorted(ck.tensors)
    header = {
        "format_version": FORMAT_VERSION,
        "meta": ck.meta,
        "index_maps": ck.index_maps,
        "adam_t": ck.adam_t,
        "tensors": [{"tag": t, "shape": list(ck.tensors[t].shape)} for t in tags],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for tag in tags:
            zero = np.zeros_like(ck.tensors[tag])
            m, v = ck.moments.get(tag, (zero, zero))
            for arr in (ck.tensors[tag], m, v):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"not a checkpoint file: {path}")
        n = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(n).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {header.get('format_version')}"
            )
        ck = Checkpoint(
            meta=header["meta"],
            index_maps=header["index_maps"],
            adam_t=header["adam_t"],
        )
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            bufs = []
            for _ in range(3):
                raw = fh.read(8 * count)
                if len(raw) != 8 * count:
                    raise CheckpointError(f"truncated checkpoint: {path}")
                bufs.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
            ck.tensors[entry["tag"]] = bufs[0]
            ck.moments[entry["tag"]] = (bufs[1], bufs[2])
    return ck


def apply_to_store(ck, store, restore_moments=False):
    """Copy checkpoint values into matching store tags."""
    for tag in store.tags():
        arr = ck.require(tag)
        p = store[tag]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {tag!r}: checkpoint {arr.shape} vs store {p.data.shape}"
            )
        p.data[...] = arr
        if restore_moments:
            m, v = ck.moments[tag]
            p.m[...] = m
            p.v[...] = v
    if restore_moments:
        store.adam_t = ck.adam_t
