"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"INDYCKPT"            8-byte magic
    uint32                 format version
    uint64                 manifest length in bytes
    manifest               UTF-8 JSON, keys sorted
    payload                float64 tensors, in manifest order

The manifest lists every tensor's name, shape and element offset, plus the
architecture, optimizer step, rng state and free-form training metadata.
Serialization is canonical: save(load(f)) reproduces ``f`` byte for byte.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import Architecture, Model

MAGIC = b"INDYCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")


class CheckpointFormatError(ValueError):
    pass


@dataclass
class OptState:
    """Adam first/second moments keyed by tensor name, and the step count."""

    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, model: Model) -> "OptState":
        tensors = model.tensors()
        return cls({k: np.zeros_like(a) for k, a in tensors.items()}, {k: np.zeros_like(a) for k, a in tensors.items()}, 0)


@dataclass
class Checkpoint:
    arch: Architecture
    params: dict  # tensor name -> array, in Model.tensors() order
    opt: OptState | None = None
    rng_state: dict | None = None
    step: int = 0
    best_val_cer: float | None = None
    meta: dict = field(default_factory=dict)
    best_params: dict | None = None  # best-so-far snapshot, kept for resuming

    def model(self) -> Model:
        model = Model.zeros(self.arch)
        model.load_tensors(self.params)
        return model

    def best_model(self) -> Model:
        model = Model.zeros(self.arch)
        model.load_tensors(self.best_params if self.best_params is not None else self.params)
        return model

    @classmethod
    def from_model(cls, model: Model, **kwargs) -> "Checkpoint":
        return cls(model.arch, {k: a.copy() for k, a in model.tensors().items()}, **kwargs)

    def _groups(self):
        yield "model", self.params
        if self.opt is not None:
            yield "adam.m", self.opt.m
            yield "adam.v", self.opt.v
        if self.best_params is not None:
            yield "best", self.best_params


def to_bytes(ckpt: Checkpoint) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for group, tensors in ckpt._groups():
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            entries.append({"name": f"{group}/{name}", "shape": list(arr.shape), "offset": offset})
            offset += arr.size
            chunks.append(arr.tobytes())
    manifest = {
        "arch": ckpt.arch.to_dict(),
        "tensors": entries,
        "payload_elements": offset,
        "opt_t": None if ckpt.opt is None else ckpt.opt.t,
        "rng": ckpt.rng_state,
        "step": ckpt.step,
        "best_val_cer": ckpt.best_val_cer,
        "meta": ckpt.meta,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(mbytes)) + mbytes + b"".join(chunks)


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < _HEADER.size:
        raise CheckpointFormatError("file too short for a checkpoint header")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    start = _HEADER.size
    if start + mlen > len(data):
        raise CheckpointFormatError("manifest extends past end of file")
    try:
        manifest = json.loads(data[start : start + mlen].decode("utf-8"))
        arch = Architecture.from_dict(manifest["arch"])
        entries = manifest["tensors"]
        total = int(manifest["payload_elements"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CheckpointFormatError(f"bad manifest: {e}") from None
    payload = data[start + mlen :]
    if len(payload) != 8 * total:
        raise CheckpointFormatError(f"payload is {len(payload)} bytes, manifest declares {8 * total}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)

    groups: dict = {}
    expected = 0
    for e in entries:
        shape = tuple(int(s) for s in e["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        if int(e["offset"]) != expected:
            raise CheckpointFormatError(f"tensor {e['name']} has offset {e['offset']}, expected {expected}")
        group, _, name = e["name"].partition("/")
        groups.setdefault(group, {})[name] = flat[expected : expected + count].reshape(shape).copy()
        expected += count
    if expected != total:
        raise CheckpointFormatError(f"tensor sizes sum to {expected}, manifest declares {total}")

    reference = {k: a.shape for k, a in Model.zeros(arch).tensors().items()}
    for group, tensors in groups.items():
        if {k: a.shape for k, a in tensors.items()} != reference or list(tensors) != list(reference):
            raise CheckpointFormatError(f"tensor group {group!r} does not match architecture {arch.label()}")
    if "model" not in groups:
        raise CheckpointFormatError("checkpoint has no model tensors")
    opt = None
    if "adam.m" in groups:
        if "adam.v" not in groups or manifest["opt_t"] is None:
            raise CheckpointFormatError("incomplete optimizer state")
        opt = OptState(groups["adam.m"], groups["adam.v"], int(manifest["opt_t"]))
    return Checkpoint(
        arch,
        groups["model"],
        opt,
        manifest.get("rng"),
        int(manifest.get("step", 0)),
        manifest.get("best_val_cer"),
        manifest.get("meta", {}),
        groups.get("best"),
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
