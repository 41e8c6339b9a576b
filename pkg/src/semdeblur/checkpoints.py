"""Versioned binary checkpoint container.

Layout: 6-byte kind magic | uint32 header length | UTF-8 JSON header |
raw little-endian tensor payload. The header carries the format version, a
config echo, extras, and the tensor index (name, dtype, shape, offset).
Tensors are written in sorted name order and the JSON uses sorted keys, so
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

VERSION = 1

KIND_MAGIC = {
    "parsing": b"PCKPT1",
    "generator": b"GCKPT1",
    "discriminator": b"DCKPT1",
    "trainer": b"TCKPT1",
}
MAGIC_KIND = {v: k for k, v in KIND_MAGIC.items()}

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4",
           "uint8": "|u1"}


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict[str, np.ndarray]
    extras: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    if ckpt.kind not in KIND_MAGIC:
        raise CheckpointError(f"unknown checkpoint kind {ckpt.kind!r}")
    names = sorted(ckpt.tensors)
    index = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(ckpt.tensors[name])
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {dtype}")
        blob = arr.astype(_DTYPES[dtype]).tobytes()
        index.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "version": VERSION,
        "kind": ckpt.kind,
        "config": json.loads(json.dumps(ckpt.config)),
        "extras": json.loads(json.dumps(ckpt.extras)),
        "tensors": index,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(KIND_MAGIC[ckpt.kind])
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expect_kind: str | None = None) -> Checkpoint:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 10:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic = data[:6]
    if magic not in MAGIC_KIND:
        raise CheckpointError(f"{path}: unrecognized magic {magic!r}")
    kind = MAGIC_KIND[magic]
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(
            f"{path}: expected a {expect_kind} checkpoint, found {kind}")
    (head_len,) = struct.unpack_from("<I", data, 6)
    head_end = 10 + head_len
    if head_end > len(data):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[10:head_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if header.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: unsupported version {header.get('version')} (want {VERSION})")
    if header.get("kind") != kind:
        raise CheckpointError(f"{path}: header kind disagrees with magic")
    tensors = {}
    payload = data[head_end:]
    for entry in header["tensors"]:
        lo = entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(payload):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']!r}")
        arr = np.frombuffer(payload[lo:hi], dtype=_DTYPES[entry["dtype"]])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
    return Checkpoint(kind=kind, config=header["config"], tensors=tensors,
                      extras=header["extras"])


def state_dict_to_numpy(state_dict) -> dict[str, np.ndarray]:
    """Flatten a torch state dict into name -> numpy array."""
    out = {}
    for name, tensor in state_dict.items():
        out[name] = tensor.detach().cpu().numpy().copy()
    return out


def load_state_dict_from_numpy(module, tensors: dict[str, np.ndarray],
                               prefix: str = "") -> None:
    """Load matching tensors back into a torch module, strict on names."""
    import torch

    want = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    state = module.state_dict()
    missing = sorted(set(state) - set(want))
    extra = sorted(set(want) - set(state))
    if missing or extra:
        raise CheckpointError(
            f"state mismatch: missing {missing[:4]}, unexpected {extra[:4]}")
    module.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in want.items()})
