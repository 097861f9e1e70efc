"""Reasoner checkpoints: named parameter tensors behind a JSON header.

Layout:

    bytes 0..5   magic: "DCRC", a NUL byte, then "1"
    bytes 6..9   header length H, unsigned 32-bit little-endian
    bytes 10..   H bytes of UTF-8 JSON, then the tensor payloads

The header carries the reasoner configuration, an ``order_pretrained``
flag and the ordered tensor directory (name + shape). Payloads are
little-endian float32 in directory order, so a save/load/save cycle is
byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .reasoners import ReasonerConfig, build_reasoner

MAGIC = b"DCRC" + b"\x00" + b"1"
_LEN = struct.Struct("<I")


class CheckpointError(Exception):
    """Malformed or incompatible checkpoint file."""


def save_checkpoint(path, model, extra: dict | None = None) -> None:
    """Serialize a reasoner (and optionally extra named tensors, e.g.
    classifier heads, passed as {name: Tensor})."""
    tensors = dict(model.params)
    if extra:
        for name, t in extra.items():
            tensors[f"extra.{name}"] = t
    directory = [{"name": name, "shape": list(t.shape)} for name, t in tensors.items()]
    header = {
        "format": "DCRC",
        "version": 1,
        "config": model.config.to_dict(),
        "order_pretrained": bool(model.order_pretrained),
        "tensors": directory,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(blob)))
        fh.write(blob)
        for t in tensors.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path, seed: int = 0):
    """Rebuild the reasoner stored at ``path``.

    Returns (model, extra) where extra maps any non-reasoner tensor names
    to float32 arrays.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + _LEN.size:
        raise CheckpointError(f"{path}: shorter than the fixed header")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:len(MAGIC)]!r}")
    (hlen,) = _LEN.unpack_from(raw, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    if header.get("version") != 1:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    config = ReasonerConfig.from_dict(header["config"])
    model = build_reasoner(config, seed=seed)
    model.order_pretrained = bool(header.get("order_pretrained", False))

    offset = start + hlen
    extra: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: payload truncated at tensor {entry['name']!r}")
        values = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape)
        offset = end
        name = entry["name"]
        if name.startswith("extra."):
            extra[name[len("extra.") :]] = values.copy()
        elif name in model.params:
            model.params[name].data = values.astype(config.np_dtype)
        else:
            raise CheckpointError(f"{path}: unexpected tensor {name!r} for this architecture")
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    missing = set(model.params) - {e["name"] for e in header["tensors"]}
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    return model, extra
