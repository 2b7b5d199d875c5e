"""Binary checkpoint bundle.

Layout::

    b"DTRN" | version: u32 LE | header length: u64 LE | header (UTF-8 JSON) | payload

The header holds the model config, the vocabulary, optional training state,
and a manifest of ``{name, shape, offset}`` entries; each tensor is stored in
manifest order as little-endian float64 at ``offset`` bytes into the payload.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .codeprep import Vocabulary
from .model import ModelConfig, Transformer

MAGIC = b"DTRN"
VERSION = 1


class CheckpointError(ValueError):
    pass


class VersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: Vocabulary
    tensors: dict[str, np.ndarray]
    train_state: dict | None = None
    extra: dict = field(default_factory=dict)

    def model(self) -> Transformer:
        params = {k: T.parameter(v, k) for k, v in self.tensors.items() if "/" not in k}
        return Transformer(self.config, params)


def save(path: str | Path, model: Transformer, vocab: Vocabulary, train_state: dict | None = None,
         extra_tensors: dict[str, np.ndarray] | None = None, extra: dict | None = None) -> None:
    tensors = {name: p.data for name, p in model.params.items()}
    tensors.update(extra_tensors or {})
    manifest, offset = [], 0
    for name, arr in tensors.items():
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "config": model.config.to_dict(),
        "vocab": vocab.itos,
        "train_state": train_state,
        "extra": extra or {},
        "tensors": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", VERSION, len(blob)))
    buf.write(blob)
    for arr in tensors.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<IQ", raw, 4)
    if version != VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    start = 4 + 12
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None
    payload = memoryview(raw)[start + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if entry["offset"] + 8 * count > len(payload):
            raise CheckpointError(f"{path}: payload truncated at tensor {entry['name']}")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        tensors[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    return Checkpoint(
        config=ModelConfig.from_dict(header["config"]),
        vocab=Vocabulary(header["vocab"]),
        tensors=tensors,
        train_state=header.get("train_state"),
        extra=header.get("extra", {}),
    )
