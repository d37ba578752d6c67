"""Binary model checkpoints.

Layout (all integers little-endian):

    8 bytes   magic b"SGPCKPT\\0"
    u32       container version (1)
    32 bytes  sha256 over the canonical parameter schema + version
    u32       metadata length, then that many bytes of UTF-8 JSON
    u32       parameter count, then per parameter:
                  u16 name length, name bytes,
                  u8 ndim, u32 per dim,
                  raw float64 little-endian payload

Metadata always contains the model config (under "model"); callers may add
anything JSON-serializable (dataset name, split spec, standardizer, train
config). Writing is deterministic: identical models and metadata produce
identical bytes, so reproducibility checks can compare files directly.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np
import torch

from .autodiff import parameter_schema
from .models import ModelConfig, SparseGPModel

MAGIC = b"SGPCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def schema_hash(model: SparseGPModel) -> bytes:
    table = {
        "version": VERSION,
        "params": [[name, list(shape)] for name, shape in parameter_schema(model)],
    }
    blob = json.dumps(table, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()


def save_checkpoint(path: str, model: SparseGPModel, extra: dict | None = None) -> None:
    meta = dict(extra or {})
    meta["model"] = model.config.to_dict()
    meta_blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    entries = list(model.named_parameters())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(schema_hash(model))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(entries)))
        for name, param in entries:
            name_b = name.encode()
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            shape = tuple(param.shape)
            fh.write(struct.pack("<B", len(shape)))
            for dim in shape:
                fh.write(struct.pack("<I", dim))
            fh.write(param.detach().numpy().astype("<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    blob = fh.read(n)
    if len(blob) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return blob


def load_checkpoint(path: str) -> tuple[SparseGPModel, dict]:
    """Rebuild the model from its stored config and load every parameter.

    Returns (model, metadata). The stored schema hash must match the hash
    of the rebuilt model, so a config/parameter mismatch fails loudly.
    """
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        stored_hash = _read_exact(fh, 32, "schema hash")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, "metadata length"))
        meta = json.loads(_read_exact(fh, meta_len, "metadata").decode())
        config = ModelConfig.from_dict(meta["model"])
        model = SparseGPModel(config)
        if schema_hash(model) != stored_hash:
            raise CheckpointError(
                "schema hash mismatch: checkpoint does not fit the stored config"
            )
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        params = dict(model.named_parameters())
        if count != len(params):
            raise CheckpointError(
                f"checkpoint stores {count} parameters, model has {len(params)}"
            )
        with torch.no_grad():
            for _ in range(count):
                (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
                name = _read_exact(fh, name_len, "name").decode()
                if name not in params:
                    raise CheckpointError(f"unexpected parameter {name!r}")
                (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
                shape = tuple(
                    struct.unpack("<I", _read_exact(fh, 4, "dim"))[0]
                    for _ in range(ndim)
                )
                param = params[name]
                if shape != tuple(param.shape):
                    raise CheckpointError(
                        f"parameter {name!r} has shape {shape}, expected {tuple(param.shape)}"
                    )
                numel = int(np.prod(shape)) if shape else 1
                payload = _read_exact(fh, 8 * numel, f"payload of {name}")
                values = np.frombuffer(payload, dtype="<f8").reshape(shape)
                param.copy_(torch.as_tensor(values.copy(), dtype=param.dtype))
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after parameter table")
    return model, meta
