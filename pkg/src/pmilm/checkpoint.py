"""Self-describing binary checkpoint container.

Layout::

    b"PMILMCKP"                  magic
    uint32 LE                    format version
    uint64 LE                    header length in bytes
    header                       UTF-8 JSON: config, mode, vocab hash, tensor table
    tensor data                  concatenated in table order, little-endian

Model parameters and optimizer moments are stored as ``<f4``; the unigram
counts used to build the noise distribution are stored as ``<i8`` so that
the distribution is reproduced exactly at evaluation time.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pmilm.io import atomic_write_bytes
from pmilm.model import ModelConfig, ModelParams

MAGIC = b"PMILMCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: ModelParams
    vocab_hash: str
    unigram_counts: np.ndarray
    noise_exponent: float = 1.0
    epoch: int = 0
    train_config: dict = field(default_factory=dict)
    optimizer_state: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return self.model_config.mode


def _config_dict(cfg: ModelConfig) -> dict:
    return {
        "vocab_size": cfg.vocab_size,
        "hidden": cfg.hidden,
        "layers": cfg.layers,
        "d": cfg.d,
        "dropout": cfg.dropout,
        "k": cfg.k,
        "mode": cfg.mode,
        "init_scale": cfg.init_scale,
        "forget_bias": cfg.forget_bias,
    }


def to_bytes(ckpt: Checkpoint) -> bytes:
    tensors: list[tuple[str, str, np.ndarray]] = []
    for name, arr in ckpt.params.named().items():
        tensors.append((name, "<f4", arr))
    tensors.append(("unigram_counts", "<i8", ckpt.unigram_counts))
    for name in sorted(ckpt.optimizer_state):
        tensors.append((f"optim.{name}", "<f4", ckpt.optimizer_state[name]))
    blobs, table = [], []
    for name, dtype, arr in tensors:
        data = np.ascontiguousarray(arr, dtype=dtype)
        table.append({"name": name, "dtype": dtype, "shape": list(data.shape)})
        blobs.append(data.tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "mode": ckpt.mode,
        "model_config": _config_dict(ckpt.model_config),
        "train_config": ckpt.train_config,
        "vocab_hash": ckpt.vocab_hash,
        "noise_exponent": ckpt.noise_exponent,
        "epoch": ckpt.epoch,
        "meta": ckpt.meta,
        "tensors": table,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + b"".join(blobs)


def save(ckpt: Checkpoint, path: str | Path) -> None:
    atomic_write_bytes(path, to_bytes(ckpt))


def from_bytes(raw: bytes) -> Checkpoint:
    start = len(MAGIC) + struct.calcsize("<IQ")
    if len(raw) < start or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, head_len = struct.unpack_from("<IQ", raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    try:
        header = json.loads(raw[start : start + head_len].decode("utf-8"))
        config = ModelConfig(**header["model_config"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    offset = start + head_len
    arrays = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(raw):
            raise CheckpointError(f"truncated checkpoint while reading {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError("trailing bytes after last tensor")

    expected = ModelParams.expected_shapes(config)
    param_arrays = {}
    for name, shape in expected.items():
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing tensor {name}")
        if arrays[name].shape != shape:
            raise CheckpointError(f"tensor {name} has shape {arrays[name].shape}, config implies {shape}")
        param_arrays[name] = arrays[name].astype(np.float64)
    counts = arrays.get("unigram_counts")
    if counts is None or counts.shape != (config.vocab_size,):
        raise CheckpointError("unigram_counts missing or inconsistent with vocab_size")
    known = set(expected) | {"unigram_counts"}
    optim = {}
    for name, arr in arrays.items():
        if name in known:
            continue
        if not name.startswith("optim."):
            raise CheckpointError(f"unexpected tensor {name}")
        optim[name[len("optim.") :]] = arr.astype(np.float64)
    return Checkpoint(
        model_config=config,
        params=ModelParams.from_named(param_arrays),
        vocab_hash=header["vocab_hash"],
        unigram_counts=counts.astype(np.int64),
        noise_exponent=header.get("noise_exponent", 1.0),
        epoch=header.get("epoch", 0),
        train_config=header.get("train_config", {}),
        optimizer_state=optim,
        meta=header.get("meta", {}),
    )


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
