"""Checkpoint file: 8-byte little-endian header length, JSON header, then the
parameters as little-endian float32 arrays concatenated in header order."""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT = "audiodiff-ckpt-1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config_hash: str
    vocab: list[str]
    mode: str
    step: int
    model_config: dict
    metrics: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "format": FORMAT,
            "config_hash": self.config_hash,
            "vocab": self.vocab,
            "mode": self.mode,
            "step": self.step,
            "model_config": self.model_config,
            "metrics": self.metrics,
            "params": [{"name": k, "shape": list(v.shape)} for k, v in self.params.items()],
        }


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    path = Path(path)
    header = json.dumps(ckpt.header(), sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in ckpt.params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path, expect_hash: str | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated")
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + n])
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
    payload = np.frombuffer(raw[8 + n :], dtype="<f4")
    sizes = [int(np.prod(p["shape"])) for p in header["params"]]
    if sum(sizes) != payload.size:
        raise CheckpointError(f"{path}: header declares {sum(sizes)} floats, payload holds {payload.size}")
    if expect_hash is not None and header["config_hash"] != expect_hash:
        raise CheckpointError(f"config hash mismatch: checkpoint {header['config_hash']}, config {expect_hash}")
    params, off = {}, 0
    for p, size in zip(header["params"], sizes):
        params[p["name"]] = payload[off : off + size].reshape(p["shape"]).astype(np.float32)
        off += size
    return Checkpoint(
        params,
        header["config_hash"],
        header["vocab"],
        header["mode"],
        header["step"],
        header["model_config"],
        header.get("metrics", {}),
    )
