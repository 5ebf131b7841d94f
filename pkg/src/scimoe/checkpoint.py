"""Checkpoint = JSON manifest + one blob of little-endian float32 tensors."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .model import MoETransformer

FORMAT = "scimoe-checkpoint"
VERSION = 1
MANIFEST = "manifest.json"
BLOB = "weights.bin"


def save_checkpoint(directory: str | Path, model: MoETransformer, step: int = 0, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, value in model.params.items():
        raw = np.ascontiguousarray(value, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(value.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "dtype": "float32-le",
        "blob": BLOB,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "step": step,
        "config": model.config.to_dict(),
        "tensors": entries,
    }
    if extra:
        manifest["extra"] = extra
    _atomic_write(directory / BLOB, blob)
    _atomic_write(directory / MANIFEST, (json.dumps(manifest, indent=1) + "\n").encode())
    return directory


def load_checkpoint(directory: str | Path) -> tuple[MoETransformer, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise ValueError(f"{directory} is not a version-{VERSION} checkpoint")
    blob = (directory / manifest["blob"]).read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise ValueError("checkpoint blob checksum mismatch")
    params = {}
    for entry in manifest["tensors"]:
        raw = blob[entry["offset"]: entry["offset"] + entry["nbytes"]]
        params[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).astype(np.float64)
    config = ModelConfig.from_dict(manifest["config"])
    return MoETransformer(config, params), manifest


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
