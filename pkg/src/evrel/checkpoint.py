"""Versioned parameter checkpoints.

JSON container mapping parameter names to shape + row-major values, plus
the model config and its hash. Floats are serialized with full repr
precision, so save/load round-trips bit-exactly.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Tensor
from .reasoner import ModelConfig

FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, params: dict[str, Tensor], cfg: ModelConfig,
                    meta: dict | None = None) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "meta": meta or {},
        "params": {name: {"shape": list(t.data.shape),
                          "data": t.data.reshape(-1).tolist()}
                   for name, t in sorted(params.items())},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format "
                              f"{payload.get('format_version')!r}")
    cfg = ModelConfig.from_dict(payload["config"])
    if payload.get("config_hash") != cfg.config_hash():
        raise CheckpointError(f"{path}: config hash does not match stored config")
    params = {}
    for name, entry in payload["params"].items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        params[name] = arr
    return cfg, params, payload.get("meta", {})


def restore_into(params: dict[str, Tensor], arrays: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into live parameter tensors (shape-checked)."""
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise CheckpointError(f"parameter names mismatch: missing {sorted(missing)}, "
                              f"unexpected {sorted(extra)}")
    for name, t in params.items():
        if t.data.shape != arrays[name].shape:
            raise CheckpointError(f"parameter {name}: shape {arrays[name].shape} "
                                  f"!= expected {t.data.shape}")
        t.data = arrays[name].astype(np.float64).copy()
