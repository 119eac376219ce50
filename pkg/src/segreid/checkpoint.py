"""Checkpoint directories: STT tensors plus a JSON index.

Layout::

    <dir>/index.json        config, step, rng state, metric log, tensor index
    <dir>/params/<name>.stt
    <dir>/adam_m/<name>.stt
    <dir>/adam_v/<name>.stt

The directory is assembled under a temporary name and renamed into place.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .container import load_array, save_tensor
from .rng import restore_rng, rng_state

FORMAT = "segreid-checkpoint/1"


@dataclass
class CheckpointState:
    config: RunConfig
    num_classes: int
    step: int
    adam_step: int
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    rng: np.random.Generator
    log: list[dict]


def save_checkpoint(path, cfg: RunConfig, model, optimizer, rng, log: list[dict], step: int) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    index = {}
    for name, p in model.parameters().items():
        rel = f"{name}.stt"
        save_tensor(p.data, tmp / "params" / rel)
        save_tensor(optimizer.m[name], tmp / "adam_m" / rel)
        save_tensor(optimizer.v[name], tmp / "adam_v" / rel)
        index[name] = {"file": rel, "shape": list(p.shape), "dtype": str(p.dtype)}
    meta = {
        "format": FORMAT,
        "step": step,
        "adam_step": optimizer.step_count,
        "num_classes": model.num_classes,
        "config": cfg.to_dict(),
        "rng": rng_state(rng),
        "params": index,
        "log": log,
    }
    (tmp / "index.json").write_text(json.dumps(meta, indent=1))
    if path.exists():
        old = path.with_name(path.name + ".old")
        if old.exists():
            shutil.rmtree(old)
        os.replace(path, old)
        os.replace(tmp, path)
        shutil.rmtree(old)
    else:
        os.replace(tmp, path)
    return path


def load_checkpoint(path) -> CheckpointState:
    path = Path(path)
    meta = json.loads((path / "index.json").read_text())
    if meta.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} checkpoint")
    params, adam_m, adam_v = {}, {}, {}
    for name, entry in meta["params"].items():
        params[name] = load_array(path / "params" / entry["file"])
        adam_m[name] = load_array(path / "adam_m" / entry["file"])
        adam_v[name] = load_array(path / "adam_v" / entry["file"])
        if list(params[name].shape) != entry["shape"]:
            raise ValueError(f"{name}: stored shape {params[name].shape} != index {entry['shape']}")
    return CheckpointState(
        config=RunConfig.from_dict(meta["config"]),
        num_classes=meta["num_classes"],
        step=meta["step"],
        adam_step=meta["adam_step"],
        params=params,
        adam_m=adam_m,
        adam_v=adam_v,
        rng=restore_rng(meta["rng"]),
        log=meta["log"],
    )


def apply_params(model, params: dict[str, np.ndarray]) -> None:
    own = model.parameters()
    missing = sorted(set(own) - set(params))
    extra = sorted(set(params) - set(own))
    if missing or extra:
        raise ValueError(f"checkpoint parameter mismatch: missing={missing} unexpected={extra}")
    for name, p in own.items():
        if p.shape != params[name].shape:
            raise ValueError(f"{name}: checkpoint shape {params[name].shape} != model {p.shape}")
        p.data = params[name].copy()
