"""Checkpoint archives: parameters, optimizer state, configs, curriculum.

A checkpoint is a zip archive holding a json manifest plus one .npy entry
per parameter tensor and per Adam moment buffer.  All float payloads are
written as little-endian float64 and every entry carries a fixed timestamp,
so saving the same state twice produces byte-identical files.  Loading
rebuilds the model from the stored config and refuses any mismatch in
parameter names or shapes.
"""

from __future__ import annotations

import dataclasses
import io
import json
import zipfile
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, ShapeError
from .model import Model, ModelConfig
from .trainer import CurriculumState, TrainConfig

FORMAT_VERSION = "ham-checkpoint-1"
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr, dtype="<f8"), allow_pickle=False)
    return buf.getvalue()


def _write_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, payload)


def save_checkpoint(path, model: Model, adam: nn.AdamState, train_cfg: TrainConfig,
                    curriculum: CurriculumState, task_name: str,
                    task_bits: int | None = None) -> None:
    store = model.store
    manifest = {
        "format_version": FORMAT_VERSION,
        "rng_seed": store.rng_seed,
        "model_config": dataclasses.asdict(model.config),
        "train_config": dataclasses.asdict(train_cfg),
        "curriculum": {"k": curriculum.k, "history": list(curriculum.history)},
        "adam": {"step_count": adam.step_count, "beta1": adam.beta1,
                 "beta2": adam.beta2, "epsilon": adam.epsilon},
        "task": {"name": task_name, "bits": task_bits},
        "params": {name: list(t.data.shape) for name, t in store.items()},
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        _write_entry(zf, "manifest.json",
                     json.dumps(manifest, sort_keys=True, indent=1).encode())
        for name, t in store.items():
            _write_entry(zf, f"params/{name}.npy", _npy_bytes(t.data))
            _write_entry(zf, f"adam_m/{name}.npy", _npy_bytes(adam.m[name]))
            _write_entry(zf, f"adam_v/{name}.npy", _npy_bytes(adam.v[name]))


@dataclass
class CheckpointBundle:
    model: Model
    adam: nn.AdamState
    train_config: TrainConfig
    curriculum: CurriculumState
    task_name: str
    task_bits: int | None


def _read_array(zf: zipfile.ZipFile, entry: str) -> np.ndarray:
    with zf.open(entry) as fh:
        return np.load(io.BytesIO(fh.read()), allow_pickle=False).astype(np.float64)


def load_checkpoint(path) -> CheckpointBundle:
    with zipfile.ZipFile(path, "r") as zf:
        try:
            manifest = json.loads(zf.read("manifest.json").decode())
        except KeyError:
            raise ConfigError(f"{path}: not a checkpoint (no manifest)")
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version "
                              f"{manifest.get('format_version')!r}")
        model_cfg = ModelConfig(**manifest["model_config"])
        train_cfg = TrainConfig(**manifest["train_config"])
        model = Model(model_cfg, seed=int(manifest["rng_seed"]))
        expected = {name: tuple(t.data.shape) for name, t in model.store.items()}
        stored = {name: tuple(shape) for name, shape in manifest["params"].items()}
        if expected != stored:
            missing = sorted(set(expected) - set(stored))
            extra = sorted(set(stored) - set(expected))
            bad = sorted(k for k in set(expected) & set(stored)
                         if expected[k] != stored[k])
            raise ShapeError(f"{path}: parameter mismatch "
                             f"(missing={missing} extra={extra} shape={bad})")
        values = {}
        adam = nn.AdamState(step_count=int(manifest["adam"]["step_count"]),
                            beta1=manifest["adam"]["beta1"],
                            beta2=manifest["adam"]["beta2"],
                            epsilon=manifest["adam"]["epsilon"])
        for name, shape in expected.items():
            arr = _read_array(zf, f"params/{name}.npy")
            if arr.shape != shape:
                raise ShapeError(f"{path}: entry params/{name} has shape "
                                 f"{arr.shape}, expected {shape}")
            values[name] = arr
            adam.m[name] = _read_array(zf, f"adam_m/{name}.npy")
            adam.v[name] = _read_array(zf, f"adam_v/{name}.npy")
            if adam.m[name].shape != shape or adam.v[name].shape != shape:
                raise ShapeError(f"{path}: optimizer state for {name} has the wrong shape")
        model.store.load_values(values)
        cur = CurriculumState(int(manifest["curriculum"]["k"]),
                              list(manifest["curriculum"]["history"]))
        task = manifest.get("task", {})
        return CheckpointBundle(model, adam, train_cfg, cur,
                                task.get("name", ""), task.get("bits"))
