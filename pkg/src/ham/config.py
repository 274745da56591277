"""Run configuration: defaults, key=value config files, CLI overrides.

A config file holds one `key = value` pair per line with `#` comments.
Values given on the command line win over the file, which wins over the
defaults.  `RunConfig` is the fully resolved result and knows how to build
the model config, the train config, and the task spec.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError
from .model import ModelConfig
from .tasks import TaskSpec, get_task
from .trainer import TrainConfig


@dataclass
class RunConfig:
    task: str = "reverse"
    bits: int | None = None
    n: int = 32
    d: int = 20
    l: int = 20
    eta: int | None = None
    attention: str = "hard"
    mode: str | None = None
    mlp_hidden: int = 20
    mlp_depth: int = 1
    dham_write_query: str = "controller"
    epochs: int = 100
    batch_size: int = 50
    batches_per_epoch: int = 1000
    lr0: float = 1e-3
    lr_decay: float = 0.97
    gamma: float = 0.98
    alpha0: float = 0.01
    alpha_decay: float = 0.95
    baseline_weight: float = 0.1
    clip_norm: float = 5.0
    reward_kind: str = "hamming"
    reward_normalize: bool = False
    curriculum_threshold: float = 0.05
    start_k: int = 1
    val_examples: int = 400
    early_stop_error: float | None = None
    time_limit_s: float | None = None
    seed: int = 0
    threads: int = 1
    ckpt_every: int = 0
    out: str | None = None

    def task_spec(self) -> TaskSpec:
        task = get_task(self.task, bits=self.bits)
        if self.mode is not None and self.mode != task.mode:
            raise ConfigError(
                f"task {task.name} runs in {task.mode} mode, not {self.mode}")
        return task

    def model_config(self) -> ModelConfig:
        task = self.task_spec()
        eta = self.eta if self.eta is not None else task.eta
        return ModelConfig(b=task.b, b_in=task.b_in, n=self.n, d=self.d, l=self.l,
                           eta=eta, attention=self.attention, mode=task.mode,
                           mlp_hidden=self.mlp_hidden, mlp_depth=self.mlp_depth,
                           dham_write_query=self.dham_write_query)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           batches_per_epoch=self.batches_per_epoch, lr0=self.lr0,
                           lr_decay=self.lr_decay, gamma=self.gamma,
                           alpha0=self.alpha0, alpha_decay=self.alpha_decay,
                           baseline_weight=self.baseline_weight,
                           clip_norm=self.clip_norm, reward_kind=self.reward_kind,
                           reward_normalize=self.reward_normalize,
                           curriculum_threshold=self.curriculum_threshold,
                           start_k=self.start_k, val_examples=self.val_examples,
                           early_stop_error=self.early_stop_error,
                           time_limit_s=self.time_limit_s)

    def echo_lines(self) -> list:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            out.append(f"{f.name} = {'none' if value is None else value}")
        return out


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_OPTIONAL = {"bits", "eta", "mode", "early_stop_error", "time_limit_s", "out"}


def _coerce(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    text = raw.strip()
    if key in _OPTIONAL and text.lower() in ("none", ""):
        return None
    ftype = _FIELD_TYPES[key]
    try:
        if ftype.startswith("bool"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if ftype.startswith("int"):
            return int(text)
        if ftype.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for config key {key!r}")
    return text


def parse_config_file(path) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = body.split("=", 1)
            key = key.strip()
            values[key] = _coerce(key, raw)
    return values


def resolve_run_config(file_path=None, overrides=None) -> RunConfig:
    """Defaults, then the config file, then explicit overrides."""
    merged = {}
    if file_path is not None:
        merged.update(parse_config_file(file_path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = _coerce(key, str(value)) if isinstance(value, str) else value
    cfg = RunConfig(**merged)
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    return cfg
