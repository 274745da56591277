"""Hierarchical attentive memory: a binary-tree external memory for sequence
models, with hard (sampled) and soft (differentiable) access, an LSTM
controller, and a REINFORCE-based trainer.
"""

from .autodiff import Tensor, backward, no_grad, parameter, tensor
from .checkpoint import CheckpointBundle, load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config_file, resolve_run_config
from .errors import (CapacityError, ConfigError, HamError, NumericsError,
                     ShapeError, UsageError)
from .evaluate import (EvalReport, complexity_probe, evaluate_ds,
                       evaluate_generalization, evaluate_test,
                       noisy_stub_sequence_error, validation_error)
from .memory import (AttentionTrace, HamNetworks, TreeMemory, attend,
                     format_trace_line, init_memory, read_leaf, write_update,
                     zeros_memory)
from .model import EpisodeOutput, Model, ModelConfig, ModelState, round_bits
from .nn import (AdamState, LstmState, MlpSpec, ParameterStore, adam_step,
                 clip_global_norm, init_lstm, init_mlp, lstm_step,
                 make_adam_state, mlp_forward, zero_lstm_state)
from .soft import LeafDistribution, leaf_distribution, soft_read, soft_write
from .tasks import (TASK_NAMES, DsExample, Example, TaskSpec, get_task,
                    parse_example_line, write_dataset)
from .trainer import (CurriculumState, TrainConfig, TrainResult,
                      collect_rollout, curriculum_advance, discounted_returns,
                      hamming_reward, reinforce_loss, run_training, train_step)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AttentionTrace", "CapacityError", "CheckpointBundle",
    "ConfigError", "CurriculumState", "DsExample", "EpisodeOutput",
    "EvalReport", "Example", "HamError", "HamNetworks", "LeafDistribution",
    "LstmState", "MlpSpec", "Model", "ModelConfig", "ModelState",
    "NumericsError", "ParameterStore", "RunConfig", "ShapeError", "TASK_NAMES",
    "TaskSpec", "Tensor", "TrainConfig", "TrainResult", "TreeMemory",
    "UsageError", "adam_step", "attend", "backward", "clip_global_norm",
    "collect_rollout", "complexity_probe", "curriculum_advance",
    "discounted_returns", "evaluate_ds", "evaluate_generalization",
    "evaluate_test", "format_trace_line", "get_task", "hamming_reward",
    "init_lstm", "init_memory", "init_mlp", "leaf_distribution",
    "load_checkpoint", "lstm_step", "make_adam_state", "mlp_forward",
    "no_grad", "noisy_stub_sequence_error", "parameter", "parse_config_file",
    "parse_example_line", "read_leaf", "reinforce_loss", "resolve_run_config",
    "round_bits", "run_training", "save_checkpoint", "soft_read", "soft_write",
    "tensor", "train_step", "validation_error", "write_dataset",
    "write_update", "zero_lstm_state", "zeros_memory",
]
