"""Dense networks, an LSTM cell, and the optimizer on top of the autodiff core.

Parameters live in a `ParameterStore` keyed by `prefix/name` strings so that
checkpoints can validate names and shapes exactly.  Weight matrices are
initialized uniformly in +-sqrt(6 / (fan_in + fan_out)); biases start at zero
unless a layer asks for a different constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericsError, ShapeError, UsageError

_ACTIVATIONS = ("linear", "relu", "sigmoid")


@dataclass(frozen=True)
class MlpSpec:
    """Widths and output activation of a small dense network.

    Hidden layers always use ReLU; `output_activation` picks what the last
    layer applies.  One or two hidden layers are supported.
    """

    input_width: int
    hidden_widths: tuple
    output_width: int
    output_activation: str = "relu"

    def __post_init__(self):
        if not 1 <= len(self.hidden_widths) <= 2:
            raise ShapeError("MlpSpec supports exactly one or two hidden layers")
        if self.output_activation not in _ACTIVATIONS:
            raise ShapeError(f"unknown output activation {self.output_activation!r}")
        for w in (self.input_width, *self.hidden_widths, self.output_width):
            if int(w) < 1:
                raise ShapeError("all layer widths must be positive")

    @property
    def widths(self):
        return (self.input_width, *self.hidden_widths, self.output_width)


class ParameterStore:
    """Ordered mapping name -> trainable tensor, plus the init RNG.

    Creation order is fixed by the model builder, which makes checkpoints and
    optimizer state reproducible for a given seed.
    """

    def __init__(self, seed: int):
        self.rng_seed = int(seed)
        self._rng = np.random.default_rng(self.rng_seed)
        self._params: dict[str, Tensor] = {}

    def create_matrix(self, name: str, rows: int, cols: int) -> Tensor:
        bound = math.sqrt(6.0 / (rows + cols))
        return self._insert(name, self._rng.uniform(-bound, bound, size=(rows, cols)))

    def create_vector(self, name: str, size: int, fill: float = 0.0) -> Tensor:
        return self._insert(name, np.full(size, fill, dtype=np.float64))

    def _insert(self, name, values) -> Tensor:
        if name in self._params:
            raise UsageError(f"parameter {name!r} already exists")
        t = ad.parameter(values)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad.fill(0.0)

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def value_arrays(self) -> dict:
        """Copies of all parameter values, for checkpointing and audits."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_values(self, values: dict) -> None:
        """Overwrite all parameters; names and shapes must match exactly."""
        mine = set(self._params)
        theirs = set(values)
        if mine != theirs:
            missing = sorted(mine - theirs)
            extra = sorted(theirs - mine)
            raise ShapeError(f"parameter name mismatch: missing={missing} extra={extra}")
        for name, t in self._params.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name!r} has shape {arr.shape}, expected {t.data.shape}"
                )
            t.data[...] = arr


# ---------------------------------------------------------------------------
# dense networks


def init_mlp(store: ParameterStore, prefix: str, spec: MlpSpec,
             final_bias: float = 0.0) -> None:
    widths = spec.widths
    last = len(widths) - 2
    for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
        store.create_matrix(f"{prefix}/w{i}", fan_out, fan_in)
        store.create_vector(f"{prefix}/b{i}", fan_out,
                            fill=final_bias if i == last else 0.0)


def mlp_forward(store: ParameterStore, prefix: str, spec: MlpSpec, x: Tensor) -> Tensor:
    if x.data.shape != (spec.input_width,):
        raise ShapeError(
            f"{prefix}: input has shape {x.data.shape}, expected ({spec.input_width},)"
        )
    h = x
    last = len(spec.widths) - 2
    for i in range(last + 1):
        z = ad.matmul(store[f"{prefix}/w{i}"], h) + store[f"{prefix}/b{i}"]
        if i < last:
            h = ad.relu(z)
        elif spec.output_activation == "relu":
            h = ad.relu(z)
        elif spec.output_activation == "sigmoid":
            h = ad.sigmoid(z)
        else:
            h = z
    return h


# ---------------------------------------------------------------------------
# LSTM cell


@dataclass
class LstmState:
    hidden: Tensor
    cell: Tensor


def zero_lstm_state(width: int) -> LstmState:
    return LstmState(ad.tensor(np.zeros(width)), ad.tensor(np.zeros(width)))


def init_lstm(store: ParameterStore, prefix: str, input_width: int, width: int) -> None:
    store.create_matrix(f"{prefix}/w", 4 * width, input_width + width)
    store.create_vector(f"{prefix}/b", 4 * width)


def lstm_step(store: ParameterStore, prefix: str, state: LstmState, x: Tensor,
              width: int) -> tuple:
    """One LSTM update; gate order in the packed weights is i, f, g, o."""
    z = ad.matmul(store[f"{prefix}/w"], ad.concat([x, state.hidden]))
    z = z + store[f"{prefix}/b"]
    i = ad.sigmoid(ad.narrow(z, 0, width))
    f = ad.sigmoid(ad.narrow(z, width, 2 * width))
    g = ad.tanh(ad.narrow(z, 2 * width, 3 * width))
    o = ad.sigmoid(ad.narrow(z, 3 * width, 4 * width))
    cell = ad.add(ad.mul(f, state.cell), ad.mul(i, g))
    hidden = ad.mul(o, ad.tanh(cell))
    return LstmState(hidden, cell), hidden


# ---------------------------------------------------------------------------
# optimization


def clip_global_norm(store: ParameterStore, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most `max_norm`.

    Returns the pre-clip norm.  A norm exactly at the threshold is left
    untouched.
    """
    total = 0.0
    for _, t in store.items():
        total += float(np.dot(t.grad.ravel(), t.grad.ravel()))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for _, t in store.items():
            t.grad *= scale
    return norm


@dataclass
class AdamState:
    """First/second moment estimates per parameter plus the step counter."""

    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def make_adam_state(store: ParameterStore, beta1: float = 0.9, beta2: float = 0.999,
                    epsilon: float = 1e-8) -> AdamState:
    state = AdamState(beta1=beta1, beta2=beta2, epsilon=epsilon)
    for name, t in store.items():
        state.m[name] = np.zeros_like(t.data)
        state.v[name] = np.zeros_like(t.data)
    return state


def adam_step(store: ParameterStore, state: AdamState, lr: float) -> None:
    """Apply one Adam update from the accumulated gradients.

    Non-finite gradients are a hard error naming the parameter; lr = 0 leaves
    every parameter unchanged apart from the moment bookkeeping.
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in store.items():
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if lr != 0.0:
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
