"""The memory-augmented sequence model and its episode loops.

A controller-mode model couples the tree memory with an LSTM: per timestep it
attends to one leaf using the LSTM hidden state as the query, feeds the leaf
value to the LSTM, emits output bit probabilities at every eta-th timestep
from the new hidden state, and finally rewrites the attended leaf.  With soft
attention the same loop runs on expected values and leaf distributions and is
differentiable end to end.

Raw mode drops the controller entirely: the memory starts at zero, the
current input symbol serves as the query everywhere the hidden state would,
and the output is a dense readout of the attended leaf.  It produces one
output per input symbol and is meant for the data-structure tasks.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from . import soft as soft_ops
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .memory import (AttentionTrace, HamNetworks, TreeMemory, attend, init_memory,
                     is_power_of_two, read_leaf, write_update, zeros_memory)

ATTENTION_KINDS = ("hard", "soft")
MODEL_MODES = ("controller", "raw")
WRITE_QUERY_KINDS = ("controller", "root")


@dataclass(frozen=True)
class ModelConfig:
    """Widths and switches of one model instance.

    b is the output symbol width (outputs carry b + 1 channels, the extra one
    marking the end of the output), b_in the input symbol width, d the node
    value width, l the controller width, and n the number of leaves.
    """

    b: int
    b_in: int
    n: int
    d: int = 20
    l: int = 20
    eta: int = 1
    attention: str = "hard"
    mode: str = "controller"
    mlp_hidden: int = 20
    mlp_depth: int = 1
    dham_write_query: str = "controller"

    def __post_init__(self):
        if not is_power_of_two(self.n):
            raise ConfigError(f"memory size {self.n} is not a power of two")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"unknown attention kind {self.attention!r}")
        if self.mode not in MODEL_MODES:
            raise ConfigError(f"unknown model mode {self.mode!r}")
        if self.dham_write_query not in WRITE_QUERY_KINDS:
            raise ConfigError(f"unknown write query source {self.dham_write_query!r}")
        if self.eta < 1:
            raise ConfigError("eta must be at least 1")
        if self.mode == "raw" and self.eta != 1:
            raise ConfigError("raw mode emits one output per symbol; eta must be 1")
        if self.mode == "raw" and self.attention == "soft":
            raise ConfigError("soft attention is only supported with the controller")
        if min(self.b, self.b_in, self.d, self.l, self.mlp_hidden) < 1:
            raise ConfigError("all widths must be positive")
        if self.mlp_depth not in (1, 2):
            raise ConfigError("mlp_depth must be 1 or 2")

    @property
    def query_width(self) -> int:
        return self.l if self.mode == "controller" else self.b_in

    @property
    def out_width(self) -> int:
        """Emitted channels: data bits plus the end marker in controller mode."""
        return self.b + 1 if self.mode == "controller" else self.b


@dataclass
class ModelState:
    memory: TreeMemory
    lstm: nn.LstmState | None
    step_index: int = 0


@dataclass
class EpisodeOutput:
    """Everything a training step needs from one recorded episode."""

    bit_probs: list       # tensors, one per output timestep
    traces: list          # AttentionTrace (hard) or LeafDistribution (soft)
    hiddens: list         # controller state (or leaf value in raw mode) per output
    memory: TreeMemory


def encode_inputs(inputs, b_in: int) -> list:
    """Wrap raw input vectors as constant tensors, validating their width."""
    out = []
    for i, x in enumerate(inputs):
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape != (b_in,):
            raise ShapeError(
                f"input symbol {i} has shape {arr.shape}, expected ({b_in},)")
        out.append(ad.tensor(arr))
    return out


def round_bits(probs: np.ndarray) -> np.ndarray:
    """Deterministic bit readout; a probability of exactly 0.5 rounds to 0."""
    return (probs > 0.5).astype(np.float64)


class Model:
    """Parameter store, networks, and episode loops for one configuration.

    `with_capacity` returns a view of the same parameters over a different
    number of leaves; nothing about the parameters depends on n.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, _store=None, _nets=None):
        self.config = config
        if _store is not None:
            self.store = _store
            self.nets = _nets
            return
        self.store = nn.ParameterStore(seed)
        embed_width = config.b_in if config.mode == "controller" else None
        self.nets = HamNetworks(self.store, config.d, config.query_width,
                                embed_width, config.mlp_hidden, config.mlp_depth)
        self.nets.allocate()
        if config.mode == "controller":
            nn.init_lstm(self.store, "lstm", config.d, config.l)
            self.store.create_matrix("out/w", config.b + 1, config.l)
            self.store.create_vector("out/b", config.b + 1)
            self.store.create_matrix("baseline/w", 1, config.l)
            self.store.create_vector("baseline/b", 1)
        else:
            self.rawout_spec = nn.MlpSpec(config.d, (config.mlp_hidden,) * config.mlp_depth,
                                          config.b, "sigmoid")
            nn.init_mlp(self.store, "rawout", self.rawout_spec)
            self.store.create_matrix("rawbl/w", 1, config.d)
            self.store.create_vector("rawbl/b", 1)
        self._audit()

    def _audit(self) -> None:
        # Construction-time width audit: the query entering search/write must
        # match what the mode feeds in at runtime.
        cfg = self.config
        expected = cfg.d + cfg.query_width
        if self.nets.search_spec.input_width != expected:
            raise ConfigError("search network width does not match the query source")
        if self.nets.write_h_spec.input_width != expected:
            raise ConfigError("write network width does not match the query source")
        if (cfg.attention == "soft" and cfg.dham_write_query == "root"
                and cfg.d != cfg.l):
            # the root value stands in for the controller query, so the widths
            # must line up
            raise ConfigError("write query 'root' requires d == l")

    def with_capacity(self, n: int) -> "Model":
        cfg = dataclasses.replace(self.config, n=n)
        clone = Model(cfg, _store=self.store, _nets=self.nets)
        if self.config.mode == "raw":
            clone.rawout_spec = self.rawout_spec
        return clone

    # -- controller mode, hard attention ------------------------------------

    def initial_state(self, inputs) -> ModelState:
        encoded = encode_inputs(inputs, self.config.b_in)
        memory = init_memory(self.nets, encoded, self.config.n)
        return ModelState(memory, nn.zero_lstm_state(self.config.l), 0)

    def _out_probs(self, hidden: Tensor) -> Tensor:
        u = ad.matmul(self.store["out/w"], hidden) + self.store["out/b"]
        return ad.sigmoid(u)

    def step(self, state: ModelState, mode: str = "sample", rng=None, forced=None):
        """One attention timestep.

        Returns (state, probs, trace, hidden); probs is None except at every
        eta-th timestep.  The attention query is the hidden state entering
        the step, the write query the one leaving it.
        """
        s = state.step_index + 1
        trace = attend(state.memory, self.nets, state.lstm.hidden, mode, rng, forced)
        h_a = read_leaf(state.memory, trace)
        lstm, hidden = nn.lstm_step(self.store, "lstm", state.lstm, h_a, self.config.l)
        probs = self._out_probs(hidden) if s % self.config.eta == 0 else None
        write_update(state.memory, self.nets, trace, lstm.hidden)
        return ModelState(state.memory, lstm, s), probs, trace, hidden

    def run_episode(self, inputs, max_outputs: int, mode: str = "sample", rng=None,
                    forced=None) -> EpisodeOutput:
        """Run max_outputs * eta attention timesteps with a fixed horizon.

        `forced` optionally fixes every attention decision: one list of
        per-level choices per timestep (used by the estimator tests).
        """
        state = self.initial_state(inputs)
        bit_probs, traces, hiddens = [], [], []
        total = max_outputs * self.config.eta
        for s in range(total):
            f = forced[s] if forced is not None else None
            state, probs, trace, hidden = self.step(state, mode, rng, f)
            traces.append(trace)
            if probs is not None:
                bit_probs.append(probs)
                hiddens.append(hidden)
        return EpisodeOutput(bit_probs, traces, hiddens, state.memory)

    def predict(self, inputs, want_trace: bool = False):
        """Greedy inference; stops once the end marker rounds to one.

        At most n + 1 symbols are produced; the end symbol itself is never
        part of the return value.
        """
        cap = self.config.n + 1
        symbols = []
        traces = []
        with ad.no_grad():
            state = self.initial_state(inputs)
            while len(symbols) < cap:
                state, probs, trace, _ = self.step(state, "greedy")
                traces.append(trace)
                if probs is None:
                    continue
                p = probs.data
                if p[self.config.b] > 0.5:
                    break
                symbols.append(round_bits(p[:self.config.b]))
        if want_trace:
            return symbols, traces
        return symbols

    # -- controller mode, soft attention ------------------------------------

    def soft_step(self, state: ModelState):
        s = state.step_index + 1
        dist = soft_ops.leaf_distribution(state.memory, self.nets, state.lstm.hidden)
        read = soft_ops.soft_read(state.memory, dist)
        lstm, hidden = nn.lstm_step(self.store, "lstm", state.lstm, read, self.config.l)
        probs = self._out_probs(hidden) if s % self.config.eta == 0 else None
        if self.config.dham_write_query == "controller":
            write_query = lstm.hidden
        else:
            write_query = state.memory.nodes[1]
        soft_ops.soft_write(state.memory, self.nets, dist, write_query)
        return ModelState(state.memory, lstm, s), probs, dist, hidden

    def run_soft_episode(self, inputs, max_outputs: int) -> EpisodeOutput:
        state = self.initial_state(inputs)
        bit_probs, dists, hiddens = [], [], []
        for _ in range(max_outputs * self.config.eta):
            state, probs, dist, hidden = self.soft_step(state)
            dists.append(dist)
            if probs is not None:
                bit_probs.append(probs)
                hiddens.append(hidden)
        return EpisodeOutput(bit_probs, dists, hiddens, state.memory)

    def predict_soft(self, inputs):
        """Deterministic soft inference; the end marker cuts the output."""
        cap = self.config.n + 1
        symbols = []
        with ad.no_grad():
            state = self.initial_state(inputs)
            while len(symbols) < cap:
                state, probs, _, _ = self.soft_step(state)
                if probs is None:
                    continue
                p = probs.data
                if p[self.config.b] > 0.5:
                    break
                symbols.append(round_bits(p[:self.config.b]))
        return symbols

    # -- raw mode ------------------------------------------------------------

    def raw_initial_state(self) -> ModelState:
        return ModelState(zeros_memory(self.config.n, self.config.d), None, 0)

    def raw_step(self, state: ModelState, x, mode: str = "sample", rng=None,
                 forced=None):
        """One operation: attend and answer with the input symbol as query."""
        query = x if isinstance(x, Tensor) else ad.tensor(np.asarray(x, dtype=np.float64))
        if query.data.shape != (self.config.b_in,):
            raise ShapeError(f"op symbol has shape {query.data.shape}, "
                             f"expected ({self.config.b_in},)")
        trace = attend(state.memory, self.nets, query, mode, rng, forced)
        h_a = read_leaf(state.memory, trace)
        probs = nn.mlp_forward(self.store, "rawout", self.rawout_spec, h_a)
        write_update(state.memory, self.nets, trace, query)
        return ModelState(state.memory, None, state.step_index + 1), probs, trace, h_a

    def run_raw_episode(self, inputs, mode: str = "sample", rng=None,
                        forced=None) -> EpisodeOutput:
        state = self.raw_initial_state()
        bit_probs, traces, reads = [], [], []
        for s, x in enumerate(inputs):
            f = forced[s] if forced is not None else None
            state, probs, trace, h_a = self.raw_step(state, x, mode, rng, f)
            bit_probs.append(probs)
            traces.append(trace)
            reads.append(h_a)
        return EpisodeOutput(bit_probs, traces, reads, state.memory)

    def predict_ds(self, inputs, want_trace: bool = False):
        """Greedy raw-mode run: one rounded output symbol per operation."""
        with ad.no_grad():
            episode = self.run_raw_episode(inputs, mode="greedy")
        symbols = [round_bits(p.data) for p in episode.bit_probs]
        if want_trace:
            return symbols, episode.traces
        return symbols
