"""Binary-tree memory with logarithmic attention access.

The tree is a full binary tree over n leaves (n a power of two) stored in
heap layout: the root is index 1, node e has children 2e and 2e+1, and the
leaves occupy indices n..2n-1.  Every node holds a d-dimensional value.

Four learned transformations drive the memory:

  embed   maps a raw input symbol into a leaf value,
  join    summarizes two child values into their parent's value,
  search  turns (node value, query) into the probability of branching right,
  write   rewrites a leaf from (old value, query) through a highway gate.

A single attention access descends root-to-leaf, one search per level, so
reading or updating costs Theta(log n) network evaluations.  Call counters
on `HamNetworks` exist so tests can assert exactly that.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import CapacityError, ShapeError, UsageError

# Branch probabilities are clamped into [PROB_EPS, 1 - PROB_EPS] before any
# logarithm so a saturated search output cannot produce -inf.
PROB_EPS = 1e-6


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


class HamNetworks:
    """The four tree transformations plus instrumentation counters."""

    def __init__(self, store: nn.ParameterStore, d: int, query_width: int,
                 input_width, hidden: int, depth: int):
        self.store = store
        self.d = d
        self.query_width = query_width
        self.input_width = input_width
        hiddens = (hidden,) * depth
        self.embed_spec = None
        if input_width is not None:
            self.embed_spec = nn.MlpSpec(input_width, hiddens, d, "relu")
        self.join_spec = nn.MlpSpec(2 * d, hiddens, d, "relu")
        self.search_spec = nn.MlpSpec(d + query_width, hiddens, 1, "sigmoid")
        self.write_h_spec = nn.MlpSpec(d + query_width, hiddens, d, "sigmoid")
        self.write_t_spec = nn.MlpSpec(d + query_width, hiddens, d, "sigmoid")
        self.embed_calls = 0
        self.join_calls = 0
        self.search_calls = 0
        self.write_calls = 0

    def allocate(self) -> None:
        """Create all tree parameters in a fixed order."""
        if self.embed_spec is not None:
            nn.init_mlp(self.store, "embed", self.embed_spec)
        nn.init_mlp(self.store, "join", self.join_spec)
        nn.init_mlp(self.store, "search", self.search_spec)
        nn.init_mlp(self.store, "write_h", self.write_h_spec)
        # The transform gate starts biased towards keeping the old value.
        nn.init_mlp(self.store, "write_t", self.write_t_spec, final_bias=-1.0)

    def reset_counters(self) -> None:
        self.embed_calls = 0
        self.join_calls = 0
        self.search_calls = 0
        self.write_calls = 0

    def embed(self, x: Tensor) -> Tensor:
        if self.embed_spec is None:
            raise UsageError("this model was built without an embed network")
        self.embed_calls += 1
        return nn.mlp_forward(self.store, "embed", self.embed_spec, x)

    def join(self, left: Tensor, right: Tensor) -> Tensor:
        self.join_calls += 1
        return nn.mlp_forward(self.store, "join", self.join_spec,
                              ad.concat([left, right]))

    def search(self, h: Tensor, query: Tensor) -> Tensor:
        """Probability of branching right, as a scalar tensor."""
        self.search_calls += 1
        out = nn.mlp_forward(self.store, "search", self.search_spec,
                             ad.concat([h, query]))
        return ad.reshape(out, ())

    def write(self, h: Tensor, query: Tensor) -> Tensor:
        """Highway-gated rewrite: T * H + (1 - T) * old value."""
        self.write_calls += 1
        inp = ad.concat([h, query])
        cand = nn.mlp_forward(self.store, "write_h", self.write_h_spec, inp)
        gate = nn.mlp_forward(self.store, "write_t", self.write_t_spec, inp)
        return ad.add(ad.mul(gate, cand), ad.mul(1.0 - gate, h))


class TreeMemory:
    """Node values of the full binary tree, indexed 1..2n-1 (0 unused)."""

    __slots__ = ("n", "d", "nodes")

    def __init__(self, n: int, d: int, nodes):
        self.n = n
        self.d = d
        self.nodes = nodes

    @property
    def leaf_start(self) -> int:
        return self.n

    def leaf(self, ordinal: int) -> Tensor:
        """Leaf by 0-based ordinal."""
        if not 0 <= ordinal < self.n:
            raise UsageError(f"leaf ordinal {ordinal} out of range for n={self.n}")
        return self.nodes[self.n + ordinal]

    def node_values(self) -> np.ndarray:
        """Dense [2n, d] snapshot of all node values (row 0 is zeros)."""
        out = np.zeros((2 * self.n, self.d))
        for e in range(1, 2 * self.n):
            out[e] = self.nodes[e].data
        return out


@dataclass
class AttentionTrace:
    """Record of one root-to-leaf descent.

    `path` holds the visited inner nodes top-down, `decisions[i]` is True when
    the walk branched right below `path[i]`, `probs` are the branch-right
    probabilities as floats and `prob_tensors` the same values still attached
    to the recorded graph.  `log_prob` is the log-probability of the taken
    path with probabilities clamped away from 0 and 1.
    """

    path: list
    decisions: list
    probs: list
    prob_tensors: list
    leaf: int
    log_prob: float
    mem_id: int = 0
    extras: dict = field(default_factory=dict)

    def decision_string(self) -> str:
        return "".join("R" if d else "L" for d in self.decisions)

    def leaf_ordinal(self, n: int) -> int:
        """1-based position of the attended leaf among the leaves."""
        return self.leaf - n + 1


def init_memory(nets: HamNetworks, inputs, n: int) -> TreeMemory:
    """Build the tree from a sequence of input symbols.

    Leaf i holds embed(inputs[i]); leaves beyond the sequence hold zeros and
    still take part in the joins above them.  Inner nodes are computed
    bottom-up, n - 1 joins in total.
    """
    if not is_power_of_two(n):
        raise CapacityError(f"memory size {n} is not a power of two")
    inputs = list(inputs)
    if len(inputs) > n:
        raise CapacityError(f"{len(inputs)} inputs do not fit into {n} leaves")
    d = nets.d
    nodes = [None] * (2 * n)
    for i in range(n):
        if i < len(inputs):
            nodes[n + i] = nets.embed(inputs[i])
        else:
            nodes[n + i] = ad.tensor(np.zeros(d))
    for e in range(n - 1, 0, -1):
        nodes[e] = nets.join(nodes[2 * e], nodes[2 * e + 1])
    return TreeMemory(n, d, nodes)


def zeros_memory(n: int, d: int) -> TreeMemory:
    """All-zero tree, used when the memory starts empty."""
    if not is_power_of_two(n):
        raise CapacityError(f"memory size {n} is not a power of two")
    nodes = [None] + [ad.tensor(np.zeros(d)) for _ in range(2 * n - 1)]
    return TreeMemory(n, d, nodes)


def attend(mem: TreeMemory, nets: HamNetworks, query: Tensor, mode: str = "sample",
           rng=None, forced=None) -> AttentionTrace:
    """Descend from the root to one leaf.

    mode "sample" branches right with the search probability (needs `rng`),
    "greedy" branches right exactly when that probability exceeds 0.5, and
    "forced" follows the caller-supplied decision list (used by enumeration
    tests).  Exactly log2(n) search evaluations happen.
    """
    if mode == "sample" and rng is None:
        raise UsageError("sampling attention needs an rng")
    depth_total = mem.n.bit_length() - 1
    if mode == "forced":
        if forced is None or len(forced) != depth_total:
            raise UsageError(f"forced decisions must list exactly {depth_total} choices")
    path, decisions, probs, tensors = [], [], [], []
    log_prob = 0.0
    node = 1
    depth = 0
    while node < mem.n:
        p_t = nets.search(mem.nodes[node], query)
        p = float(p_t.data)
        if mode == "sample":
            go_right = bool(rng.random() < p)
        elif mode == "greedy":
            go_right = p > 0.5
        elif mode == "forced":
            go_right = bool(forced[depth])
        else:
            raise UsageError(f"unknown attention mode {mode!r}")
        chosen = p if go_right else 1.0 - p
        log_prob += float(np.log(np.clip(chosen, PROB_EPS, 1.0 - PROB_EPS)))
        path.append(node)
        decisions.append(go_right)
        probs.append(p)
        tensors.append(p_t)
        node = 2 * node + (1 if go_right else 0)
        depth += 1
    return AttentionTrace(path, decisions, probs, tensors, node, log_prob, id(mem))


def read_leaf(mem: TreeMemory, trace: AttentionTrace) -> Tensor:
    return mem.nodes[trace.leaf]


def write_update(mem: TreeMemory, nets: HamNetworks, trace: AttentionTrace,
                 query: Tensor) -> None:
    """Rewrite the attended leaf, then refresh the joins along its path.

    Only the log2(n) ancestors of the attended leaf are recomputed; every
    other node keeps its value.
    """
    if trace.mem_id != id(mem):
        raise UsageError("trace was produced on a different memory")
    mem.nodes[trace.leaf] = nets.write(mem.nodes[trace.leaf], query)
    for node in reversed(trace.path):
        mem.nodes[node] = nets.join(mem.nodes[2 * node], mem.nodes[2 * node + 1])


def format_trace_line(timestep: int, trace: AttentionTrace, n: int) -> str:
    """One dump line: timestep, 1-based leaf ordinal, L/R string, probabilities."""
    probs = ",".join(f"{p:.4f}" for p in trace.probs)
    return f"{timestep}\t{trace.leaf_ordinal(n)}\t{trace.decision_string()}\t{probs}"
