"""Fully differentiable attention over the tree memory.

Instead of sampling one root-to-leaf path, every inner node contributes its
branch probability and each leaf receives the product of the branch choices
along its path.  Reads become expectations over leaves, writes blend the
rewritten value into every leaf weighted by its probability, and afterwards
all inner nodes are recomputed.  One timestep therefore costs Theta(n)
network evaluations instead of Theta(log n), but the whole computation is
differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .memory import HamNetworks, TreeMemory


@dataclass
class LeafDistribution:
    """Per-leaf attention weights, ordered by leaf ordinal.

    Each entry is a scalar tensor; the weights are path products of branch
    probabilities and sum to one by construction.
    """

    n: int
    probs: list

    def values(self) -> np.ndarray:
        return np.array([float(p.data) for p in self.probs])


def leaf_distribution(mem: TreeMemory, nets: HamNetworks, query: Tensor) -> LeafDistribution:
    """Evaluate search at every inner node and multiply down the tree.

    Exactly n - 1 search evaluations; node probabilities are computed in heap
    index order so parents are always ready before their children.
    """
    n = mem.n
    node_prob = [None] * (2 * n)
    node_prob[1] = ad.tensor(1.0)
    for e in range(1, n):
        p = nets.search(mem.nodes[e], query)
        node_prob[2 * e] = ad.mul(node_prob[e], 1.0 - p)
        node_prob[2 * e + 1] = ad.mul(node_prob[e], p)
    return LeafDistribution(n, node_prob[n:2 * n])


def soft_read(mem: TreeMemory, dist: LeafDistribution) -> Tensor:
    """Expected leaf value under the attention distribution."""
    acc = ad.mul(dist.probs[0], mem.leaf(0))
    for i in range(1, mem.n):
        acc = ad.add(acc, ad.mul(dist.probs[i], mem.leaf(i)))
    return acc


def soft_write(mem: TreeMemory, nets: HamNetworks, dist: LeafDistribution,
               query: Tensor) -> None:
    """Blend the rewritten value into every leaf, then refresh the tree.

    Leaf i becomes p_i * write(h_i, query) + (1 - p_i) * h_i, which costs one
    write evaluation per leaf; the refresh afterwards recomputes all n - 1
    inner nodes.
    """
    n = mem.n
    for i in range(n):
        old = mem.nodes[n + i]
        new = nets.write(old, query)
        p = dist.probs[i]
        mem.nodes[n + i] = ad.add(ad.mul(p, new), ad.mul(1.0 - p, old))
    soft_refresh(mem, nets)


def soft_refresh(mem: TreeMemory, nets: HamNetworks) -> None:
    """Recompute every inner node bottom-up from the current leaves."""
    for e in range(mem.n - 1, 0, -1):
        mem.nodes[e] = nets.join(mem.nodes[2 * e], mem.nodes[2 * e + 1])
