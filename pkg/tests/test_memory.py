"""Tree memory: structure, descent semantics, path-local updates, counters."""

import numpy as np
import pytest
from scipy import stats

from ham import autodiff as ad
from ham import nn
from ham import memory as hm
from ham.errors import CapacityError, UsageError


def make_nets(n=8, d=4, q=3, b_in=2, hidden=5, seed=0, with_embed=True):
    store = nn.ParameterStore(seed=seed)
    nets = hm.HamNetworks(store, d=d, query_width=q,
                          input_width=b_in if with_embed else None,
                          hidden=hidden, depth=1)
    nets.allocate()
    return store, nets


def rand_inputs(rng, count, width):
    return [ad.tensor(rng.normal(size=width)) for _ in range(count)]


def test_is_power_of_two():
    assert [m for m in range(1, 20) if hm.is_power_of_two(m)] == [1, 2, 4, 8, 16]
    assert not hm.is_power_of_two(0)
    assert not hm.is_power_of_two(-4)


# ---------------------------------------------------------------------------
# construction


def test_init_memory_structure(rng):
    n = 8
    store, nets = make_nets(n=n)
    inputs = rand_inputs(rng, 5, 2)
    mem = hm.init_memory(nets, inputs, n)

    # leaves: embedded inputs then zero padding
    for i, x in enumerate(inputs):
        expect = nn.mlp_forward(store, "embed", nets.embed_spec, x)
        assert np.allclose(mem.nodes[n + i].data, expect.data)
    for i in range(5, n):
        assert np.allclose(mem.nodes[n + i].data, 0.0)

    # every inner node is join(left child, right child), recomputed independently
    for e in range(1, n):
        expect = nn.mlp_forward(
            store, "join", nets.join_spec,
            ad.concat([mem.nodes[2 * e], mem.nodes[2 * e + 1]]))
        assert np.allclose(mem.nodes[e].data, expect.data)


def test_init_memory_counter_law(rng):
    for n in (2, 4, 16):
        store, nets = make_nets(n=n)
        hm.init_memory(nets, rand_inputs(rng, n, 2), n)
        assert nets.embed_calls == n
        assert nets.join_calls == n - 1


def test_init_memory_capacity_errors(rng):
    store, nets = make_nets()
    with pytest.raises(CapacityError):
        hm.init_memory(nets, rand_inputs(rng, 9, 2), 8)
    with pytest.raises(CapacityError):
        hm.init_memory(nets, rand_inputs(rng, 2, 2), 6)


def test_zeros_memory():
    mem = hm.zeros_memory(4, 3)
    assert all(np.allclose(mem.nodes[e].data, 0.0) for e in range(1, 8))
    assert mem.leaf(0) is mem.nodes[4]
    with pytest.raises(UsageError):
        mem.leaf(4)
    with pytest.raises(CapacityError):
        hm.zeros_memory(3, 2)


def test_node_values_snapshot(rng):
    store, nets = make_nets(n=4)
    mem = hm.init_memory(nets, rand_inputs(rng, 4, 2), 4)
    dense = mem.node_values()
    assert dense.shape == (8, 4)
    assert np.allclose(dense[0], 0.0)
    assert np.allclose(dense[3], mem.nodes[3].data)


# ---------------------------------------------------------------------------
# descent


def test_forced_descent_reaches_every_leaf(rng):
    n = 8
    store, nets = make_nets(n=n)
    mem = hm.init_memory(nets, rand_inputs(rng, n, 2), n)
    query = ad.tensor(rng.normal(size=3))
    for ordinal in range(n):
        decisions = [bool((ordinal >> k) & 1) for k in reversed(range(3))]
        trace = hm.attend(mem, nets, query, mode="forced", forced=decisions)
        assert trace.leaf == n + ordinal
        assert trace.leaf_ordinal(n) == ordinal + 1
        assert trace.decisions == decisions
        # the path is the chain of ancestors of the leaf
        assert trace.path == [(n + ordinal) >> k for k in range(3, 0, -1)]


def test_descent_search_count_and_probs(rng):
    for n in (2, 4, 32):
        store, nets = make_nets(n=n)
        mem = hm.init_memory(nets, rand_inputs(rng, n, 2), n)
        nets.reset_counters()
        trace = hm.attend(mem, nets, ad.tensor(rng.normal(size=3)),
                          mode="sample", rng=rng)
        k = n.bit_length() - 1
        assert nets.search_calls == k
        assert len(trace.probs) == len(trace.decisions) == len(trace.path) == k
        assert all(0.0 <= p <= 1.0 for p in trace.probs)


def test_descent_log_prob_matches_choices(rng):
    store, nets = make_nets(n=16)
    mem = hm.init_memory(nets, rand_inputs(rng, 16, 2), 16)
    trace = hm.attend(mem, nets, ad.tensor(rng.normal(size=3)),
                      mode="sample", rng=rng)
    expect = 0.0
    for p, right in zip(trace.probs, trace.decisions):
        chosen = p if right else 1.0 - p
        expect += np.log(np.clip(chosen, hm.PROB_EPS, 1 - hm.PROB_EPS))
    assert trace.log_prob == pytest.approx(expect)


def test_greedy_descent_is_deterministic_and_threshold_based(rng):
    store, nets = make_nets(n=8)
    mem = hm.init_memory(nets, rand_inputs(rng, 8, 2), 8)
    q = ad.tensor(rng.normal(size=3))
    t1 = hm.attend(mem, nets, q, mode="greedy")
    t2 = hm.attend(mem, nets, q, mode="greedy")
    assert t1.leaf == t2.leaf and t1.decisions == t2.decisions
    assert all(d == (p > 0.5) for d, p in zip(t1.decisions, t1.probs))


def test_sampled_descent_uniform_when_search_is_indifferent(rng):
    """Zeroed search weights give p=0.5 everywhere; leaf visits must be uniform."""
    n = 8
    store, nets = make_nets(n=n, seed=2)
    for name in store.names():
        if name.startswith("search/"):
            store[name].data[:] = 0.0
    mem = hm.init_memory(nets, rand_inputs(rng, n, 2), n)
    q = ad.tensor(rng.normal(size=3))
    counts = np.zeros(n)
    draws = 4000
    for _ in range(draws):
        trace = hm.attend(mem, nets, q, mode="sample", rng=rng)
        assert all(p == pytest.approx(0.5) for p in trace.probs)
        counts[trace.leaf - n] += 1
    assert counts.sum() == draws
    # chi-square uniformity check
    assert stats.chisquare(counts).pvalue > 1e-3


def test_attend_usage_errors(rng):
    store, nets = make_nets(n=4)
    mem = hm.init_memory(nets, rand_inputs(rng, 4, 2), 4)
    q = ad.tensor(rng.normal(size=3))
    with pytest.raises(UsageError):
        hm.attend(mem, nets, q, mode="sample")        # rng missing
    with pytest.raises(UsageError):
        hm.attend(mem, nets, q, mode="forced", forced=[True])   # wrong length
    with pytest.raises(UsageError):
        hm.attend(mem, nets, q, mode="argmax")


# ---------------------------------------------------------------------------
# writes


def test_write_update_touches_only_the_path(rng):
    n = 8
    store, nets = make_nets(n=n)
    mem = hm.init_memory(nets, rand_inputs(rng, n, 2), n)
    q = ad.tensor(rng.normal(size=3))
    trace = hm.attend(mem, nets, q, mode="sample", rng=rng)
    before = mem.node_values()
    old_leaf = mem.nodes[trace.leaf]

    nets.reset_counters()
    hm.write_update(mem, nets, trace, q)
    assert nets.write_calls == 1
    assert nets.join_calls == 3   # log2(8) path joins
    assert nets.search_calls == 0

    # independent recompute of the expected new values
    expected_leaf = nets_write_reference(store, nets, old_leaf, q)
    assert np.allclose(mem.nodes[trace.leaf].data, expected_leaf)
    touched = set(trace.path) | {trace.leaf}
    for e in range(1, 2 * n):
        if e in touched:
            continue
        assert np.array_equal(mem.node_values()[e], before[e]), f"node {e} moved"
    for e in reversed(trace.path):
        expect = nn.mlp_forward(
            store, "join", nets.join_spec,
            ad.concat([mem.nodes[2 * e], mem.nodes[2 * e + 1]]))
        assert np.allclose(mem.nodes[e].data, expect.data)


def nets_write_reference(store, nets, h, q):
    """Highway write recomputed outside HamNetworks."""
    inp = ad.concat([h, q])
    cand = nn.mlp_forward(store, "write_h", nets.write_h_spec, inp)
    gate = nn.mlp_forward(store, "write_t", nets.write_t_spec, inp)
    return gate.data * cand.data + (1 - gate.data) * h.data


def test_write_gate_starts_near_keep(rng):
    """The fresh transform gate is biased low: a write nearly preserves."""
    store, nets = make_nets(n=4, seed=3)
    h = ad.tensor(rng.normal(size=4))
    q = ad.tensor(rng.normal(size=3))
    inp = ad.concat([h, q])
    gate = nn.mlp_forward(store, "write_t", nets.write_t_spec, inp)
    assert np.all(gate.data < 0.5)   # sigmoid of (around) -1


def test_write_update_rejects_foreign_trace(rng):
    store, nets = make_nets(n=4)
    mem_a = hm.init_memory(nets, rand_inputs(rng, 4, 2), 4)
    mem_b = hm.init_memory(nets, rand_inputs(rng, 4, 2), 4)
    q = ad.tensor(rng.normal(size=3))
    trace = hm.attend(mem_a, nets, q, mode="sample", rng=rng)
    with pytest.raises(UsageError):
        hm.write_update(mem_b, nets, trace, q)


def test_read_leaf(rng):
    store, nets = make_nets(n=4)
    mem = hm.init_memory(nets, rand_inputs(rng, 4, 2), 4)
    trace = hm.attend(mem, nets, ad.tensor(rng.normal(size=3)),
                      mode="forced", forced=[True, False])
    assert hm.read_leaf(mem, trace) is mem.nodes[6]


# ---------------------------------------------------------------------------
# misc


def test_embed_requires_embed_network(rng):
    store, nets = make_nets(with_embed=False)
    with pytest.raises(UsageError):
        nets.embed(ad.tensor(rng.normal(size=2)))


def test_format_trace_line():
    trace = hm.AttentionTrace(path=[1, 2], decisions=[False, True],
                              probs=[0.25, 0.875], prob_tensors=[None, None],
                              leaf=5, log_prob=-1.0)
    assert hm.format_trace_line(3, trace, 4) == "3\t2\tLR\t0.2500,0.8750"
