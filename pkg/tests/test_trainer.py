"""Reward shaping, the surrogate cost, and the curriculum loop."""

import numpy as np
import pytest

from conftest import central_diff
from ham import autodiff as ad
from ham import nn
from ham import tasks
from ham import trainer as tr
from ham.errors import ConfigError, NumericsError
from ham.model import Model, ModelConfig


def small_cfg(**kw):
    base = dict(epochs=2, batch_size=3, batches_per_epoch=2, val_examples=6,
                alpha0=0.01, baseline_weight=0.1)
    base.update(kw)
    return tr.TrainConfig(**base)


# ---------------------------------------------------------------------------
# rewards


def test_train_config_validation():
    with pytest.raises(ConfigError):
        tr.TrainConfig(reward_kind="accuracy")
    with pytest.raises(ConfigError):
        tr.TrainConfig(gamma=1.5)
    with pytest.raises(ConfigError):
        tr.TrainConfig(start_k=-1)


def test_hamming_reward_counts_strictly_correct_bits():
    probs = np.array([0.9, 0.3, 0.5, 0.49])
    target = np.array([1.0, 0.0, 1.0, 0.0])
    # bit 0: 0.9 > 0.5 yes; bit 1: 0.7 yes; bit 2: exactly 0.5 no; bit 3: 0.51 yes
    assert tr.hamming_reward(probs, target) == 3.0
    assert tr.hamming_reward(probs, target, normalize=True) == pytest.approx(0.75)
    assert tr.hamming_reward(np.array([0.1]), np.array([1.0])) == 0.0


def test_logprob_reward_closed_form():
    probs = np.array([0.8, 0.25])
    target = np.array([1.0, 0.0])
    expect = np.log(0.8) + np.log(0.75)
    assert tr.logprob_reward(probs, target) == pytest.approx(expect)


def test_logprob_reward_clamps_saturated_probs():
    r = tr.logprob_reward(np.array([1.0]), np.array([0.0]))
    assert np.isfinite(r)
    assert r == pytest.approx(np.log(1e-6))


def test_discounted_returns_against_double_loop(rng):
    rewards = list(rng.normal(size=7))
    for gamma in (0.0, 0.5, 0.98, 1.0):
        got = tr.discounted_returns(rewards, gamma)
        expect = [sum(gamma ** (i - t) * rewards[i] for i in range(t, 7))
                  for t in range(7)]
        assert np.allclose(got, expect)


def test_entropy_penalty_value_and_symmetry():
    alpha = 0.02
    p = ad.tensor(np.asarray(0.5))
    pen = tr.entropy_penalty(p, alpha)
    assert float(pen.data) == pytest.approx(alpha / np.log(2.0))
    # diverges as the decision saturates
    hi = tr.entropy_penalty(ad.tensor(np.asarray(0.999)), alpha)
    assert float(hi.data) > float(pen.data) * 20


def test_entropy_penalty_gradient():
    theta = np.array([0.3])

    def build():
        t = ad.tensor(theta)
        p = ad.reshape(ad.sigmoid(t), ())
        return tr.entropy_penalty(p, 0.05)

    out = build()
    # need graph wrt theta: rebuild with a live tensor
    t = ad.tensor(theta.copy())
    p = ad.reshape(ad.sigmoid(t), ())
    pen = tr.entropy_penalty(p, 0.05)
    ad.backward(pen)
    fd = central_diff(lambda: float(build().data), theta)
    assert np.allclose(t.grad, fd, atol=1e-7)


def test_nll_term_closed_form():
    probs = ad.tensor(np.array([0.8, 0.25, 0.6]))
    target = np.array([1.0, 0.0, 0.0])
    nll = tr._nll_term(probs, target)
    expect = -(np.log(0.8) + np.log(0.75) + np.log(0.4))
    assert float(nll.data) == pytest.approx(expect)


# ---------------------------------------------------------------------------
# rollouts


def test_collect_rollout_decision_mapping(rng):
    cfg = ModelConfig(b=2, b_in=2, n=4, d=5, l=5, eta=2, mlp_hidden=5)
    model = Model(cfg, seed=1)
    ex = tasks.get_task("reverse", bits=2).sample(4, rng, min_len=3, max_len=3)
    roll = tr.collect_rollout(model, ex, rng)
    assert roll.eta == 2
    n_out = len(ex.targets)
    assert len(roll.bit_probs) == n_out
    assert len(roll.baselines) == n_out
    # eta * outputs timesteps, log2(4) = 2 decisions each
    assert len(roll.decision_probs) == 2 * n_out * 2
    assert roll.decision_output == [s // 2 for s in range(2 * n_out) for _ in range(2)]
    assert all(roll.loss_mask)
    # log_prob consistent with the flattened decisions
    manual = sum(np.log(np.clip(p.data if d else 1 - p.data, 1e-6, 1 - 1e-6))
                 for p, d in zip(roll.decision_probs, roll.decision_dirs))
    assert roll.log_prob == pytest.approx(float(manual))


def test_collect_rollout_raw_masks_pushes(rng):
    task = tasks.get_task("stack")
    model = Model(ModelConfig(b=5, b_in=6, n=8, d=6, l=6, mode="raw", mlp_hidden=6))
    ex = task.sample(8, rng, min_len=8, max_len=8)
    roll = tr.collect_rollout(model, ex, rng)
    assert roll.loss_mask == [t is not None for t in ex.targets]
    for live, target, orig in zip(roll.loss_mask, roll.targets, ex.targets):
        if live:
            assert np.array_equal(target, orig)
        else:
            assert np.array_equal(target, np.zeros(5))
    rewards = tr.episode_rewards(roll, small_cfg())
    for live, r in zip(roll.loss_mask, rewards):
        if not live:
            assert r == 0.0


def test_baseline_head_is_stop_gradient(rng):
    cfg = ModelConfig(b=2, b_in=2, n=2, d=4, l=4, mlp_hidden=4)
    model = Model(cfg, seed=0)
    h = ad.sigmoid(ad.tensor(rng.normal(size=4)))
    bl = tr._baseline_head(model, h, "baseline")
    ad.backward(bl)
    # gradient reaches the head weights but must not flow into h's graph
    assert model.store["baseline/w"].grad.any()
    assert h.grad is None


# ---------------------------------------------------------------------------
# the surrogate cost


def one_decision_rollout(theta_tensor, bit_probs, target, baseline_value, right=True):
    p = ad.reshape(ad.sigmoid(theta_tensor), ())
    return tr.Rollout(
        eta=1,
        bit_probs=[ad.tensor(bit_probs)],
        targets=[target],
        loss_mask=[True],
        decision_probs=[p],
        decision_dirs=[right],
        decision_output=[0],
        baselines=[ad.tensor(np.asarray(baseline_value))],
    )


def test_policy_term_gradient_hand_derived():
    """One decision, one output: d(cost)/dtheta = -advantage * (1 - p)."""
    theta = np.array([0.4])
    probs = np.array([0.9, 0.2])
    target = np.array([1.0, 0.0])
    cfg = small_cfg(reward_kind="hamming", gamma=1.0, baseline_weight=0.0)

    t = ad.parameter(theta)
    roll = one_decision_rollout(t, probs, target, baseline_value=0.5, right=True)
    loss, stats = tr.reinforce_loss(roll, cfg, alpha=0.0)
    ad.backward(loss)

    reward = 2.0            # both bits on the correct side
    advantage = reward - 0.5
    p = 1.0 / (1.0 + np.exp(-theta[0]))
    # d/dtheta of -advantage * log sigmoid(theta) = -advantage * (1 - p)
    assert t.grad[0] == pytest.approx(-advantage * (1.0 - p), rel=1e-12)
    assert stats.total_reward == reward


def test_policy_term_left_branch_gradient():
    theta = np.array([-0.3])
    cfg = small_cfg(gamma=1.0, baseline_weight=0.0)
    t = ad.parameter(theta)
    roll = one_decision_rollout(t, np.array([0.9]), np.array([1.0]),
                                baseline_value=0.0, right=False)
    loss, _ = tr.reinforce_loss(roll, cfg, alpha=0.0)
    ad.backward(loss)
    p = 1.0 / (1.0 + np.exp(-theta[0]))
    # chosen probability is 1 - p; d/dtheta of -R*log(1-p) = R * p
    assert t.grad[0] == pytest.approx(1.0 * p, rel=1e-12)


def test_zero_advantage_skips_policy_term():
    theta = np.array([0.1])
    cfg = small_cfg(gamma=1.0, baseline_weight=0.0)
    t = ad.parameter(theta)
    # baseline exactly equals the reward (1 correct bit)
    roll = one_decision_rollout(t, np.array([0.9]), np.array([1.0]),
                                baseline_value=1.0)
    loss, _ = tr.reinforce_loss(roll, cfg, alpha=0.0)
    ad.backward(loss)
    assert t.grad[0] == 0.0
    assert float(loss.data) == pytest.approx(-np.log(0.9))


def test_baseline_regression_term():
    theta = np.array([0.1])
    cfg = small_cfg(gamma=1.0, baseline_weight=0.25)
    t = ad.parameter(theta)
    bl = ad.parameter(np.asarray(0.3))
    roll = one_decision_rollout(t, np.array([0.9]), np.array([1.0]), 0.0)
    roll.baselines = [ad.reshape(bl, ())]
    loss, _ = tr.reinforce_loss(roll, cfg, alpha=0.0)
    ad.backward(loss)
    # reward 1, baseline 0.3: term 0.25*(0.3-1)^2, gradient 2*0.25*(0.3-1)
    assert bl.grad == pytest.approx(2 * 0.25 * (0.3 - 1.0))
    expect_loss = -np.log(0.9) + 0.25 * 0.7 ** 2 - 0.7 * np.log(1 / (1 + np.exp(-0.1)))
    assert float(loss.data) == pytest.approx(expect_loss)


def test_entropy_term_included_when_alpha_set():
    theta = np.array([0.0])
    cfg = small_cfg(gamma=1.0, baseline_weight=0.0)
    t = ad.parameter(theta)
    roll = one_decision_rollout(t, np.array([0.9]), np.array([1.0]), 1.0)
    base_loss, _ = tr.reinforce_loss(roll, cfg, alpha=0.0)
    t2 = ad.parameter(theta)
    roll2 = one_decision_rollout(t2, np.array([0.9]), np.array([1.0]), 1.0)
    with_ent, _ = tr.reinforce_loss(roll2, cfg, alpha=0.04)
    assert float(with_ent.data) - float(base_loss.data) == \
        pytest.approx(0.04 / np.log(2.0))


def test_discounting_feeds_decision_advantages(rng):
    """With gamma=0 each decision sees only its own window's reward."""
    cfg = ModelConfig(b=1, b_in=1, n=2, d=4, l=4, mlp_hidden=4)
    model = Model(cfg, seed=3)
    ex = tasks.get_task("reverse", bits=1).sample(2, rng, min_len=2, max_len=2)
    roll = tr.collect_rollout(model, ex, rng)
    rewards = tr.episode_rewards(roll, small_cfg(gamma=0.0))
    returns_g0 = tr.discounted_returns(rewards, 0.0)
    assert returns_g0 == rewards
    returns_g1 = tr.discounted_returns(rewards, 1.0)
    assert returns_g1[0] == pytest.approx(sum(rewards))


# ---------------------------------------------------------------------------
# estimator expectation (small exhaustive check; the full one is acceptance 2)


def exact_expected_nll_grad(model, ex, n_steps):
    """Gradient of sum_A p(A) * NLL(A) computed in one differentiable graph."""
    depth = model.config.n.bit_length() - 1
    model.store.zero_grad()
    total = None
    for code in range(2 ** (depth * n_steps)):
        forced = []
        for s in range(n_steps):
            forced.append([bool((code >> (s * depth + k)) & 1) for k in range(depth)])
        episode = model.run_episode(ex.inputs, n_steps, mode="forced", forced=forced)
        log_p = None
        for trace in episode.traces:
            for p_t, d in zip(trace.prob_tensors, trace.decisions):
                chosen = p_t if d else 1.0 - p_t
                term = ad.log(ad.clip(chosen, 1e-6, 1 - 1e-6))
                log_p = term if log_p is None else log_p + term
        # p(A) via exp(log p) = product of chosen probabilities
        p_a = None
        for trace in episode.traces:
            for p_t, d in zip(trace.prob_tensors, trace.decisions):
                chosen = p_t if d else 1.0 - p_t
                p_a = chosen if p_a is None else ad.mul(p_a, chosen)
        nll = None
        for probs, target in zip(episode.bit_probs, ex.targets[:n_steps]):
            term = tr._nll_term(probs, target)
            nll = term if nll is None else nll + term
        contrib = ad.mul(p_a, nll)
        total = contrib if total is None else total + contrib
    ad.backward(total)
    return {k: np.array(p.grad) for k, p in model.store.items()}, float(total.data)


def expected_estimator_grad(model, ex, n_steps, cfg, baseline=0.0):
    depth = model.config.n.bit_length() - 1
    grads = None
    for code in range(2 ** (depth * n_steps)):
        forced = []
        for s in range(n_steps):
            forced.append([bool((code >> (s * depth + k)) & 1) for k in range(depth)])
        model.store.zero_grad()
        roll = tr.collect_rollout(model, ex, mode="forced", forced=forced)
        if baseline != 0.0:
            roll.baselines = [ad.tensor(np.asarray(baseline)) for _ in roll.baselines]
        else:
            roll.baselines = [ad.tensor(np.asarray(0.0)) for _ in roll.baselines]
        loss, _ = tr.reinforce_loss(roll, cfg, alpha=0.0)
        ad.backward(loss)
        weight = np.exp(roll.log_prob)
        cur = {k: weight * p.grad for k, p in model.store.items()}
        if grads is None:
            grads = cur
        else:
            for k in grads:
                grads[k] += cur[k]
    return grads


def test_estimator_is_unbiased_n2(rng):
    cfg = ModelConfig(b=1, b_in=1, n=2, d=3, l=3, mlp_hidden=3)
    model = Model(cfg, seed=5)
    ex = tasks.get_task("reverse", bits=1).sample(2, rng, min_len=1, max_len=1)
    n_steps = len(ex.targets)
    exact, _ = exact_expected_nll_grad(model, ex, n_steps)
    est_cfg = tr.TrainConfig(gamma=1.0, reward_kind="logprob",
                             baseline_weight=0.0)
    est = expected_estimator_grad(model, ex, n_steps, est_cfg)
    for k in exact:
        assert np.max(np.abs(exact[k] - est[k])) < 1e-8, k
    # a constant baseline must not shift the expectation
    est_b = expected_estimator_grad(model, ex, n_steps, est_cfg, baseline=0.37)
    for k in exact:
        assert np.max(np.abs(exact[k] - est_b[k])) < 1e-8, k


# ---------------------------------------------------------------------------
# optimization steps


def test_train_step_updates_parameters(rng):
    cfg = ModelConfig(b=2, b_in=2, n=2, d=4, l=4, mlp_hidden=4)
    model = Model(cfg, seed=2)
    task = tasks.get_task("reverse", bits=2)
    batch = [task.sample(2, rng) for _ in range(3)]
    before = model.store.value_arrays()
    info = tr.train_step(model, batch, small_cfg(), nn.make_adam_state(model.store),
                         lr=1e-2, alpha=0.01, rng=rng)
    assert np.isfinite(info["cost"]) and np.isfinite(info["grad_norm"])
    after = model.store.value_arrays()
    assert any(not np.array_equal(before[k], after[k]) for k in before)


def test_train_step_zero_lr_freezes_parameters(rng):
    cfg = ModelConfig(b=2, b_in=2, n=2, d=4, l=4, mlp_hidden=4)
    model = Model(cfg, seed=2)
    task = tasks.get_task("reverse", bits=2)
    batch = [task.sample(2, rng) for _ in range(2)]
    before = model.store.value_arrays()
    tr.train_step(model, batch, small_cfg(), nn.make_adam_state(model.store),
                  lr=0.0, alpha=0.01, rng=rng)
    after = model.store.value_arrays()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_train_step_raises_on_poisoned_parameters(rng):
    cfg = ModelConfig(b=2, b_in=2, n=2, d=4, l=4, mlp_hidden=4)
    model = Model(cfg, seed=2)
    model.store["out/w"].data[:] = np.nan
    task = tasks.get_task("reverse", bits=2)
    with pytest.raises(NumericsError):
        tr.train_step(model, [task.sample(2, rng)], small_cfg(),
                      nn.make_adam_state(model.store), lr=1e-3, alpha=0.0, rng=rng)


def test_dham_step_reduces_cost_on_fixed_batch(rng):
    cfg = ModelConfig(b=2, b_in=2, n=4, d=6, l=6, attention="soft", mlp_hidden=6)
    model = Model(cfg, seed=4)
    task = tasks.get_task("reverse", bits=2)
    batch = [task.sample(4, rng) for _ in range(4)]
    adam = nn.make_adam_state(model.store)
    tcfg = small_cfg()
    first = tr.train_dham_step(model, batch, tcfg, adam, lr=0.01)
    last = None
    for _ in range(30):
        last = tr.train_dham_step(model, batch, tcfg, adam, lr=0.01)
    assert last["cost"] < first["cost"]
    assert last["reward_per_step"] is None


# ---------------------------------------------------------------------------
# curriculum


def test_curriculum_advance_rules():
    state = tr.CurriculumState(1)
    assert state.capacity == 2
    state = tr.curriculum_advance(state, 0.3, threshold=0.05)
    assert state.k == 1 and state.history == [0.3]
    state = tr.curriculum_advance(state, 0.04, threshold=0.05)
    assert state.k == 2 and state.capacity == 4
    # exactly at threshold: no advance
    state = tr.curriculum_advance(state, 0.05, threshold=0.05)
    assert state.k == 2
    assert state.history == [0.3, 0.04, 0.05]


def test_run_training_smoke_and_metrics(rng):
    task = tasks.get_task("reverse", bits=2)
    mcfg = ModelConfig(b=2, b_in=2, n=4, d=4, l=4, mlp_hidden=4)
    seen = []

    def on_epoch(row, model, adam, curriculum, improved):
        seen.append((row["epoch"], row["n"], improved))

    result = tr.run_training(task, mcfg, small_cfg(), seed=7, on_epoch=on_epoch)
    assert result.epochs_run == 2
    assert len(result.metrics) == 2
    assert len(seen) == 2
    assert seen[0][2] is True      # first epoch always improves
    for row in result.metrics:
        assert set(row) == {"epoch", "n", "train_cost", "mean_reward",
                            "val_error", "lr", "alpha"}
        assert 0.0 <= row["val_error"] <= 1.0
    assert result.best_values is not None
    result.load_best()


def test_run_training_determinism():
    task = tasks.get_task("reverse", bits=2)
    mcfg = ModelConfig(b=2, b_in=2, n=2, d=4, l=4, mlp_hidden=4)
    r1 = tr.run_training(task, mcfg, small_cfg(), seed=3)
    r2 = tr.run_training(task, mcfg, small_cfg(), seed=3)
    assert r1.metrics == r2.metrics
    v1, v2 = r1.model.store.value_arrays(), r2.model.store.value_arrays()
    assert all(np.array_equal(v1[k], v2[k]) for k in v1)


def test_run_training_early_stop():
    task = tasks.get_task("reverse", bits=2)
    mcfg = ModelConfig(b=2, b_in=2, n=2, d=4, l=4, mlp_hidden=4)
    result = tr.run_training(task, mcfg, small_cfg(early_stop_error=1.0), seed=3)
    assert result.epochs_run == 1   # untrained error <= 100% triggers the stop


def test_run_training_time_limit():
    task = tasks.get_task("reverse", bits=2)
    mcfg = ModelConfig(b=2, b_in=2, n=4, d=4, l=4, mlp_hidden=4)
    result = tr.run_training(task, mcfg,
                             small_cfg(epochs=50, time_limit_s=0.0), seed=3)
    assert result.epochs_run == 1


def test_run_training_respects_min_capacity():
    task = tasks.get_task("add")     # needs at least 4 leaves
    mcfg = ModelConfig(b=1, b_in=3, n=2, d=4, l=4, mlp_hidden=4)
    with pytest.raises(ConfigError):
        tr.run_training(task, mcfg, small_cfg(), seed=0)


def test_run_training_curriculum_grows_capacity(monkeypatch):
    """Force tiny validation error so the curriculum doubles every epoch."""
    task = tasks.get_task("reverse", bits=2)
    mcfg = ModelConfig(b=2, b_in=2, n=8, d=4, l=4, mlp_hidden=4)
    monkeypatch.setattr(tr.ev, "validation_error", lambda *a, **k: 0.0)
    result = tr.run_training(task, mcfg, small_cfg(epochs=3, batches_per_epoch=1),
                             seed=0)
    ns = [row["n"] for row in result.metrics]
    assert ns == [2, 4, 8]
    assert result.best_capacity == 8
