"""Training: episode scoring, the policy-gradient step, and the curriculum loop.

With hard attention the attention decisions are discrete, so the model is
trained on a surrogate cost whose gradient is the score-function estimator:

    cost = -log p(y | decisions)                      (reconstruction)
           - sum_i advantage(t_i) * log p(decision_i) (policy term)
           + baseline_weight * sum_t (bl_t - R_t)^2   (baseline regression)
           + alpha * sum_i 1 / H(p_i)                 (entropy penalty)

R_t is the discounted sum of future per-output rewards, the advantage is
R_t minus a learned baseline, and decision i belongs to the output timestep
whose window it falls into.  The baseline reads the controller state through
a stop-gradient, and the advantage enters the policy term as a constant, so
the baseline regression and the policy gradient cannot contaminate each
other.  The per-output reward defaults to the number of bits on the correct
side of 0.5; a config switch normalizes it or replaces it with the output
log-likelihood.

Soft attention needs none of this: the episode is differentiable, so the
cost is just the negative log-likelihood of the targets.

The curriculum starts small and doubles the number of leaves whenever the
validation error at the current size falls below a threshold.  Parameters
are capacity-independent, so the same store is reused throughout.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import evaluate as ev
from . import nn
from .autodiff import Tensor
from .errors import ConfigError, NumericsError
from .memory import PROB_EPS
from .model import Model, ModelConfig
from .tasks import DsExample, TaskSpec

REWARD_KINDS = ("hamming", "logprob")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization and curriculum settings."""

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

    def __post_init__(self):
        if self.reward_kind not in REWARD_KINDS:
            raise ConfigError(f"unknown reward kind {self.reward_kind!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.start_k < 0:
            raise ConfigError("start_k must be non-negative")


# ---------------------------------------------------------------------------
# rewards and returns


def hamming_reward(probs: np.ndarray, target: np.ndarray, normalize: bool = False) -> float:
    """Number of output bits whose probability sits strictly on the correct side."""
    p_correct = probs * target + (1.0 - probs) * (1.0 - target)
    r = float(np.count_nonzero(p_correct > 0.5))
    if normalize:
        r /= len(target)
    return r


def logprob_reward(probs: np.ndarray, target: np.ndarray) -> float:
    p_correct = probs * target + (1.0 - probs) * (1.0 - target)
    return float(np.sum(np.log(np.clip(p_correct, PROB_EPS, 1.0 - PROB_EPS))))


def discounted_returns(rewards, gamma: float) -> list:
    """R_t = sum_{i >= t} gamma^(i - t) * r_i."""
    out = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class Rollout:
    """One recorded episode plus everything the cost needs to score it."""

    eta: int
    bit_probs: list           # tensors, one per output timestep
    targets: list             # float bit vectors, same width as bit_probs
    loss_mask: list           # False where the output is a don't-care
    decision_probs: list      # branch-right probability tensors
    decision_dirs: list       # True where the walk went right
    decision_output: list     # output timestep index each decision feeds
    baselines: list           # scalar tensors, one per output timestep
    log_prob: float = 0.0     # log-probability of all taken decisions


def _baseline_head(model: Model, value: Tensor, prefix: str) -> Tensor:
    out = ad.matmul(model.store[f"{prefix}/w"], ad.detach(value)) + model.store[f"{prefix}/b"]
    return ad.reshape(out, ())


def collect_rollout(model: Model, example, rng=None, mode: str = "sample",
                    forced=None) -> Rollout:
    """Run one episode with the training horizon and flatten its decisions."""
    eta = model.config.eta
    if isinstance(example, DsExample):
        episode = model.run_raw_episode(example.inputs, mode, rng, forced)
        targets = [np.zeros(model.config.b) if t is None else np.asarray(t, dtype=np.float64)
                   for t in example.targets]
        mask = [t is not None for t in example.targets]
        baselines = [_baseline_head(model, h, "rawbl") for h in episode.hiddens]
    else:
        episode = model.run_episode(example.inputs, len(example.targets), mode, rng, forced)
        targets = [np.asarray(t, dtype=np.float64) for t in example.targets]
        mask = [True] * len(targets)
        baselines = [_baseline_head(model, h, "baseline") for h in episode.hiddens]
    probs, dirs, out_idx = [], [], []
    log_prob = 0.0
    for s, trace in enumerate(episode.traces):
        for p_t, d in zip(trace.prob_tensors, trace.decisions):
            probs.append(p_t)
            dirs.append(d)
            out_idx.append(s // eta)
        log_prob += trace.log_prob
    return Rollout(eta, episode.bit_probs, targets, mask, probs, dirs, out_idx,
                   baselines, log_prob)


@dataclass
class RolloutStats:
    cost: float
    total_reward: float
    output_steps: int


def episode_rewards(rollout: Rollout, cfg: TrainConfig) -> list:
    rewards = []
    for probs, target, live in zip(rollout.bit_probs, rollout.targets, rollout.loss_mask):
        if not live:
            rewards.append(0.0)
        elif cfg.reward_kind == "hamming":
            rewards.append(hamming_reward(probs.data, target, cfg.reward_normalize))
        else:
            rewards.append(logprob_reward(probs.data, target))
    return rewards


def _nll_term(probs: Tensor, target: np.ndarray) -> Tensor:
    p_correct = probs * target + (1.0 - probs) * (1.0 - target)
    return ad.neg(ad.tsum(ad.log(ad.clip(p_correct, PROB_EPS, 1.0 - PROB_EPS))))


def entropy_penalty(p: Tensor, alpha: float) -> Tensor:
    """alpha / H(p) for one binary decision node, p clamped away from 0 and 1."""
    p_c = ad.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    q_c = 1.0 - p_c
    ent = ad.neg(ad.mul(p_c, ad.log(p_c)) + ad.mul(q_c, ad.log(q_c)))
    return ad.reciprocal(ent) * alpha


def reinforce_loss(rollout: Rollout, cfg: TrainConfig, alpha: float = 0.0):
    """Surrogate cost for one episode; minimizing it follows the estimator."""
    rewards = episode_rewards(rollout, cfg)
    returns = discounted_returns(rewards, cfg.gamma)
    baseline_values = [float(b.data) for b in rollout.baselines]
    loss = ad.tensor(0.0)
    for probs, target, live, ret, bl in zip(rollout.bit_probs, rollout.targets,
                                            rollout.loss_mask, returns,
                                            rollout.baselines):
        if live:
            loss = loss + _nll_term(probs, target)
        if cfg.baseline_weight != 0.0:
            diff = bl - ret
            loss = loss + cfg.baseline_weight * ad.mul(diff, diff)
    for p_t, right, t in zip(rollout.decision_probs, rollout.decision_dirs,
                             rollout.decision_output):
        advantage = returns[t] - baseline_values[t]
        chosen = p_t if right else 1.0 - p_t
        if advantage != 0.0:
            log_p = ad.log(ad.clip(chosen, PROB_EPS, 1.0 - PROB_EPS))
            loss = loss + (-advantage) * log_p
        if alpha != 0.0:
            loss = loss + entropy_penalty(p_t, alpha)
    stats = RolloutStats(float(loss.data), float(sum(rewards)),
                         sum(1 for live in rollout.loss_mask if live))
    return loss, stats


def dham_loss(model: Model, example):
    """Negative log-likelihood of the targets under soft attention."""
    episode = model.run_soft_episode(example.inputs, len(example.targets))
    loss = ad.tensor(0.0)
    for probs, target in zip(episode.bit_probs, example.targets):
        loss = loss + _nll_term(probs, np.asarray(target, dtype=np.float64))
    stats = RolloutStats(float(loss.data), 0.0, len(example.targets))
    return loss, stats


# ---------------------------------------------------------------------------
# optimization steps


def train_step(model: Model, batch, cfg: TrainConfig, adam: nn.AdamState,
               lr: float, alpha: float, rng) -> dict:
    """One sampled REINFORCE update over a batch of episodes."""
    model.store.zero_grad()
    inv = 1.0 / len(batch)
    cost_sum = reward_sum = 0.0
    steps_sum = 0
    for example in batch:
        rollout = collect_rollout(model, example, rng, "sample")
        loss, stats = reinforce_loss(rollout, cfg, alpha)
        if not np.isfinite(stats.cost):
            raise NumericsError("non-finite training cost")
        ad.backward(loss, np.asarray(inv))
        cost_sum += stats.cost
        reward_sum += stats.total_reward
        steps_sum += stats.output_steps
    grad_norm = nn.clip_global_norm(model.store, cfg.clip_norm)
    nn.adam_step(model.store, adam, lr)
    return {"cost": cost_sum * inv,
            "reward_per_step": reward_sum / max(1, steps_sum),
            "grad_norm": grad_norm}


def train_dham_step(model: Model, batch, cfg: TrainConfig, adam: nn.AdamState,
                    lr: float) -> dict:
    """One exact-gradient update over a batch of soft episodes."""
    model.store.zero_grad()
    inv = 1.0 / len(batch)
    cost_sum = 0.0
    for example in batch:
        loss, stats = dham_loss(model, example)
        if not np.isfinite(stats.cost):
            raise NumericsError("non-finite training cost")
        ad.backward(loss, np.asarray(inv))
        cost_sum += stats.cost
    grad_norm = nn.clip_global_norm(model.store, cfg.clip_norm)
    nn.adam_step(model.store, adam, lr)
    return {"cost": cost_sum * inv, "reward_per_step": None, "grad_norm": grad_norm}


# ---------------------------------------------------------------------------
# curriculum


@dataclass
class CurriculumState:
    """Current size exponent (n = 2^k) and the validation error history."""

    k: int
    history: list = field(default_factory=list)

    @property
    def capacity(self) -> int:
        return 2 ** self.k


def curriculum_advance(state: CurriculumState, error: float,
                       threshold: float) -> CurriculumState:
    """Double the memory when the error beats the threshold; never shrink."""
    history = state.history + [float(error)]
    k = state.k + 1 if error < threshold else state.k
    return CurriculumState(k, history)


# ---------------------------------------------------------------------------
# the training loop


@dataclass
class TrainResult:
    model: Model
    adam: nn.AdamState
    curriculum: CurriculumState
    metrics: list
    best_values: dict | None
    best_error: float | None
    best_capacity: int | None
    epochs_run: int

    def load_best(self) -> None:
        """Overwrite the live parameters with the best-validation snapshot."""
        if self.best_values is not None:
            self.model.store.load_values(self.best_values)


def _sample_batch(task: TaskSpec, n: int, count: int, rng) -> list:
    if task.mode == "raw":
        return [task.sample(n, rng, min_len=n, max_len=n) for _ in range(count)]
    return [task.sample(n, rng) for _ in range(count)]


def run_training(task: TaskSpec, model_cfg: ModelConfig, cfg: TrainConfig,
                 seed: int = 0, on_epoch=None, log=None) -> TrainResult:
    """Full curriculum training towards capacity model_cfg.n.

    `on_epoch(row, model, adam, curriculum, improved)` runs after each epoch;
    rows also come back in TrainResult.metrics.  The best snapshot prefers
    the largest capacity reached, then the lowest validation error.
    """
    n_target = model_cfg.n
    start = time.monotonic()
    curriculum = CurriculumState(cfg.start_k)
    n_cur = max(min(2 ** cfg.start_k, n_target), _min_pow2(task.min_capacity))
    if n_cur > n_target:
        raise ConfigError(f"task {task.name} does not fit into {n_target} leaves")
    curriculum.k = n_cur.bit_length() - 1
    model = Model(_cfg_at(model_cfg, n_cur), seed=seed)
    adam = nn.make_adam_state(model.store)
    train_rng = np.random.default_rng([seed, 1])
    soft = model_cfg.attention == "soft"
    metrics = []
    best_values = None
    best_error = None
    best_capacity = None
    stop = False
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr0 * cfg.lr_decay ** (epoch - 1)
        alpha = cfg.alpha0 * cfg.alpha_decay ** (epoch - 1)
        cost_acc = reward_acc = 0.0
        reward_seen = 0
        for _ in range(cfg.batches_per_epoch):
            batch = _sample_batch(task, n_cur, cfg.batch_size, train_rng)
            if soft:
                m = train_dham_step(model, batch, cfg, adam, lr)
            else:
                m = train_step(model, batch, cfg, adam, lr, alpha, train_rng)
            cost_acc += m["cost"]
            if m["reward_per_step"] is not None:
                reward_acc += m["reward_per_step"]
                reward_seen += 1
            if cfg.time_limit_s is not None and time.monotonic() - start > cfg.time_limit_s:
                stop = True
                break
        val_rng = np.random.default_rng([seed, 2, epoch])
        val_error = ev.validation_error(model, task, cfg.val_examples, val_rng)
        row = {
            "epoch": epoch,
            "n": n_cur,
            "train_cost": cost_acc / max(1, cfg.batches_per_epoch),
            "mean_reward": None if soft else reward_acc / max(1, reward_seen),
            "val_error": val_error,
            "lr": lr,
            "alpha": None if soft else alpha,
        }
        metrics.append(row)
        # ties refresh the snapshot: with equal validation error the later
        # epoch has trained longer and tends to generalize better
        improved = (best_capacity is None or n_cur > best_capacity
                    or (n_cur == best_capacity and val_error <= best_error))
        if improved:
            best_values = model.store.value_arrays()
            best_error = val_error
            best_capacity = n_cur
        if on_epoch is not None:
            on_epoch(row, model, adam, curriculum, improved)
        if log is not None:
            log.info("epoch %d n=%d cost=%.4f val_error=%.4f", epoch, n_cur,
                     row["train_cost"], val_error)
        if (n_cur == n_target and cfg.early_stop_error is not None
                and val_error <= cfg.early_stop_error):
            break
        if stop or (cfg.time_limit_s is not None
                    and time.monotonic() - start > cfg.time_limit_s):
            break
        curriculum = curriculum_advance(curriculum, val_error, cfg.curriculum_threshold)
        if curriculum.capacity != n_cur:
            n_cur = min(curriculum.capacity, n_target)
            curriculum.k = n_cur.bit_length() - 1
            model = model.with_capacity(n_cur)
    return TrainResult(model, adam, curriculum, metrics, best_values, best_error,
                       best_capacity, epoch)


def _min_pow2(x: int) -> int:
    n = 1
    while n < x:
        n *= 2
    return n


def _cfg_at(cfg: ModelConfig, n: int) -> ModelConfig:
    import dataclasses
    return dataclasses.replace(cfg, n=n)
