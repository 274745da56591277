"""Evaluation: whole-sequence error rates, generalization runs, and probes.

A sequence counts as wrong when anything differs from the target: a data
bit, a missed end marker, or outputs that are too short or too long.  For
the data-structure tasks only the pop outputs are compared; pushes produce
don't-care outputs.  The bit error rate counts differing bits, with every
bit of a missing or surplus symbol counted as wrong.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import Model
from .tasks import DsExample, TaskSpec


def compare_sequence(predicted, example) -> tuple:
    """(wrong, wrong_bits, total_bits) for one predicted output sequence."""
    if isinstance(example, DsExample):
        wrong_bits = 0
        total_bits = 0
        wrong = False
        for t, target in enumerate(example.targets):
            if target is None:
                continue
            diff = int(np.sum(np.asarray(target) != predicted[t]))
            wrong_bits += diff
            total_bits += len(target)
            if diff:
                wrong = True
        return wrong, wrong_bits, total_bits
    b = example.targets[0].shape[0] - 1
    target_syms = [t[:b] for t in example.targets[:-1]]
    longest = max(len(target_syms), len(predicted))
    wrong_bits = 0
    for i in range(longest):
        if i < len(target_syms) and i < len(predicted):
            wrong_bits += int(np.sum(target_syms[i] != predicted[i]))
        else:
            wrong_bits += b
    total_bits = max(1, longest * b)
    wrong = len(predicted) != len(target_syms) or wrong_bits > 0
    return wrong, wrong_bits, total_bits


def _predict(model: Model, example):
    if isinstance(example, DsExample):
        return model.predict_ds(example.inputs)
    if model.config.attention == "soft":
        return model.predict_soft(example.inputs)
    return model.predict(example.inputs)


def validation_error(model: Model, task: TaskSpec, count: int, rng) -> float:
    """Whole-sequence error rate on freshly sampled examples."""
    n = model.config.n
    wrong = 0
    for _ in range(count):
        if task.mode == "raw":
            ex = task.sample(n, rng, min_len=n, max_len=n)
        else:
            ex = task.sample(n, rng)
        bad, _, _ = compare_sequence(_predict(model, ex), ex)
        wrong += bad
    return wrong / max(1, count)


@dataclass
class EvalReport:
    """Aggregate outcome of one evaluation run."""

    task: str
    attention: str
    n: int
    trials: int
    min_len: int
    max_len: int
    sequence_error: float
    bit_error: float
    mean_search_per_output: float

    CSV_HEADER = ("task,attention,n,trials,min_len,max_len,"
                  "sequence_error,bit_error,mean_search_per_output")

    def csv_row(self) -> str:
        return (f"{self.task},{self.attention},{self.n},{self.trials},"
                f"{self.min_len},{self.max_len},{self.sequence_error:.6f},"
                f"{self.bit_error:.6f},{self.mean_search_per_output:.3f}")

    def summary(self) -> str:
        lines = [
            f"task {self.task} ({self.attention} attention), memory n={self.n}",
            f"  {self.trials} examples, lengths {self.min_len}..{self.max_len}",
            f"  whole-sequence error: {self.sequence_error:.2%}",
            f"  bit error:            {self.bit_error:.2%}",
            f"  search calls/output:  {self.mean_search_per_output:.2f}",
        ]
        return "\n".join(lines)


def evaluate_test(model: Model, task: TaskSpec, trials: int = 2500, rng=None,
                  n: int | None = None, min_len: int | None = None,
                  max_len: int | None = None) -> EvalReport:
    """Fresh-example evaluation at capacity n with lengths U[min_len, max_len]."""
    if rng is None:
        rng = np.random.default_rng(0)
    n = n if n is not None else model.config.n
    if n != model.config.n:
        model = model.with_capacity(n)
    if task.mode == "raw":
        min_len = n if min_len is None else min_len
        max_len = n if max_len is None else max_len
    else:
        min_len = 1 if min_len is None else min_len
        max_len = n if max_len is None else max_len
    wrong = 0
    wrong_bits = 0
    total_bits = 0
    outputs = 0
    model.nets.reset_counters()
    searches0 = model.nets.search_calls
    for _ in range(trials):
        ex = task.sample(n, rng, min_len=min_len, max_len=max_len)
        pred = _predict(model, ex)
        bad, wb, tb = compare_sequence(pred, ex)
        wrong += bad
        wrong_bits += wb
        total_bits += tb
        # every prediction also spends one output step on the end marker
        outputs += len(pred) + (0 if isinstance(ex, DsExample) else 1)
    searches = model.nets.search_calls - searches0
    return EvalReport(task.name, model.config.attention, n, trials, min_len, max_len,
                      wrong / max(1, trials), wrong_bits / max(1, total_bits),
                      searches / max(1, outputs))


def evaluate_generalization(model: Model, task: TaskSpec, trials: int = 2500,
                            rng=None) -> EvalReport:
    """Evaluate on sequences longer than anything seen in training.

    The memory is enlarged to four times the training capacity and lengths
    are drawn from [2n + 1, 4n]; the parameters are untouched.
    """
    n_train = model.config.n
    if task.mode == "raw":
        return evaluate_test(model, task, trials, rng, n=4 * n_train,
                             min_len=4 * n_train, max_len=4 * n_train)
    return evaluate_test(model, task, trials, rng, n=4 * n_train,
                         min_len=2 * n_train + 1, max_len=4 * n_train)


def evaluate_ds(model: Model, task: TaskSpec, trials: int = 2500, rng=None,
                n_ops: int | None = None) -> EvalReport:
    """Data-structure evaluation: op sequences of a fixed length."""
    if task.mode != "raw":
        raise ConfigError(f"task {task.name} is not a data-structure task")
    n_ops = n_ops if n_ops is not None else model.config.n
    return evaluate_test(model, task, trials, rng, n=n_ops,
                         min_len=n_ops, max_len=n_ops)


def complexity_probe(n_values, d: int = 4, hidden: int = 4, seed: int = 0) -> list:
    """Measure network evaluations per access as the memory grows.

    For each n: one hard-attention access (attend plus write back) and one
    soft timestep (distribution, write, refresh), counted separately.
    """
    from . import autodiff as ad
    from .memory import attend, write_update
    from .model import ModelConfig
    from .soft import leaf_distribution, soft_write

    rows = []
    for n in n_values:
        cfg = ModelConfig(b=2, b_in=2, n=n, d=d, l=d, mlp_hidden=hidden)
        model = Model(cfg, seed=seed)
        with ad.no_grad():
            state = model.initial_state([np.zeros(cfg.b_in)])
            query = state.lstm.hidden
            model.nets.reset_counters()
            trace = attend(state.memory, model.nets, query, "greedy")
            write_update(state.memory, model.nets, trace, query)
            hard_search = model.nets.search_calls
            hard_join = model.nets.join_calls
            model.nets.reset_counters()
            dist = leaf_distribution(state.memory, model.nets, query)
            soft_write(state.memory, model.nets, dist, query)
            rows.append({
                "n": n,
                "hard_search": hard_search,
                "hard_join": hard_join,
                "soft_search": model.nets.search_calls,
                "soft_join": model.nets.join_calls,
                "soft_write": model.nets.write_calls,
            })
    return rows


def noisy_stub_sequence_error(bits: int = 320, flip_prob: float = 0.01,
                              trials: int = 10000, rng=None) -> float:
    """Sequence error of a synthetic predictor that flips each bit i.i.d.

    Sanity anchor for the whole-sequence metric: with 320 output bits and a
    1% per-bit flip probability, almost every sequence contains at least one
    flipped bit, so the error rate lands near 96%.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    flips = rng.random((trials, bits)) < flip_prob
    return float(np.mean(flips.any(axis=1)))
