"""Task generators, their brute-force oracles, and the dataset text format.

Every generator builds the input symbols and produces the target sequence
through a plain brute-force oracle (list reversal, linear scan, two-finger
merge, insertion sort, grade-school addition, or a literal data-structure
simulation), so targets are correct by construction and independently
checkable.

Symbol encodings:

  reverse   b-bit vectors in, the same vectors reversed out (default b=10)
  search    (key, value) 5+5-bit pairs sorted by key, then a query symbol
            carrying the key and a zero value part; output is the value of
            the first pair matching the key
  merge     one real-valued priority channel in [0, 1] plus 5 value bits;
            two ascending runs in, values in global priority order out
  sort      (key, value) 5+5-bit pairs in, the stably key-sorted pairs out
  add       two binary numbers given lowest bit first, separated by '+' and
            terminated by '='; symbols are one data bit plus two indicator
            channels, the output is the sum, lowest bit first
  stack / queue / pqueue
            operation symbols (a pop flag, 5 value bits, and for pqueue 5
            priority bits); each pop must output the popped value

Targets of the sequence-to-sequence tasks get an extra end marker channel:
each data symbol is its b bits plus a trailing 0, and the final symbol is
all zeros with the marker set.  Data-structure targets have no end marker;
push positions carry no target at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConfigError

VALUE_BITS = 5
PRIORITY_LEVELS = 300  # merge priorities are k/300 for distinct k


def random_bits(rng, width: int) -> np.ndarray:
    return rng.integers(0, 2, size=width).astype(np.float64)


def bits_to_int(bits) -> int:
    """Interpret a 0/1 vector as an integer, most significant bit first."""
    out = 0
    for b in bits:
        out = 2 * out + int(round(float(b)))
    return out


def end_symbol(b: int) -> np.ndarray:
    out = np.zeros(b + 1)
    out[b] = 1.0
    return out


def targets_with_end(symbols, b: int) -> list:
    """Append the end-marker channel and the closing end symbol."""
    out = []
    for s in symbols:
        row = np.zeros(b + 1)
        row[:b] = s
        out.append(row)
    out.append(end_symbol(b))
    return out


@dataclass
class Example:
    """One sequence-to-sequence training example.

    `inputs` are b_in-wide float vectors, `targets` are (b+1)-wide bit
    vectors ending in the end symbol.
    """

    task_id: str
    inputs: list
    targets: list
    m: int
    m_prime: int | None = None


@dataclass
class DsOp:
    kind: str  # "push" or "pop"
    value: np.ndarray | None = None
    priority: np.ndarray | None = None


@dataclass
class DsExample:
    """One data-structure episode: ops, their encodings, per-op targets.

    `targets[t]` is the expected 5-bit output of op t for pops and None for
    pushes.
    """

    task_id: str
    ops: list
    inputs: list
    targets: list


# ---------------------------------------------------------------------------
# oracles


def reverse_oracle(symbols) -> list:
    return list(reversed(symbols))


def search_oracle(pairs, query) -> np.ndarray:
    """Linear scan for the first key match; the key must be present."""
    q = bits_to_int(query)
    for key, value in pairs:
        if bits_to_int(key) == q:
            return value
    raise ConfigError("search query does not occur among the keys")


def merge_oracle(seq1, seq2) -> list:
    """Two-finger merge of (priority, value) runs already sorted ascending."""
    out = []
    i = j = 0
    while i < len(seq1) and j < len(seq2):
        if seq1[i][0] <= seq2[j][0]:
            out.append(seq1[i][1])
            i += 1
        else:
            out.append(seq2[j][1])
            j += 1
    out.extend(v for _, v in seq1[i:])
    out.extend(v for _, v in seq2[j:])
    return out


def sort_oracle(pairs) -> list:
    """Stable insertion sort by integer key value."""
    out = []
    for key, value in pairs:
        k = bits_to_int(key)
        pos = len(out)
        while pos > 0 and bits_to_int(out[pos - 1][0]) > k:
            pos -= 1
        out.insert(pos, (key, value))
    return out


def add_oracle(a_bits, b_bits) -> list:
    """Grade-school binary addition, lowest bit first, m+1 output bits."""
    m = len(a_bits)
    out = []
    carry = 0
    for i in range(m):
        s = int(round(float(a_bits[i]))) + int(round(float(b_bits[i]))) + carry
        out.append(float(s & 1))
        carry = s >> 1
    out.append(float(carry))
    return out


def ds_oracle(kind: str, ops) -> list:
    """Replay the operations against a plain list-backed structure.

    Returns one entry per op: the popped 5-bit value for pops, None for
    pushes.  Popping an empty structure is a contract violation here; the
    generator never produces it.
    """
    if kind not in ("stack", "queue", "pqueue"):
        raise ConfigError(f"unknown structure kind {kind!r}")
    store: list = []
    results = []
    for op in ops:
        if op.kind == "push":
            store.append(op)
            results.append(None)
            continue
        if not store:
            raise ConfigError("pop on an empty structure")
        if kind == "stack":
            chosen = len(store) - 1
        elif kind == "queue":
            chosen = 0
        else:
            chosen = max(range(len(store)),
                         key=lambda i: bits_to_int(store[i].priority))
        results.append(store.pop(chosen).value)
    return results


# ---------------------------------------------------------------------------
# generators


def gen_reverse(m: int, rng, bits: int = 10) -> Example:
    if m < 1:
        raise ConfigError("reverse needs at least one symbol")
    symbols = [random_bits(rng, bits) for _ in range(m)]
    targets = targets_with_end(reverse_oracle(symbols), bits)
    return Example("reverse", [s.copy() for s in symbols], targets, m)


def gen_search(m: int, rng) -> Example:
    """m - 1 sorted (key, value) pairs followed by one query symbol."""
    if m < 2:
        raise ConfigError("search needs at least one pair plus the query")
    pairs = [(random_bits(rng, VALUE_BITS), random_bits(rng, VALUE_BITS))
             for _ in range(m - 1)]
    pairs.sort(key=lambda kv: bits_to_int(kv[0]))
    query = pairs[rng.integers(0, len(pairs))][0].copy()
    inputs = [np.concatenate([k, v]) for k, v in pairs]
    inputs.append(np.concatenate([query, np.zeros(VALUE_BITS)]))
    targets = targets_with_end([search_oracle(pairs, query)], VALUE_BITS)
    return Example("search", inputs, targets, m)


def gen_merge(m: int, m_prime: int, rng) -> Example:
    """Two priority-ascending runs; priorities are distinct fractions k/300."""
    total = m + m_prime
    if m < 0 or m_prime < 0 or total < 1:
        raise ConfigError("merge needs at least one element overall")
    if total > PRIORITY_LEVELS:
        raise CapacityError(f"at most {PRIORITY_LEVELS} distinct priorities exist")
    nums = rng.choice(PRIORITY_LEVELS, size=total, replace=False) + 1
    priorities = nums.astype(np.float64) / PRIORITY_LEVELS
    values = [random_bits(rng, VALUE_BITS) for _ in range(total)]
    seq1 = sorted(zip(priorities[:m], values[:m]), key=lambda pv: pv[0])
    seq2 = sorted(zip(priorities[m:], values[m:]), key=lambda pv: pv[0])
    inputs = [np.concatenate([[p], v]) for p, v in seq1 + seq2]
    targets = targets_with_end(merge_oracle(seq1, seq2), VALUE_BITS)
    return Example("merge", inputs, targets, m, m_prime)


def gen_sort(m: int, rng) -> Example:
    if m < 1:
        raise ConfigError("sort needs at least one pair")
    pairs = [(random_bits(rng, VALUE_BITS), random_bits(rng, VALUE_BITS))
             for _ in range(m)]
    inputs = [np.concatenate([k, v]) for k, v in pairs]
    targets = targets_with_end(
        [np.concatenate([k, v]) for k, v in sort_oracle(pairs)], 2 * VALUE_BITS)
    return Example("sort", inputs, targets, m)


def gen_add(m: int, rng) -> Example:
    """Two m-bit numbers, lowest bit first: a_1..a_m '+' b_1..b_m '='."""
    if m < 1:
        raise ConfigError("add needs at least one bit per number")
    a = random_bits(rng, m)
    b = random_bits(rng, m)
    inputs = []
    for bit in a:
        inputs.append(np.array([bit, 0.0, 0.0]))
    inputs.append(np.array([0.0, 1.0, 0.0]))  # '+'
    for bit in b:
        inputs.append(np.array([bit, 0.0, 0.0]))
    inputs.append(np.array([0.0, 0.0, 1.0]))  # '='
    targets = targets_with_end([np.array([s]) for s in add_oracle(a, b)], 1)
    return Example("add", inputs, targets, m)


def gen_ds_sequence(kind: str, n_ops: int, rng) -> DsExample:
    """Random op sequence; op t pops with probability t / n_ops.

    A pop drawn while the structure is empty is turned into a push.  For the
    priority queue, priorities are drawn without replacement so they stay
    pairwise distinct within the sequence, which caps the pushes at 32.
    """
    if kind not in ("stack", "queue", "pqueue"):
        raise ConfigError(f"unknown structure kind {kind!r}")
    if n_ops < 1:
        raise ConfigError("need at least one operation")
    priority_pool = None
    if kind == "pqueue":
        if n_ops > 2 ** VALUE_BITS:
            raise CapacityError("cannot keep 5-bit priorities distinct beyond 32 pushes")
        priority_pool = list(rng.permutation(2 ** VALUE_BITS)[:n_ops])
    ops = []
    live = 0
    for t in range(1, n_ops + 1):
        pop = rng.random() < t / n_ops
        if pop and live == 0:
            pop = False
        if pop:
            ops.append(DsOp("pop"))
            live -= 1
        else:
            value = random_bits(rng, VALUE_BITS)
            priority = None
            if kind == "pqueue":
                num = priority_pool.pop()
                priority = np.array(
                    [float((num >> (VALUE_BITS - 1 - i)) & 1) for i in range(VALUE_BITS)])
            ops.append(DsOp("push", value, priority))
            live += 1
    targets = ds_oracle(kind, ops)
    return DsExample(kind, ops, [encode_ds_op(kind, op) for op in ops], targets)


def encode_ds_op(kind: str, op: DsOp) -> np.ndarray:
    flag = np.array([1.0 if op.kind == "pop" else 0.0])
    value = op.value if op.value is not None else np.zeros(VALUE_BITS)
    if kind == "pqueue":
        priority = op.priority if op.priority is not None else np.zeros(VALUE_BITS)
        return np.concatenate([flag, value, priority])
    return np.concatenate([flag, value])


# ---------------------------------------------------------------------------
# task registry


@dataclass(frozen=True)
class TaskSpec:
    """Widths, cadence, and sampling entry point of one task."""

    name: str
    b: int
    b_in: int
    eta: int
    mode: str  # "controller" or "raw"
    min_capacity: int = 1

    def sample(self, n: int, rng, min_len: int = 1, max_len: int | None = None):
        """Draw one example whose input sequence fits into n leaves."""
        if n < self.min_capacity:
            raise ConfigError(f"task {self.name} needs memory for at least "
                              f"{self.min_capacity} symbols")
        if max_len is None:
            max_len = n
        if not 1 <= min_len <= max_len <= n:
            raise ConfigError(f"invalid length range [{min_len}, {max_len}] for n={n}")
        length = int(rng.integers(min_len, max_len + 1))
        if self.name == "reverse":
            return gen_reverse(length, rng, bits=self.b)
        if self.name == "search":
            return gen_search(max(2, length), rng)
        if self.name == "merge":
            m = int(rng.integers(0, length + 1))
            return gen_merge(m, length - m, rng)
        if self.name == "sort":
            return gen_sort(length, rng)
        if self.name == "add":
            m = max(1, (length - 2) // 2)
            return gen_add(m, rng)
        return gen_ds_sequence(self.name, length, rng)


_CONTROLLER_TASKS = {
    "reverse": dict(b=10, b_in=None, eta=1),
    "search": dict(b=VALUE_BITS, b_in=2 * VALUE_BITS, eta=2, min_capacity=2),
    "merge": dict(b=VALUE_BITS, b_in=1 + VALUE_BITS, eta=1),
    "sort": dict(b=2 * VALUE_BITS, b_in=2 * VALUE_BITS, eta=1),
    "add": dict(b=1, b_in=3, eta=1, min_capacity=4),
}

_RAW_TASKS = {
    "stack": dict(b=VALUE_BITS, b_in=1 + VALUE_BITS, eta=1),
    "queue": dict(b=VALUE_BITS, b_in=1 + VALUE_BITS, eta=1),
    "pqueue": dict(b=VALUE_BITS, b_in=1 + 2 * VALUE_BITS, eta=1),
}

TASK_NAMES = tuple(_CONTROLLER_TASKS) + tuple(_RAW_TASKS)


def get_task(name: str, bits: int | None = None) -> TaskSpec:
    """Look up a task; `bits` overrides the symbol width of reverse only."""
    if name in _CONTROLLER_TASKS:
        kw = dict(_CONTROLLER_TASKS[name])
        if name == "reverse":
            b = bits if bits is not None else kw["b"]
            kw.update(b=b, b_in=b)
        elif bits is not None and bits != kw["b"]:
            raise ConfigError(f"task {name} has a fixed symbol width of {kw['b']}")
        return TaskSpec(name=name, mode="controller", **kw)
    if name in _RAW_TASKS:
        if bits is not None and bits != VALUE_BITS:
            raise ConfigError(f"task {name} has a fixed symbol width of {VALUE_BITS}")
        return TaskSpec(name=name, mode="raw", **_RAW_TASKS[name])
    raise ConfigError(f"unknown task {name!r}")


# ---------------------------------------------------------------------------
# dataset text format


def _bits_str(bits) -> str:
    return "".join(str(int(round(float(b)))) for b in bits)


def format_example(ex) -> str:
    """One example as a tab-separated line of space-separated symbols.

    Sequence tasks have two fields, inputs and targets (targets without the
    end marker).  Data-structure tasks list ops and per-op targets, with '-'
    standing for the missing target of a push.
    """
    if isinstance(ex, DsExample):
        ops = []
        for op in ex.ops:
            if op.kind == "pop":
                ops.append("pop")
            elif op.priority is not None:
                ops.append(f"push|{_bits_str(op.value)}|{_bits_str(op.priority)}")
            else:
                ops.append(f"push|{_bits_str(op.value)}")
        targets = ["-" if t is None else _bits_str(t) for t in ex.targets]
        return " ".join(ops) + "\t" + " ".join(targets)
    if ex.task_id == "merge":
        inputs = [f"{s[0]:.6f}|{_bits_str(s[1:])}" for s in ex.inputs]
    else:
        inputs = [_bits_str(s) for s in ex.inputs]
    b = ex.targets[0].shape[0] - 1
    targets = [_bits_str(t[:b]) for t in ex.targets[:-1]]
    return " ".join(inputs) + "\t" + " ".join(targets)


def _parse_bits(text: str) -> np.ndarray:
    if not text or any(c not in "01" for c in text):
        raise ConfigError(f"malformed bit vector {text!r}")
    return np.array([float(c) for c in text])


def parse_example_line(line: str, task: TaskSpec):
    """Inverse of `format_example` for the given task."""
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 2:
        raise ConfigError("expected two tab-separated fields")
    in_toks = fields[0].split() if fields[0] else []
    out_toks = fields[1].split() if fields[1] else []
    if task.mode == "raw":
        ops = []
        for tok in in_toks:
            parts = tok.split("|")
            if parts[0] == "pop" and len(parts) == 1:
                ops.append(DsOp("pop"))
            elif parts[0] == "push" and len(parts) in (2, 3):
                value = _parse_bits(parts[1])
                priority = _parse_bits(parts[2]) if len(parts) == 3 else None
                ops.append(DsOp("push", value, priority))
            else:
                raise ConfigError(f"malformed op {tok!r}")
        if len(out_toks) != len(ops):
            raise ConfigError("target count does not match op count")
        targets = [None if t == "-" else _parse_bits(t) for t in out_toks]
        return DsExample(task.name, ops,
                         [encode_ds_op(task.name, op) for op in ops], targets)
    if task.name == "merge":
        inputs = []
        for tok in in_toks:
            parts = tok.split("|")
            if len(parts) != 2:
                raise ConfigError(f"malformed merge symbol {tok!r}")
            inputs.append(np.concatenate([[float(parts[0])], _parse_bits(parts[1])]))
    else:
        inputs = [_parse_bits(tok) for tok in in_toks]
    targets = targets_with_end([_parse_bits(tok) for tok in out_toks], task.b)
    return Example(task.name, inputs, targets, m=len(inputs))


def write_dataset(path, task: TaskSpec, count: int, n: int, seed: int) -> None:
    """Write `count` freshly sampled examples, one per line, after a header."""
    rng = np.random.default_rng(seed)
    with open(path, "w") as fh:
        fh.write(f"# task={task.name} b={task.b} n={n} count={count} seed={seed}\n")
        for _ in range(count):
            fh.write(format_example(task.sample(n, rng)) + "\n")
