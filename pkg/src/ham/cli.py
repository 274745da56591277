"""Command line entry point: train, eval, trace, gen.

Exit codes: 0 on success, 1 for usage or configuration problems, 2 when a
computation hits non-finite numbers.  The HAM_LOG environment variable picks
the log level (quiet, info, debug).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import evaluate as ev
from .config import resolve_run_config
from .errors import HamError, NumericsError
from .memory import format_trace_line
from .tasks import get_task, write_dataset, TASK_NAMES

log = logging.getLogger("ham")


class _Parser(argparse.ArgumentParser):
    # argparse normally exits(2) on usage errors; route them through the
    # package's error handling so the documented exit codes hold.
    def error(self, message):
        from .errors import ConfigError
        raise ConfigError(message)


def _setup_logging() -> None:
    level_name = os.environ.get("HAM_LOG", "info").lower()
    level = {"quiet": logging.WARNING, "info": logging.INFO,
             "debug": logging.DEBUG}.get(level_name, logging.INFO)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(message)s")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _overrides_from_args(args) -> dict:
    keys = ("task", "n", "eta", "attention", "mode", "epochs", "batch_size",
            "batches_per_epoch", "seed", "threads", "out", "d", "l")
    over = {key: getattr(args, key, None) for key in keys}
    over["bits"] = getattr(args, "b", None)
    for pair in getattr(args, "set", None) or []:
        if "=" not in pair:
            from .errors import ConfigError
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        over[key.strip()] = value
    return over


def cmd_train(args) -> int:
    from .trainer import run_training

    run = resolve_run_config(args.config, _overrides_from_args(args))
    if run.out is None:
        from .errors import ConfigError
        raise ConfigError("train needs an output directory (--out)")
    if run.threads > 1:
        log.warning("threads=%d requested; this build runs single-threaded",
                    run.threads)
    task = run.task_spec()
    model_cfg = run.model_config()
    train_cfg = run.train_config()
    out_dir = Path(run.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text("\n".join(run.echo_lines()) + "\n")
    soft = model_cfg.attention == "soft"
    if soft:
        columns = ("epoch", "n", "train_cost", "val_error", "lr")
    else:
        columns = ("epoch", "n", "train_cost", "mean_reward", "val_error", "lr", "alpha")
    metrics_path = out_dir / "metrics.csv"
    metrics_fh = open(metrics_path, "w")
    metrics_fh.write(",".join(columns) + "\n")
    metrics_fh.flush()

    def on_epoch(row, model, adam, curriculum, improved):
        metrics_fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")
        metrics_fh.flush()
        ckpt.save_checkpoint(out_dir / "last.ckpt", model, adam, train_cfg,
                             curriculum, run.task, run.bits)
        if improved:
            ckpt.save_checkpoint(out_dir / "best.ckpt", model, adam, train_cfg,
                                 curriculum, run.task, run.bits)
        if run.ckpt_every > 0 and row["epoch"] % run.ckpt_every == 0:
            ckpt.save_checkpoint(out_dir / f"epoch_{row['epoch']:03d}.ckpt",
                                 model, adam, train_cfg, curriculum,
                                 run.task, run.bits)

    try:
        result = run_training(task, model_cfg, train_cfg, seed=run.seed,
                              on_epoch=on_epoch, log=log)
    finally:
        metrics_fh.close()
    log.info("finished after %d epochs; best val error %.4f at n=%d",
             result.epochs_run, result.best_error, result.best_capacity)
    print(f"best val_error {result.best_error:.4f} at n={result.best_capacity} "
          f"({result.epochs_run} epochs); artifacts in {out_dir}")
    return 0


def _load_for_eval(args):
    bundle = ckpt.load_checkpoint(args.checkpoint)
    if getattr(args, "task", None) and args.task != bundle.task_name:
        from .errors import ConfigError
        raise ConfigError(f"checkpoint was trained on task {bundle.task_name!r}, "
                          f"not {args.task!r}")
    task = get_task(bundle.task_name, bits=bundle.task_bits)
    return bundle, task


def cmd_eval(args) -> int:
    bundle, task = _load_for_eval(args)
    rng = np.random.default_rng(args.seed)
    model = bundle.model
    if args.n is not None and args.protocol == "test":
        model = model.with_capacity(args.n)
    if args.protocol == "generalize":
        report = ev.evaluate_generalization(model, task, trials=args.trials, rng=rng)
    elif task.mode == "raw":
        report = ev.evaluate_ds(model, task, trials=args.trials, rng=rng)
    else:
        report = ev.evaluate_test(model, task, trials=args.trials, rng=rng)
    print(report.summary())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(ev.EvalReport.CSV_HEADER + "\n")
            fh.write(report.csv_row() + "\n")
        log.info("report written to %s", args.out)
    return 0


def cmd_trace(args) -> int:
    bundle, task = _load_for_eval(args)
    model = bundle.model
    if model.config.attention != "hard":
        from .errors import ConfigError
        raise ConfigError("attention traces require hard attention")
    rng = np.random.default_rng(args.seed)
    n = model.config.n
    if task.mode == "raw":
        example = task.sample(n, rng, min_len=n, max_len=n)
        symbols, traces = model.predict_ds(example.inputs, want_trace=True)
    else:
        kwargs = {}
        if args.length is not None:
            kwargs = {"min_len": args.length, "max_len": args.length}
        example = task.sample(n, rng, **kwargs)
        symbols, traces = model.predict(example.inputs, want_trace=True)
    print(f"# task={task.name} n={n} inputs={len(example.inputs)} "
          f"outputs={len(symbols)}")
    for t, trace in enumerate(traces, 1):
        print(format_trace_line(t, trace, n))
    if args.dump_nodes:
        # re-run greedily to capture the memory contents after the last step
        from . import autodiff as ad
        with ad.no_grad():
            if task.mode == "raw":
                episode = model.run_raw_episode(example.inputs, mode="greedy")
            else:
                episode = model.run_episode(example.inputs,
                                            max_outputs=len(symbols) + 1,
                                            mode="greedy")
        for e in range(1, 2 * n):
            vals = ",".join(f"{v:.4f}" for v in episode.memory.nodes[e].data)
            print(f"node\t{e}\t{vals}")
    return 0


def cmd_gen(args) -> int:
    task = get_task(args.task, bits=args.b)
    write_dataset(args.out, task, args.count, args.n, args.seed)
    log.info("%d %s examples written to %s", args.count, task.name, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ham", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True,
                               parser_class=_Parser)

    train = sub.add_parser("train", help="train a model")
    train.add_argument("--task", choices=TASK_NAMES)
    train.add_argument("--config", help="key=value config file")
    train.add_argument("--n", type=int, help="target memory size (power of two)")
    train.add_argument("--b", type=int, help="symbol width (reverse only)")
    train.add_argument("--eta", type=int)
    train.add_argument("--attention", choices=("hard", "soft"))
    train.add_argument("--mode", choices=("controller", "raw"))
    train.add_argument("--d", type=int)
    train.add_argument("--l", type=int)
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", dest="batch_size", type=int)
    train.add_argument("--batches-per-epoch", dest="batches_per_epoch", type=int)
    train.add_argument("--seed", type=int)
    train.add_argument("--threads", type=int)
    train.add_argument("--out")
    train.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key")
    train.set_defaults(func=cmd_train)

    ev_p = sub.add_parser("eval", help="evaluate a checkpoint")
    ev_p.add_argument("--checkpoint", required=True)
    ev_p.add_argument("--protocol", choices=("test", "generalize"), default="test")
    ev_p.add_argument("--task", help="must match the checkpoint's task")
    ev_p.add_argument("--trials", type=int, default=2500)
    ev_p.add_argument("--n", type=int, help="evaluate at this capacity")
    ev_p.add_argument("--seed", type=int, default=0)
    ev_p.add_argument("--out", help="write the report as CSV")
    ev_p.set_defaults(func=cmd_eval)

    trace = sub.add_parser("trace", help="dump attention traces")
    trace.add_argument("--checkpoint", required=True)
    trace.add_argument("--task", help="must match the checkpoint's task")
    trace.add_argument("--seed", type=int, default=0)
    trace.add_argument("--length", type=int, help="input length to sample")
    trace.add_argument("--dump-nodes", action="store_true")
    trace.set_defaults(func=cmd_trace)

    gen = sub.add_parser("gen", help="write a dataset file")
    gen.add_argument("--task", required=True, choices=TASK_NAMES)
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--n", type=int, default=32)
    gen.add_argument("--b", type=int, help="symbol width (reverse only)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except NumericsError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except HamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
