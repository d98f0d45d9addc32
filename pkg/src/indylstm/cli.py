"""Command-line entry point: ``indylstm <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import bench
from .cells import CellKind
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, SynthConfig, generate, load_dataset, save_dataset
from .network import Architecture, model_param_count
from .training import TrainConfig, evaluate, init_model, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
SPLITS = ("train", "val", "test")
CELL_CHOICES = [k.value for k in CellKind]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _add(p, *flags, **kw):
    kw.setdefault("help", " ")
    p.add_argument(*flags, **kw)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="indylstm", description="IndyLSTM / LSTM sequence recognition toolkit", formatter_class=fmt)
    _add(parser, "--config", help="JSON file of flag values; explicit flags take precedence")
    _add(parser, "-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset", formatter_class=fmt)
    _add(p, "--out", help="output directory (train/val/test .jsonl + .meta.json)")
    _add(p, "--alphabet-size", type=int, default=8, help="number of symbols K")
    _add(p, "--dim", type=int, default=10, help="feature dimension d")
    _add(p, "--train-n", type=int, default=2000, help="training samples")
    _add(p, "--val-n", type=int, default=200, help="validation samples")
    _add(p, "--test-n", type=int, default=200, help="test samples")
    _add(p, "--noise", type=float, default=0.05, help="Gaussian noise stddev")
    _add(p, "--label-min", type=int, default=1, help="shortest label")
    _add(p, "--label-max", type=int, default=5, help="longest label")
    _add(p, "--seed", type=int, help="random seed (required)")

    p = sub.add_parser("train", help="train a model with CTC", formatter_class=fmt)
    _add(p, "--data", help="dataset directory from gen-data")
    _add(p, "--cell", choices=CELL_CHOICES, default="indylstm", help="cell kind")
    _add(p, "--depth", type=int, default=3, help="bidirectional layers")
    _add(p, "--width", type=int, default=32, help="cells per direction")
    _add(p, "--dropout", type=float, default=0.0, help="dropout on layer outputs")
    _add(p, "--batch", type=int, default=8, help="batch size")
    _add(p, "--lr", type=float, default=1e-4, help="Adam learning rate")
    _add(p, "--max-steps", type=int, default=30000, help="step budget")
    _add(p, "--patience", type=int, default=10000, help="stop after this many steps without improvement")
    _add(p, "--eval-every", type=int, default=500, help="validation interval in steps")
    _add(p, "--seed", type=int, help="random seed (required)")
    _add(p, "--ckpt-out", default="best.ckpt", help="best-model checkpoint path")
    _add(p, "--trace-out", default="trace.csv", help="training trace CSV path")
    _add(p, "--state-out", default=None, help="optional full training-state checkpoint for resuming")
    _add(p, "--resume", default=None, help="training-state checkpoint to continue from")

    p = sub.add_parser("eval", help="corpus CER of a checkpoint", formatter_class=fmt)
    _add(p, "--ckpt", help="checkpoint path")
    _add(p, "--data", help="dataset .jsonl file, or a directory (uses test.jsonl)")

    p = sub.add_parser("bench", help="time inference per timestep", formatter_class=fmt)
    _add(p, "--ckpt", default=None, help="checkpoint to time (conflicts with --cell)")
    _add(p, "--cell", choices=CELL_CHOICES, default=None, help="cell kind of a freshly initialized model")
    _add(p, "--depth", type=int, default=3, help="layers (with --cell)")
    _add(p, "--width", type=int, default=96, help="width (with --cell)")
    _add(p, "--input-dim", type=int, default=10, help="input dim (with --cell)")
    _add(p, "--classes", type=int, default=79, help="characters K, blank excluded (with --cell)")
    _add(p, "--seq-len", type=int, default=100, help="timesteps per run")
    _add(p, "--reps", type=int, default=5, help="timed repetitions (>= 5)")
    _add(p, "--seed", type=int, default=None, help="init/input seed (required with --cell)")

    p = sub.add_parser("sweep", help="train a hyperparameter grid", formatter_class=fmt)
    _add(p, "--data", help="dataset directory from gen-data")
    _add(p, "--grid-json", help="JSON grid definition")
    _add(p, "--out", help="sweep CSV path")
    _add(p, "--seed", type=int, help="grid seed (required)")
    _add(p, "--workers", type=int, default=None, help="parallel runs (default: CPU count)")
    _add(p, "--pareto-out", default=None, help="optional CSV of the Pareto-optimal rows")

    p = sub.add_parser("params", help="print a model's parameter count", formatter_class=fmt)
    _add(p, "--cell", choices=CELL_CHOICES, help="cell kind")
    _add(p, "--depth", type=int, help="bidirectional layers")
    _add(p, "--width", type=int, help="cells per direction")
    _add(p, "--input-dim", type=int, default=10, help="input feature dimension")
    _add(p, "--classes", type=int, default=79, help="characters K, blank excluded")

    p = sub.add_parser("overfit-trace", help="train the LSTM/IndyLSTM trio without early stopping", formatter_class=fmt)
    _add(p, "--data", help="dataset directory from gen-data")
    _add(p, "--out", help="output directory for per-model trace CSVs")
    _add(p, "--max-steps", type=int, default=5000, help="steps per model")
    _add(p, "--eval-every", type=int, default=250, help="evaluation interval")
    _add(p, "--seed", type=int, help="random seed (required)")
    _add(p, "--train-n", type=int, default=200, help="use only the first N training samples")
    _add(p, "--dropout", type=float, default=0.0, help="dropout on layer outputs")
    _add(p, "--lr", type=float, default=1e-4, help="Adam learning rate")
    return parser


REQUIRED = {
    "gen-data": ["out", "seed"],
    "train": ["data", "seed"],
    "eval": ["ckpt", "data"],
    "bench": [],
    "sweep": ["data", "grid_json", "out", "seed"],
    "params": ["cell", "depth", "width"],
    "overfit-trace": ["data", "out", "seed"],
}


def _flag(dest: str) -> str:
    return "--" + dest.replace("_", "-")


def _subparser(parser, command):
    return parser._subparsers._group_actions[0].choices[command]


def parse(argv, parser=None) -> argparse.Namespace:
    parser = parser or build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage() + "indylstm: error: a command is required\n")
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read --config {args.config}: {e}\n") from None
        subparser = _subparser(parser, args.command)
        known = {a.dest for a in subparser._actions}
        defaults = {}
        for key, value in config.items():
            dest = key.lstrip("-").replace("-", "_")
            if dest not in known:
                raise UsageError(f"unknown key {key!r} in --config for {args.command}\n")
            defaults[dest] = value
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    usage = _subparser(parser, args.command).format_usage()

    def fail(msg):
        raise UsageError(f"indylstm {args.command}: error: {msg}\n{usage}")

    missing = [_flag(d) for d in REQUIRED[args.command] if getattr(args, d) is None]
    if missing:
        fail(f"missing required flag{'s' if len(missing) > 1 else ''} {', '.join(missing)}")
    if args.command == "bench":
        if args.ckpt and args.cell:
            fail("--ckpt and --cell are mutually exclusive")
        if not args.ckpt and not args.cell:
            fail("one of --ckpt or --cell is required")
        if args.cell and args.seed is None:
            fail("missing required flag --seed (random model init)")
    return args


def _load_splits(data_dir) -> dict:
    data_dir = Path(data_dir)
    return {s: load_dataset(data_dir / f"{s}.jsonl") for s in SPLITS}


def _load_eval_set(path) -> Dataset:
    path = Path(path)
    return load_dataset(path / "test.jsonl" if path.is_dir() else path)


def cmd_gen_data(args):
    config = SynthConfig(
        alphabet_size=args.alphabet_size,
        dim=args.dim,
        label_len=(args.label_min, args.label_max),
        noise=args.noise,
        train_n=args.train_n,
        val_n=args.val_n,
        test_n=args.test_n,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in zip(SPLITS, generate(config)):
        save_dataset(ds, out / f"{name}.jsonl")
    print(f"wrote {out}/{{{','.join(SPLITS)}}}.jsonl")


def cmd_train(args):
    splits = _load_splits(args.data)
    tr = splits["train"]
    arch = Architecture(args.cell, args.depth, args.width, tr.dim, len(tr.alphabet), args.dropout)
    config = TrainConfig(
        batch_size=args.batch,
        learning_rate=args.lr,
        max_steps=args.max_steps,
        patience_steps=args.patience,
        eval_every_steps=args.eval_every,
        seed=args.seed,
    )
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None and resume.arch != arch:
        raise ValueError(f"--resume checkpoint is a {resume.arch.label()} model, flags describe {arch.label()}")
    result = train(init_model(arch, args.seed), tr, splits["val"], config, test_set=splits["test"], resume=resume)
    save_checkpoint(result.best, args.ckpt_out)
    result.trace.write_csv(args.trace_out)
    if args.state_out:
        save_checkpoint(result.last, args.state_out)
    test_cer = evaluate(result.best.model(), splits["test"])
    print(json.dumps({"best_step": result.best.step, "best_val_cer": result.best.best_val_cer, "test_cer": test_cer, "steps": result.last.step}))


def cmd_eval(args):
    ckpt = load_checkpoint(args.ckpt)
    print(repr(evaluate(ckpt.model(), _load_eval_set(args.data))))


def cmd_bench(args):
    if args.ckpt:
        model = load_checkpoint(args.ckpt).model()
        seed = args.seed or 0
    else:
        arch = Architecture(args.cell, args.depth, args.width, args.input_dim, args.classes)
        model = init_model(arch, args.seed)
        seed = args.seed
    timing = bench.time_inference(model, args.seq_len, args.reps, seed=seed)
    report = {
        "arch": model.arch.to_dict(),
        "param_count": model_param_count(model.arch),
        "madds_per_step": bench.madds_per_step(model.arch),
        "seq_len": args.seq_len,
        **{k: v for k, v in asdict(timing).items() if k != "runs_us"},
    }
    print(json.dumps(report))


def cmd_sweep(args):
    splits = _load_splits(args.data)
    grid_spec = json.loads(Path(args.grid_json).read_text())
    grid_spec["seed"] = args.seed
    grid = bench.SweepGrid.from_dict(grid_spec)
    rows = bench.run_sweep(grid, splits["train"], splits["val"], splits["test"], args.out, workers=args.workers)
    if args.pareto_out:
        bench.write_sweep_csv(bench.pareto_front(rows), args.pareto_out)
    failed = sum(r.error is not None for r in rows)
    print(f"{len(rows)} runs written to {args.out} ({failed} failed)")


def cmd_params(args):
    arch = Architecture(args.cell, args.depth, args.width, args.input_dim, args.classes)
    print(model_param_count(arch))


def cmd_overfit_trace(args):
    splits = _load_splits(args.data)
    tr = splits["train"]
    small = Dataset(tr.alphabet, tr.dim, tr.samples[: args.train_n])
    config = TrainConfig(
        learning_rate=args.lr,
        max_steps=args.max_steps,
        eval_every_steps=args.eval_every,
        patience_steps=max(args.max_steps, args.eval_every),
        seed=args.seed,
    )
    archs = bench.default_overfit_archs(tr.dim, len(tr.alphabet), args.dropout)
    traces = bench.overfit_trace(archs, small, splits["val"], splits["test"], config, args.out)
    for name, trace in traces.items():
        print(f"{name}: test CER minimum at step {bench.cer_minimum_step(trace)}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
    "params": cmd_params,
    "overfit-trace": cmd_overfit_trace,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse(argv)
    except UsageError as e:
        sys.stderr.write(str(e))
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except Exception as e:
        sys.stderr.write(f"indylstm {args.command}: {type(e).__name__}: {e}\n")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
