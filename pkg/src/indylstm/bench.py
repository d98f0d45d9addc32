"""Cost model, inference timing, grid sweeps, Pareto fronts, overfitting traces.

Cost is counted as one multiply-add per parameter, biases included, with
activation functions free. Under that rule a model's per-timestep madds
equal its parameter count.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import cells
from .cells import CellKind
from .data import Dataset
from .network import Architecture, Model, forward_batch, model_param_count
from .numerics import ParameterError, Rng, derive_seed
from .training import TrainConfig, evaluate, init_model, train

log = logging.getLogger(__name__)

SWEEP_HEADER = [
    "kind",
    "depth",
    "width",
    "dropout",
    "seed",
    "param_count",
    "madds_per_step",
    "best_val_cer",
    "test_cer",
    "steps_to_best",
    "wall_us_per_step",
]
ERROR_MARK = "ERROR"


# ---------------------------------------------------------------- cost model


def layer_madds(kind, n: int, m: int) -> int:
    """Multiply-adds for one unidirectional layer step."""
    return cells.param_count(kind, n, m)


@dataclass
class CostModel:
    arch: Architecture
    per_layer: list  # madds per bidirectional layer (both directions)
    projection: int

    @property
    def total(self) -> int:
        return sum(self.per_layer) + self.projection

    @classmethod
    def of(cls, arch: Architecture) -> "CostModel":
        per_layer = [2 * layer_madds(arch.kind, arch.layer_input_dim(l), arch.width) for l in range(arch.depth)]
        K1 = arch.num_outputs
        return cls(arch, per_layer, 2 * arch.width * K1 + K1)


def madds_per_step(arch: Architecture) -> int:
    return CostModel.of(arch).total


# ---------------------------------------------------------------- timing


@dataclass
class Timing:
    median_us_per_step: float
    p90_us_per_step: float
    total_us: float
    runs_us: list


def time_inference(model: Model, seq_len: int, repetitions: int = 5, seed: int = 0) -> Timing:
    """Wall-clock inference cost per timestep for a single sequence.

    One warm-up run is discarded before ``repetitions`` timed runs.
    """
    if repetitions < 5:
        raise ParameterError("need at least 5 repetitions")
    X = Rng(seed).uniform(-1.0, 1.0, (seq_len, 1, model.arch.input_dim))
    forward_batch(model, X)
    runs = []
    for _ in range(repetitions):
        t0 = time.perf_counter_ns()
        forward_batch(model, X)
        runs.append((time.perf_counter_ns() - t0) / 1e3)
    per_step = np.array(runs) / seq_len
    return Timing(float(np.median(per_step)), float(np.percentile(per_step, 90)), float(sum(runs)), runs)


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepGrid:
    kinds: list = field(default_factory=lambda: [CellKind.LSTM, CellKind.INDYLSTM])
    depths: list = field(default_factory=lambda: list(range(3, 10)))
    widths: list = field(default_factory=lambda: list(range(32, 257, 32)))
    dropouts: list = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(7)])
    seeds_per_point: int = 1
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    bench_seq_len: int = 64
    bench_reps: int = 5

    def __post_init__(self):
        self.kinds = [CellKind.parse(k) for k in self.kinds]
        if not (self.kinds and self.depths and self.widths and self.dropouts) or self.seeds_per_point < 1:
            raise ParameterError("sweep grid lists must be non-empty")
        if any(w < 1 for w in self.widths):
            raise ParameterError("widths must be positive")

    def points(self) -> list:
        """Grid points in deterministic order, each with its derived run seed."""
        combos = itertools.product(self.kinds, self.depths, self.widths, self.dropouts, range(self.seeds_per_point))
        return [
            (kind, depth, width, dropout, derive_seed(self.seed, index))
            for index, (kind, depth, width, dropout, _) in enumerate(combos)
        ]

    @classmethod
    def from_dict(cls, d: dict) -> "SweepGrid":
        d = dict(d)
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown sweep grid keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SweepRow:
    kind: str
    depth: int
    width: int
    dropout: float
    seed: int
    param_count: int
    madds_per_step: int
    best_val_cer: float | None
    test_cer: float | None
    steps_to_best: int | None
    wall_us_per_step: float | None
    error: str | None = None

    def csv_cells(self) -> list:
        if self.error is not None:
            tail = [ERROR_MARK] * 4
        else:
            tail = [repr(self.best_val_cer), repr(self.test_cer), self.steps_to_best, repr(self.wall_us_per_step)]
        return [self.kind, self.depth, self.width, repr(self.dropout), self.seed, self.param_count, self.madds_per_step] + tail


def _run_point(args):
    point, train_set, val_set, test_set, grid = args
    kind, depth, width, dropout, seed = point
    arch = Architecture(kind, depth, width, train_set.dim, len(train_set.alphabet), dropout)
    row = SweepRow(kind.value, depth, width, dropout, seed, model_param_count(arch), madds_per_step(arch), None, None, None, None)
    try:
        config = replace(grid.train, seed=seed)
        result = train(init_model(arch, seed), train_set, val_set, config)
        best = result.best.model()
        row.best_val_cer = result.best.best_val_cer
        row.test_cer = evaluate(best, test_set)
        row.steps_to_best = result.best.step
        row.wall_us_per_step = time_inference(best, grid.bench_seq_len, grid.bench_reps).median_us_per_step
    except Exception as e:  # one failed run must not sink the sweep
        log.warning("sweep point %s failed: %s", point, e)
        row.error = f"{type(e).__name__}: {e}"
    return row


def write_sweep_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow(r.csv_cells())


def read_sweep_csv(path) -> list:
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != SWEEP_HEADER:
            raise ValueError(f"unexpected sweep CSV header {header}")
        for cells_ in reader:
            kind, depth, width, dropout, seed, params, madds, val, test, steps, wall = cells_
            failed = val == ERROR_MARK
            rows.append(
                SweepRow(
                    kind,
                    int(depth),
                    int(width),
                    float(dropout),
                    int(seed),
                    int(params),
                    int(madds),
                    None if failed or val == "None" else float(val),
                    None if failed else float(test),
                    None if failed else int(steps),
                    None if failed else float(wall),
                    error="failed" if failed else None,
                )
            )
    return rows


def run_sweep(grid: SweepGrid, train_set: Dataset, val_set: Dataset, test_set: Dataset, out_path=None, workers=None) -> list:
    """Train every grid point; rows come back (and are written) in grid order."""
    points = grid.points()
    jobs = [(p, train_set, val_set, test_set, grid) for p in points]
    workers = workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_point, jobs))
    else:
        rows = [_run_point(j) for j in jobs]
    if out_path is not None:
        write_sweep_csv(rows, out_path)
    return rows


def pareto_front(rows: list, x: str = "param_count", y: str = "test_cer") -> list:
    """Rows not beaten by any row with no more parameters and strictly lower error.

    Exact (x, y) duplicates collapse to the first occurrence. Rows whose
    ``y`` is missing (failed runs) are ignored. Output is sorted by ``x``.
    """
    valid = [r for r in rows if getattr(r, y) is not None and not math.isnan(getattr(r, y))]
    order = sorted(range(len(valid)), key=lambda i: (getattr(valid[i], x), getattr(valid[i], y), i))
    front = []
    best_smaller_x = math.inf
    for _, group in itertools.groupby(order, key=lambda i: getattr(valid[i], x)):
        first = valid[next(group)]  # lowest error at this size, earliest on ties
        err = getattr(first, y)
        if err <= best_smaller_x:
            front.append(first)
        best_smaller_x = min(best_smaller_x, err)
    return front


# ---------------------------------------------------------------- overfitting traces


def default_overfit_archs(input_dim: int, num_classes: int, dropout: float = 0.0) -> list:
    """3x96 LSTM against 3x96 and 3x128 IndyLSTM."""
    return [
        Architecture(CellKind.LSTM, 3, 96, input_dim, num_classes, dropout),
        Architecture(CellKind.INDYLSTM, 3, 96, input_dim, num_classes, dropout),
        Architecture(CellKind.INDYLSTM, 3, 128, input_dim, num_classes, dropout),
    ]


def trace_filename(arch: Architecture, seed: int) -> str:
    return f"{arch.kind.value}_{arch.depth}x{arch.width}_seed{seed}.csv"


def overfit_trace(archs: list, train_set: Dataset, val_set: Dataset, test_set: Dataset, config: TrainConfig, out_dir) -> dict:
    """Train each architecture to ``max_steps`` with early stopping off.

    Writes one trace CSV per architecture into ``out_dir`` and returns
    ``{filename: TrainTrace}``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = replace(config, eval_test=True)
    traces = {}
    for arch in archs:
        result = train(init_model(arch, config.seed), train_set, val_set, config, test_set=test_set, early_stopping=False)
        name = trace_filename(arch, config.seed)
        result.trace.write_csv(out_dir / name)
        traces[name] = result.trace
        log.info("wrote %s", out_dir / name)
    return traces


def cer_minimum_step(trace) -> int:
    """Step of the first minimum of the recorded test CER."""
    best = min(trace.records, key=lambda r: (r.test_cer, r.step))
    return best.step
