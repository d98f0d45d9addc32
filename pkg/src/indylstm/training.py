"""Initialization, Adam, the CTC training loop, and evaluation."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import Checkpoint, OptState
from .ctc import corpus_cer, ctc_loss_batch, greedy_decode, min_frames
from .data import Dataset
from .network import Architecture, Model, backward_batch, forward_batch, pad_batch
from .numerics import ParameterError, Rng, ShapeError, derive_seed

log = logging.getLogger(__name__)

LOSS_EMA_DECAY = 0.98


class DatasetError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = 30_000
    patience_steps: int = 10_000
    eval_every_steps: int = 500
    seed: int = 1
    eval_test: bool = False  # also record test CER at each evaluation

    def __post_init__(self):
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if self.eval_every_steps < 1 or self.patience_steps < self.eval_every_steps:
            raise ParameterError("need eval_every_steps >= 1 and patience_steps >= eval_every_steps")
        if self.max_steps < 0:
            raise ParameterError("max_steps must be non-negative")


@dataclass
class TraceRecord:
    step: int
    train_loss: float
    val_cer: float
    test_cer: float | None = None


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def append(self, rec: TraceRecord):
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("trace steps must be strictly increasing")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        return isinstance(other, TrainTrace) and self.records == other.records

    def to_rows(self) -> list:
        return [[r.step, r.train_loss, r.val_cer, r.test_cer] for r in self.records]

    @classmethod
    def from_rows(cls, rows) -> "TrainTrace":
        return cls([TraceRecord(int(s), float(l), float(v), None if t is None else float(t)) for s, l, v, t in rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "train_loss", "val_cer", "test_cer"])
            for r in self.records:
                w.writerow([r.step, repr(r.train_loss), repr(r.val_cer), "" if r.test_cer is None else repr(r.test_cer)])

    @classmethod
    def read_csv(cls, path) -> "TrainTrace":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        return cls(
            [
                TraceRecord(int(r["step"]), float(r["train_loss"]), float(r["val_cer"]), float(r["test_cer"]) if r["test_cer"] else None)
                for r in rows
            ]
        )


@dataclass
class TrainResult:
    best: Checkpoint
    trace: TrainTrace
    last: Checkpoint  # full training state, for resuming
    skipped: int = 0


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_model(arch: Architecture, seed: int) -> Model:
    """Glorot-uniform matrices, zero biases, diagonal coefficients in [-1, 1]."""
    rng = Rng(seed)
    model = Model.zeros(arch)
    for fwd, bwd in model.layers:
        for p in (fwd, bwd):
            bound = glorot_bound(p.n, p.m)
            p.W[...] = rng.uniform(-bound, bound, p.W.shape)
            if p.kind.diagonal:
                p.U[...] = rng.uniform(-1.0, 1.0, p.U.shape)
            else:
                bound = glorot_bound(p.m, p.m)
                p.U[...] = rng.uniform(-bound, bound, p.U.shape)
    K1, twom = model.proj_W.shape
    bound = glorot_bound(twom, K1)
    model.proj_W[...] = rng.uniform(-bound, bound, model.proj_W.shape)
    return model


def adam_step(state: OptState, model: Model, grads: Model, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, applied in place. Returns ``(model, state)``."""
    params = model.tensors()
    gtensors = grads.tensors()
    if list(params) != list(gtensors) or list(params) != list(state.m):
        raise ShapeError("gradient / optimizer tensors do not match the model")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = gtensors[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return model, state


def decode_dataset(model: Model, dataset: Dataset, chunk: int = 256) -> list:
    """Greedy transcriptions for every sample, in dataset order."""
    alphabet = dataset.alphabet
    order = sorted(range(len(dataset)), key=lambda i: len(dataset.samples[i].features))
    out = [None] * len(dataset)
    for start in range(0, len(order), chunk):
        ids = order[start : start + chunk]
        X, lengths = pad_batch([dataset.samples[i].features for i in ids])
        logprobs, _ = forward_batch(model, X, lengths, training=False)
        for b, i in enumerate(ids):
            out[i] = alphabet.decode(greedy_decode(logprobs[:, b, :], int(lengths[b])))
    return out


def evaluate(model: Model, dataset: Dataset) -> float:
    """Corpus CER of greedy decoding at inference mode."""
    if len(dataset) == 0:
        raise ParameterError("cannot evaluate on an empty dataset")
    hyps = decode_dataset(model, dataset)
    return corpus_cer([(s.label, h) for s, h in zip(dataset.samples, hyps)])


def _prepare(dataset: Dataset, arch: Architecture):
    if dataset.dim != arch.input_dim:
        raise DatasetError(f"dataset dim {dataset.dim} != model input_dim {arch.input_dim}")
    if len(dataset.alphabet) > arch.num_classes:
        raise DatasetError(f"alphabet of {len(dataset.alphabet)} symbols exceeds model's {arch.num_classes} classes")
    feats, labels, skipped = [], [], 0
    for s in dataset.samples:
        lab = dataset.alphabet.encode(s.label)
        if min_frames(lab) > len(s.features):
            skipped += 1
            continue
        feats.append(s.features)
        labels.append(lab)
    if skipped:
        log.warning("skipped %d of %d training samples too short for their labels", skipped, len(dataset))
    if not feats:
        raise DatasetError("no feasible training samples")
    return feats, labels, skipped


def train_step(model: Model, opt: OptState, rng: Rng, feats, labels, config: TrainConfig) -> float:
    idx = rng.integers(0, len(feats), config.batch_size)
    X, lengths = pad_batch([feats[i] for i in idx])
    logprobs, cache = forward_batch(model, X, lengths, training=True, rng=rng)
    losses, grad = ctc_loss_batch(logprobs, [labels[i] for i in idx], lengths)
    grad /= config.batch_size
    grads = backward_batch(model, cache, grad)
    adam_step(opt, model, grads, config.learning_rate, config.beta1, config.beta2, config.eps)
    return float(losses.mean())


def train(
    model: Model,
    train_set: Dataset,
    val_set: Dataset,
    config: TrainConfig,
    test_set: Dataset | None = None,
    resume: Checkpoint | None = None,
    early_stopping: bool = True,
) -> TrainResult:
    """Mini-batch CTC training with validation-based early stopping.

    Stops at ``config.max_steps`` or once ``patience_steps`` have passed
    since the best validation CER. Passing the ``last`` checkpoint of an
    earlier result as ``resume`` continues that run exactly.
    """
    if len(val_set) == 0:
        raise DatasetError("validation set is empty")
    feats, labels, skipped = _prepare(train_set, model.arch)

    if resume is not None:
        model = resume.model()
        opt = resume.opt
        rng = Rng.from_state(resume.rng_state)
        step = resume.step
        meta = resume.meta
        best_step = int(meta["best_step"])
        best_cer = math.inf if resume.best_val_cer is None else resume.best_val_cer
        loss_avg = meta["loss_avg"]
        trace = TrainTrace.from_rows(meta["trace"])
        best_params = {k: a.copy() for k, a in (resume.best_params or resume.params).items()}
    else:
        model = model.copy()
        opt = OptState.zeros_like(model)
        rng = Rng(derive_seed(config.seed, 1))
        step, best_step, best_cer, loss_avg = 0, 0, math.inf, None
        trace = TrainTrace()
        best_params = {k: a.copy() for k, a in model.tensors().items()}

    def snapshot(params, **kw):
        return Checkpoint(model.arch, params, **kw)

    while step < config.max_steps and not (early_stopping and step - best_step >= config.patience_steps):
        loss = train_step(model, opt, rng, feats, labels, config)
        step += 1
        loss_avg = loss if loss_avg is None else LOSS_EMA_DECAY * loss_avg + (1 - LOSS_EMA_DECAY) * loss
        if step % config.eval_every_steps == 0:
            val_cer = evaluate(model, val_set)
            test_cer = evaluate(model, test_set) if (config.eval_test and test_set is not None) else None
            trace.append(TraceRecord(step, loss_avg, val_cer, test_cer))
            log.info("step %d loss %.4f val_cer %.4f", step, loss_avg, val_cer)
            if val_cer < best_cer:
                best_cer, best_step = val_cer, step
                best_params = {k: a.copy() for k, a in model.tensors().items()}

    best_val = None if math.isinf(best_cer) else best_cer
    common = {"best_step": best_step, "config": asdict(config)}
    best = snapshot(best_params, step=best_step, best_val_cer=best_val, meta=dict(common))
    last = snapshot(
        {k: a.copy() for k, a in model.tensors().items()},
        opt=OptState({k: a.copy() for k, a in opt.m.items()}, {k: a.copy() for k, a in opt.v.items()}, opt.t),
        rng_state=rng.get_state(),
        step=step,
        best_val_cer=best_val,
        meta=dict(common, loss_avg=loss_avg, trace=trace.to_rows()),
        best_params=best_params,
    )
    return TrainResult(best, trace, last, skipped)
