"""Deep bidirectional recurrent stacks with a softmax output layer.

Sequence tensors are time-major: ``(T, B, features)``. Variable-length
batches are right-padded; ``lengths[b]`` gives the valid prefix of sample
``b``. The backward direction reverses each sample's valid prefix in place,
so padding is always processed after the real data and never leaks into it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cells
from .cells import CellKind, CellParams, CellState
from .numerics import ParameterError, Rng, ShapeError, log_softmax


@dataclass(frozen=True)
class Architecture:
    kind: CellKind
    depth: int
    width: int
    input_dim: int
    num_classes: int  # real characters; the CTC blank is appended as index num_classes
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", CellKind.parse(self.kind))
        if self.depth < 1 or self.width < 1 or self.input_dim < 1 or self.num_classes < 1:
            raise ParameterError(f"invalid architecture {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def num_outputs(self) -> int:
        return self.num_classes + 1

    @property
    def blank(self) -> int:
        return self.num_classes

    def layer_input_dim(self, layer: int) -> int:
        return self.input_dim if layer == 0 else 2 * self.width

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "depth": self.depth,
            "width": self.width,
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            CellKind.parse(d["kind"]),
            int(d["depth"]),
            int(d["width"]),
            int(d["input_dim"]),
            int(d["num_classes"]),
            float(d.get("dropout", 0.0)),
        )

    def label(self) -> str:
        return f"{self.depth}x{self.width} {self.kind.value}"


@dataclass
class Model:
    arch: Architecture
    layers: list  # [(fwd CellParams, bwd CellParams), ...]
    proj_W: np.ndarray  # (K+1, 2m)
    proj_b: np.ndarray  # (K+1,)

    @classmethod
    def zeros(cls, arch: Architecture) -> "Model":
        layers = [
            (
                CellParams.zeros(arch.kind, arch.layer_input_dim(l), arch.width),
                CellParams.zeros(arch.kind, arch.layer_input_dim(l), arch.width),
            )
            for l in range(arch.depth)
        ]
        return cls(arch, layers, np.zeros((arch.num_outputs, 2 * arch.width)), np.zeros(arch.num_outputs))

    def tensors(self) -> dict:
        """Ordered name -> array mapping (views into the model)."""
        out = {}
        for l, (fwd, bwd) in enumerate(self.layers):
            for direction, p in (("fwd", fwd), ("bwd", bwd)):
                for name, arr in p.tensors().items():
                    out[f"layer{l}.{direction}.{name}"] = arr
        out["proj.W"] = self.proj_W
        out["proj.b"] = self.proj_b
        return out

    def num_parameters(self) -> int:
        return sum(a.size for a in self.tensors().values())

    def copy(self) -> "Model":
        return Model(
            self.arch,
            [(f.copy(), b.copy()) for f, b in self.layers],
            self.proj_W.copy(),
            self.proj_b.copy(),
        )

    def load_tensors(self, tensors: dict) -> None:
        own = self.tensors()
        if list(own) != list(tensors):
            raise ShapeError(f"tensor names differ: {list(tensors)[:4]}... vs {list(own)[:4]}...")
        for name, arr in own.items():
            src = np.asarray(tensors[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ShapeError(f"tensor {name}: shape {src.shape} != {arr.shape}")
            arr[...] = src

    def as_full(self) -> "Model":
        """Same function with diagonal recurrences embedded as full matrices."""
        arch = Architecture(
            self.arch.kind.full_counterpart,
            self.arch.depth,
            self.arch.width,
            self.arch.input_dim,
            self.arch.num_classes,
            self.arch.dropout,
        )
        return Model(arch, [(f.as_full(), b.as_full()) for f, b in self.layers], self.proj_W.copy(), self.proj_b.copy())


def model_param_count(arch: Architecture) -> int:
    m, K1 = arch.width, arch.num_outputs
    first = 2 * cells.param_count(arch.kind, arch.input_dim, m)
    rest = (arch.depth - 1) * 2 * cells.param_count(arch.kind, 2 * m, m)
    return first + rest + 2 * m * K1 + K1


def dropout_mask(rng: Rng, p: float, shape) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``p``, else ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    keep = rng.uniform(0.0, 1.0, shape) >= p
    return keep / (1.0 - p)


def reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """Per-sample time reversal of the valid prefix, identity on padding.

    Returns ``idx`` of shape (T, B) so that ``X[idx, arange(B)]`` reverses
    each sample; the map is an involution.
    """
    t = np.arange(T)[:, None]
    L = np.asarray(lengths)[None, :]
    return np.where(t < L, L - 1 - t, t)


def _time_gather(X: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return X[idx, np.arange(X.shape[1])[None, :]]


@dataclass
class DirectionCache:
    params: CellParams
    caches: list  # StepCache per processed timestep
    inputs: np.ndarray  # (T, B, n) in processing order


def run_direction(params: CellParams, X: np.ndarray):
    """Unroll one direction over ``X`` (T, B, n) from a zero state."""
    T, B, _ = X.shape
    if X.shape[-1] != params.n:
        raise ShapeError(f"layer input width {X.shape[-1]} != n={params.n}")
    xwb = cells.input_projection(params, X)
    state = CellState.zeros(params.kind, params.m, (B,))
    H = np.empty((T, B, params.m))
    caches = []
    for t in range(T):
        state, cache = cells.step_projected(params, xwb[t], X[t], state)
        H[t] = state.h
        caches.append(cache)
    return H, DirectionCache(params, caches, X)


def backprop_direction(dc: DirectionCache, grad_H: np.ndarray):
    """BPTT through one direction. Returns ``(grad CellParams, grad_X)``."""
    params = dc.params
    T, B, _ = grad_H.shape
    G, m = params.b.shape
    dZ = np.empty((T, B, G, m))
    gh = np.zeros((B, m))
    gc = np.zeros((B, m if params.kind.has_cell_state else 0))
    caches = dc.caches
    for t in range(T - 1, -1, -1):
        dZ[t], gh, gc = cells.step_backward_core(params, caches[t], grad_H[t] + gh, gc)
    h_prev = np.stack([c.h_prev for c in caches])
    return cells.param_grads(params, dZ, dc.inputs, h_prev), cells.input_grad(params, dZ)


@dataclass
class LayerCache:
    fwd: DirectionCache
    bwd: DirectionCache
    rev: np.ndarray


def bidir_layer_forward_batch(fwd: CellParams, bwd: CellParams, X: np.ndarray, lengths: np.ndarray):
    T = X.shape[0]
    rev = reverse_index(lengths, T)
    Hf, cf = run_direction(fwd, X)
    Hb_rev, cb = run_direction(bwd, _time_gather(X, rev))
    out = np.concatenate([Hf, _time_gather(Hb_rev, rev)], axis=-1)
    return out, LayerCache(cf, cb, rev)


def bidir_layer_backward_batch(cache: LayerCache, grad_out: np.ndarray):
    m = cache.fwd.params.m
    gf, gxf = backprop_direction(cache.fwd, grad_out[..., :m])
    gb, gxb_rev = backprop_direction(cache.bwd, _time_gather(grad_out[..., m:], cache.rev))
    return gf, gb, gxf + _time_gather(gxb_rev, cache.rev)


def bidir_layer_forward(fwd: CellParams, bwd: CellParams, inputs):
    """Single sequence (T, n) -> (T, 2m) plus the layer cache."""
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ShapeError(f"bidirectional layer needs a non-empty (T, n) sequence, got shape {X.shape}")
    out, cache = bidir_layer_forward_batch(fwd, bwd, X[:, None, :], np.array([X.shape[0]]))
    return out[:, 0, :], cache


@dataclass
class SequenceCache:
    layers: list
    masks: list  # dropout mask per layer, or None
    top: np.ndarray  # (T, B, 2m) projection input
    logprobs: np.ndarray
    lengths: np.ndarray
    arch: Architecture = field(default=None)


def forward_batch(model: Model, X: np.ndarray, lengths=None, training: bool = False, rng: Rng | None = None):
    """Log-probabilities (T, B, K+1) for a padded time-major batch."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[-1] != model.arch.input_dim:
        raise ShapeError(f"model expects (T, B, {model.arch.input_dim}) input, got {X.shape}")
    T, B, _ = X.shape
    if T < 1:
        raise ShapeError("empty input sequence")
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    p = model.arch.dropout
    use_dropout = training and p > 0.0
    if use_dropout and rng is None:
        raise ParameterError("training with dropout needs an rng")
    h = X
    layer_caches, masks = [], []
    for fwd, bwd in model.layers:
        h, lc = bidir_layer_forward_batch(fwd, bwd, h, lengths)
        layer_caches.append(lc)
        if use_dropout:
            mask = dropout_mask(rng, p, h.shape)
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)
    logits = h @ model.proj_W.T + model.proj_b
    logprobs = log_softmax(logits)
    return logprobs, SequenceCache(layer_caches, masks, h, logprobs, lengths, model.arch)


def backward_batch(model: Model, cache: SequenceCache, grad_logprobs: np.ndarray) -> Model:
    """Gradients of every parameter, returned as a model-shaped container."""
    if cache.arch != model.arch or len(cache.layers) != len(model.layers):
        raise ShapeError("sequence cache does not belong to this model")
    g = np.asarray(grad_logprobs, dtype=np.float64)
    if g.shape != cache.logprobs.shape:
        raise ShapeError(f"grad_logprobs shape {g.shape} != logprobs shape {cache.logprobs.shape}")
    probs = np.exp(cache.logprobs)
    g_logits = g - probs * g.sum(axis=-1, keepdims=True)
    flat = g_logits.reshape(-1, g_logits.shape[-1])
    top = cache.top.reshape(-1, cache.top.shape[-1])
    grads = Model(model.arch, [None] * len(model.layers), flat.T @ top, flat.sum(axis=0))
    grad_h = g_logits @ model.proj_W
    for l in range(len(model.layers) - 1, -1, -1):
        if cache.masks[l] is not None:
            grad_h = grad_h * cache.masks[l]
        gf, gb, grad_h = bidir_layer_backward_batch(cache.layers[l], grad_h)
        grads.layers[l] = (gf, gb)
    return grads


def model_forward(model: Model, inputs, training: bool = False, rng: Rng | None = None):
    """Single sequence (T, d) -> (logprobs (T, K+1), cache)."""
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected a (T, d) sequence, got shape {X.shape}")
    logprobs, cache = forward_batch(model, X[:, None, :], None, training, rng)
    return logprobs[:, 0, :], cache


def model_backward(model: Model, cache: SequenceCache, grad_logprobs) -> Model:
    g = np.asarray(grad_logprobs, dtype=np.float64)
    if g.ndim == 2:
        g = g[:, None, :]
    return backward_batch(model, cache, g)


def pad_batch(seqs: list) -> tuple:
    """Stack (T_i, d) arrays into a zero-padded (T_max, B, d) batch."""
    lengths = np.array([len(s) for s in seqs])
    d = seqs[0].shape[1]
    X = np.zeros((lengths.max(), len(seqs), d))
    for b, s in enumerate(seqs):
        X[: len(s), b] = s
    return X, lengths
