"""Single-step forward/backward for RNN, IndRNN, LSTM and IndyLSTM cells.

All functions accept arbitrary leading batch dimensions on ``x`` and the
state vectors, so the same code serves one sequence or a padded mini-batch.

Gate tensors are stacked along a leading gate axis in the order
``f, i, o, c`` (forget, input, output, candidate). Plain RNN kinds have a
single gate.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .numerics import ShapeError

GATES = ("f", "i", "o", "c")


class CellKind(str, enum.Enum):
    RNN = "rnn"
    INDRNN = "indrnn"
    LSTM = "lstm"
    INDYLSTM = "indylstm"

    @property
    def num_gates(self) -> int:
        return 4 if self in (CellKind.LSTM, CellKind.INDYLSTM) else 1

    @property
    def diagonal(self) -> bool:
        return self in (CellKind.INDRNN, CellKind.INDYLSTM)

    @property
    def has_cell_state(self) -> bool:
        return self.num_gates == 4

    @property
    def full_counterpart(self) -> "CellKind":
        return {CellKind.INDRNN: CellKind.RNN, CellKind.INDYLSTM: CellKind.LSTM}.get(self, self)

    @classmethod
    def parse(cls, value) -> "CellKind":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


@dataclass
class CellParams:
    """Weights of one cell direction.

    ``W`` has shape (G, m, n), ``b`` (G, m). ``U`` is (G, m, m) for full
    recurrence and (G, m) (one coefficient vector per gate) for the
    diagonal kinds.
    """

    kind: CellKind
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.kind = CellKind.parse(self.kind)
        G = self.kind.num_gates
        if self.W.ndim != 3 or self.W.shape[0] != G:
            raise ShapeError(f"{self.kind.value}: W must be ({G}, m, n), got {self.W.shape}")
        m = self.W.shape[1]
        u_shape = (G, m) if self.kind.diagonal else (G, m, m)
        if self.U.shape != u_shape:
            raise ShapeError(f"{self.kind.value}: recurrent weights must be {u_shape}, got {self.U.shape}")
        if self.b.shape != (G, m):
            raise ShapeError(f"{self.kind.value}: b must be {(G, m)}, got {self.b.shape}")

    @property
    def n(self) -> int:
        return self.W.shape[2]

    @property
    def m(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, kind, n: int, m: int) -> "CellParams":
        kind = CellKind.parse(kind)
        G = kind.num_gates
        U = np.zeros((G, m) if kind.diagonal else (G, m, m))
        return cls(kind, np.zeros((G, m, n)), U, np.zeros((G, m)))

    def tensors(self) -> dict:
        """Named parameter arrays (views, not copies)."""
        return {"W": self.W, "u" if self.kind.diagonal else "U": self.U, "b": self.b}

    def num_elements(self) -> int:
        return sum(a.size for a in self.tensors().values())

    def gate(self, name: str) -> dict:
        """Per-gate slices, e.g. ``params.gate("f")["W"]`` is W_f."""
        g = GATES.index(name) if self.kind.num_gates == 4 else 0
        return {k: v[g] for k, v in self.tensors().items()}

    def copy(self) -> "CellParams":
        return CellParams(self.kind, self.W.copy(), self.U.copy(), self.b.copy())

    def as_full(self) -> "CellParams":
        """Embed diagonal coefficients into full recurrent matrices."""
        if not self.kind.diagonal:
            return self.copy()
        G, m = self.U.shape
        U = np.zeros((G, m, m))
        idx = np.arange(m)
        U[:, idx, idx] = self.U
        return CellParams(self.kind.full_counterpart, self.W.copy(), U, self.b.copy())


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray  # trailing size 0 for RNN kinds

    @classmethod
    def zeros(cls, kind, m: int, batch_shape=()) -> "CellState":
        kind = CellKind.parse(kind)
        mc = m if kind.has_cell_state else 0
        return cls(np.zeros(tuple(batch_shape) + (m,)), np.zeros(tuple(batch_shape) + (mc,)))


class StepCache(NamedTuple):
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    gates: np.ndarray  # post-activation gates, (..., G, m)
    c: np.ndarray
    h: np.ndarray
    # local derivative factors: dz = upstream * dfac (per gate), dh -> dc via dh_dc
    dfac: np.ndarray
    dh_dc: np.ndarray


# sigmoid(x) = (1 + tanh(x / 2)) / 2, so one tanh call serves all four gates
_LSTM_SCALE = np.array([0.5, 0.5, 0.5, 1.0])[:, None]
_LSTM_SHIFT = np.array([0.5, 0.5, 0.5, 0.0])[:, None]
_LSTM_DERIV = np.array([0.25, 0.25, 0.25, 1.0])[:, None]


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def input_projection(params: CellParams, x: np.ndarray) -> np.ndarray:
    """``W x + b`` for every gate, shape (..., G, m)."""
    G, m, n = params.W.shape
    xw = x @ params.W.reshape(G * m, n).T + params.b.reshape(-1)
    return xw.reshape(x.shape[:-1] + (G, m))


def _recurrent(params: CellParams, h_prev: np.ndarray) -> np.ndarray:
    if params.kind.diagonal:
        return h_prev[..., None, :] * params.U
    G, m = params.b.shape
    r = h_prev @ params.U.reshape(G * m, m).T
    return r.reshape(h_prev.shape[:-1] + (G, m))


def step_projected(params: CellParams, xwb: np.ndarray, x: np.ndarray, prev: CellState):
    """Advance one step given a precomputed input projection ``W x + b``."""
    z = xwb + _recurrent(params, prev.h)
    if params.kind.num_gates == 4:
        t = np.tanh(z * _LSTM_SCALE)
        gates = t * _LSTM_SCALE + _LSTM_SHIFT
        f, i, o, g = gates[..., 0, :], gates[..., 1, :], gates[..., 2, :], gates[..., 3, :]
        c = f * prev.c + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        local = np.concatenate([prev.c, g, tanh_c, i], axis=-1).reshape(z.shape)
        dfac = (1.0 - t * t) * _LSTM_DERIV * local
        dh_dc = o * (1.0 - tanh_c * tanh_c)
    else:
        gates = np.tanh(z)
        h = gates[..., 0, :]
        c = prev.c
        dfac = 1.0 - gates * gates
        dh_dc = prev.c
    cache = StepCache(x, prev.h, prev.c, gates, c, h, dfac, dh_dc)
    return CellState(h, c), cache


def _check_step_shapes(params: CellParams, x: np.ndarray, prev: CellState):
    if x.shape[-1] != params.n:
        raise ShapeError(f"{params.kind.value} step: input width {x.shape[-1]} != n={params.n}")
    mc = params.m if params.kind.has_cell_state else 0
    if prev.h.shape[-1] != params.m or prev.c.shape[-1] != mc:
        raise ShapeError(
            f"{params.kind.value} step: state shapes h={prev.h.shape} c={prev.c.shape} "
            f"inconsistent with m={params.m}"
        )


def step(params: CellParams, x, prev: CellState):
    """Run one timestep.

    Returns ``(state, cache)``; the cache feeds :func:`step_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_step_shapes(params, x, prev)
    return step_projected(params, input_projection(params, x), x, prev)


def step_backward_core(params: CellParams, cache: StepCache, grad_h, grad_c):
    """Backpropagate one step to the pre-activations and previous state.

    Returns ``(dz, grad_h_prev, grad_c_prev)`` with ``dz`` of shape
    (..., G, m). The input gradient is ``dz`` times the stacked ``W`` and is
    left to the caller so sequence code can batch it over time.
    """
    if params.kind.num_gates == 4:
        dc = grad_c + grad_h * cache.dh_dc
        dz = dc[..., None, :] * cache.dfac
        dz[..., 2, :] = grad_h * cache.dfac[..., 2, :]
        grad_c_prev = dc * cache.gates[..., 0, :]
    else:
        dz = grad_h[..., None, :] * cache.dfac
        grad_c_prev = grad_c
    if params.kind.diagonal:
        grad_h_prev = (dz * params.U).sum(axis=-2)
    else:
        G, m = params.b.shape
        grad_h_prev = dz.reshape(dz.shape[:-2] + (G * m,)) @ params.U.reshape(G * m, m)
    return dz, grad_h_prev, grad_c_prev


def input_grad(params: CellParams, dz: np.ndarray) -> np.ndarray:
    G, m, n = params.W.shape
    return dz.reshape(dz.shape[:-2] + (G * m,)) @ params.W.reshape(G * m, n)


def param_grads(params: CellParams, dz: np.ndarray, x: np.ndarray, h_prev: np.ndarray) -> CellParams:
    """Accumulate parameter gradients over all leading axes of ``dz``."""
    G, m, n = params.W.shape
    dz2 = dz.reshape(-1, G * m)
    x2 = _flat(x)
    h2 = _flat(h_prev)
    dW = (dz2.T @ x2).reshape(G, m, n)
    if params.kind.diagonal:
        dU = (dz.reshape(-1, G, m) * h2[:, None, :]).sum(axis=0)
    else:
        dU = (dz2.T @ h2).reshape(G, m, m)
    db = dz2.sum(axis=0).reshape(G, m)
    return CellParams(params.kind, dW, dU, db)


def step_backward(params: CellParams, cache: StepCache, grad_h, grad_c=None):
    """Exact gradients of one step.

    ``grad_h``/``grad_c`` are the upstream cotangents on the new state.
    Returns ``(grad_params, grad_x, grad_prev)``; parameter gradients are
    summed over any batch dimensions.
    """
    grad_h = np.asarray(grad_h, dtype=np.float64)
    if grad_h.shape != cache.h.shape:
        raise ShapeError(f"step_backward: grad_h shape {grad_h.shape} != {cache.h.shape}")
    if grad_c is None:
        grad_c = np.zeros_like(cache.c)
    grad_c = np.asarray(grad_c, dtype=np.float64)
    if grad_c.shape != cache.c.shape:
        raise ShapeError(f"step_backward: grad_c shape {grad_c.shape} != {cache.c.shape}")
    dz, gh, gc = step_backward_core(params, cache, grad_h, grad_c)
    return param_grads(params, dz, cache.x, cache.h_prev), input_grad(params, dz), CellState(gh, gc)


def param_count(kind, n: int, m: int) -> int:
    """Number of trainable scalars in one cell direction.

    LSTM 4m(n+m+1), IndyLSTM 4m(n+2), RNN m(n+m+1), IndRNN m(n+2).
    """
    kind = CellKind.parse(kind)
    recurrent = 1 if kind.diagonal else m
    return kind.num_gates * m * (n + recurrent + 1)
