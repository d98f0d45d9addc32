"""Dense float64 helpers and the seeded random stream shared by every module."""
from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "numpy-philox4x64-v1"


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ParameterError(ValueError):
    """Raised for out-of-range scalar arguments."""


def as_vector(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64)


def matvec(M, v) -> np.ndarray:
    """Return ``M @ v`` for a 2-D matrix and a 1-D vector."""
    M = np.asarray(M, dtype=np.float64)
    v = as_vector(v)
    if M.ndim != 2 or v.ndim != 1 or M.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: matrix shape {M.shape} incompatible with vector shape {v.shape}")
    return M @ v


def hadamard(a, b) -> np.ndarray:
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return a * b


def sigmoid(x):
    # tanh form is overflow-free for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def activation(kind: str, v) -> np.ndarray:
    """Apply ``"sigmoid"`` (logistic) or ``"tanh"`` elementwise."""
    v = as_vector(v)
    if kind in ("sigmoid", "logistic", "logistic-sigmoid"):
        return sigmoid(v)
    if kind == "tanh":
        return np.tanh(v)
    raise ParameterError(f"unknown activation {kind!r}")


def log_softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


class Rng:
    """Seeded counter-based random stream (Philox 4x64).

    The full generator state can be exported with :meth:`get_state` and
    restored with :meth:`set_state`, which is what checkpoints store.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int):
        if seed < 0:
            raise ParameterError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, lo: float, hi: float, size) -> np.ndarray:
        if lo > hi:
            raise ParameterError(f"uniform: lo={lo} exceeds hi={hi}")
        # random() is in [0, 1) so the result stays in [lo, hi)
        return lo + (hi - lo) * self._gen.random(size)

    def normal(self, scale: float, size) -> np.ndarray:
        return scale * self._gen.standard_normal(size)

    def integers(self, lo: int, hi: int, size=None):
        return self._gen.integers(lo, hi, size=size)

    def spawn_seed(self) -> int:
        return int(self._gen.integers(0, 2**63 - 1))

    def get_state(self) -> dict:
        st = self._gen.bit_generator.state
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "counter": [int(x) for x in st["state"]["counter"]],
            "key": [int(x) for x in st["state"]["key"]],
            "buffer": [int(x) for x in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    def set_state(self, state: dict) -> None:
        if state.get("algorithm") != self.algorithm:
            raise ParameterError(f"rng algorithm mismatch: {state.get('algorithm')!r} != {self.algorithm!r}")
        self.seed = int(state["seed"])
        self._gen.bit_generator.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": np.array(state["key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": state["buffer_pos"],
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(int(state["seed"]))
        rng.set_state(state)
        return rng


def uniform(rng: Rng, lo: float, hi: float, count: int) -> np.ndarray:
    return rng.uniform(lo, hi, count)


def derive_seed(*parts: int) -> int:
    """Deterministic 63-bit seed from a tuple of non-negative integers."""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])
