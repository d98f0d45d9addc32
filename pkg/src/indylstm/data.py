"""Synthetic glyph-stroke sequences and the JSON-lines dataset format.

Each symbol owns a fixed random prototype: a short run of feature vectors.
A sample is its label's prototypes laid end to end plus Gaussian noise,
which gives a segmentation task with the same shape as ink feature
sequences (T x d in, character string out).
"""
from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import ParameterError, Rng, derive_seed

SYMBOL_POOL = string.ascii_lowercase + string.ascii_uppercase + string.digits + string.punctuation


class DatasetFormatError(ValueError):
    pass


class UnknownCharacterError(ValueError):
    pass


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple

    def __post_init__(self):
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if len(set(symbols)) != len(symbols):
            raise ParameterError(f"alphabet has duplicate symbols: {''.join(symbols)!r}")
        if any(len(s) != 1 for s in symbols):
            raise ParameterError("alphabet symbols must be single characters")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> list:
        out = []
        for pos, ch in enumerate(text):
            try:
                out.append(self._index[ch])
            except KeyError:
                raise UnknownCharacterError(f"character {ch!r} at position {pos} is not in the alphabet") from None
        return out

    def decode(self, indices) -> str:
        return "".join(self.symbols[int(i)] for i in indices)


def encode_label(alphabet: Alphabet, text: str) -> list:
    return alphabet.encode(text)


def decode_label(alphabet: Alphabet, indices) -> str:
    return alphabet.decode(indices)


@dataclass
class Sample:
    features: np.ndarray  # (T, d)
    label: str


@dataclass
class Dataset:
    alphabet: Alphabet
    dim: int
    samples: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.alphabet == other.alphabet
            and self.dim == other.dim
            and len(self.samples) == len(other.samples)
            and all(
                a.label == b.label and a.features.shape == b.features.shape and np.array_equal(a.features, b.features)
                for a, b in zip(self.samples, other.samples)
            )
        )


@dataclass(frozen=True)
class SynthConfig:
    alphabet_size: int = 8
    dim: int = 10
    proto_len: tuple = (3, 8)
    label_len: tuple = (1, 5)
    noise: float = 0.05
    warp: bool = False  # reserved, no effect
    train_n: int = 2000
    val_n: int = 200
    test_n: int = 200
    seed: int = 1

    def validate(self):
        if not 1 <= self.alphabet_size <= len(SYMBOL_POOL):
            raise ParameterError(f"alphabet_size must be in [1, {len(SYMBOL_POOL)}], got {self.alphabet_size}")
        for name in ("proto_len", "label_len"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ParameterError(f"{name} range {lo}..{hi} is empty or non-positive")
        if self.dim < 1:
            raise ParameterError("dim must be positive")
        if self.noise < 0:
            raise ParameterError("noise must be non-negative")
        if min(self.train_n, self.val_n, self.test_n) < 0:
            raise ParameterError("split sizes must be non-negative")


def make_prototypes(config: SynthConfig) -> list:
    rng = Rng(derive_seed(config.seed, 0))
    lo, hi = config.proto_len
    protos = []
    for _ in range(config.alphabet_size):
        length = int(rng.integers(lo, hi + 1))
        protos.append(rng.uniform(-1.0, 1.0, (length, config.dim)))
    return protos


def render(label_idx, prototypes, noise: float, rng: Rng | None) -> np.ndarray:
    feats = np.concatenate([prototypes[k] for k in label_idx], axis=0)
    if noise > 0:
        feats = feats + rng.normal(noise, feats.shape)
    return feats


def generate(config: SynthConfig):
    """Build (train, validation, test) datasets, fully determined by ``config``."""
    config.validate()
    alphabet = Alphabet(tuple(SYMBOL_POOL[: config.alphabet_size]))
    protos = make_prototypes(config)
    splits = []
    for split_id, n in enumerate((config.train_n, config.val_n, config.test_n), start=1):
        rng = Rng(derive_seed(config.seed, split_id))
        samples = []
        for _ in range(n):
            length = int(rng.integers(config.label_len[0], config.label_len[1] + 1))
            idx = [int(k) for k in rng.integers(0, config.alphabet_size, length)]
            samples.append(Sample(render(idx, protos, config.noise, rng), alphabet.decode(idx)))
        splits.append(Dataset(alphabet, config.dim, samples))
    return tuple(splits)


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for s in ds.samples:
            rec = {"features": s.features.tolist(), "label": s.label}
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
    with open(meta_path(path), "w", encoding="utf-8") as f:
        json.dump({"dim": ds.dim, "alphabet": list(ds.alphabet.symbols)}, f, ensure_ascii=False)


def load_dataset(path) -> Dataset:
    path = Path(path)
    mpath = meta_path(path)
    try:
        meta = json.loads(mpath.read_text(encoding="utf-8"))
        dim = int(meta["dim"])
        alphabet = Alphabet(tuple(meta["alphabet"]))
    except FileNotFoundError:
        raise DatasetFormatError(f"missing metadata file {mpath}") from None
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise DatasetFormatError(f"{mpath}: bad metadata ({e})") from None
    samples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                feats = np.asarray(rec["features"], dtype=np.float64)
                label = rec["label"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DatasetFormatError(f"{path}:{lineno}: malformed record ({e})") from None
            if not isinstance(label, str):
                raise DatasetFormatError(f"{path}:{lineno}: label must be a string")
            if feats.ndim != 2 or feats.shape[1] != dim or feats.shape[0] < 1:
                raise DatasetFormatError(f"{path}:{lineno}: features shape {feats.shape} does not match dim={dim}")
            try:
                alphabet.encode(label)
            except UnknownCharacterError as e:
                raise DatasetFormatError(f"{path}:{lineno}: {e}") from None
            samples.append(Sample(feats, label))
    return Dataset(alphabet, dim, samples)
