"""CTC loss (log-space forward-backward), best-path decoding, and CER.

The blank is always the last class, index ``C - 1`` for ``C`` columns of
log-probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ParameterError, ShapeError

NEG_INF = -np.inf


class InfeasibleLabelError(ValueError):
    """The label cannot be aligned to this many timesteps."""


@dataclass
class CtcResult:
    loss: float
    grad: np.ndarray  # d loss / d logprobs, same shape as the input


def min_frames(label) -> int:
    """Fewest timesteps that can emit ``label`` (repeats need a blank between)."""
    label = list(label)
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats


def _lse(a, b):
    return np.logaddexp(a, b)


def ctc_loss_batch(logprobs: np.ndarray, labels: list, lengths=None):
    """Per-sample losses and gradients for a time-major (T, B, C) batch.

    Samples shorter than ``T`` are given by ``lengths``; their gradient is
    zero on the padded steps.
    """
    logprobs = np.asarray(logprobs, dtype=np.float64)
    T, B, C = logprobs.shape
    blank = C - 1
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    if len(labels) != B:
        raise ShapeError(f"{len(labels)} labels for a batch of {B}")
    for b, lab in enumerate(labels):
        if lengths[b] < 1:
            raise ShapeError("CTC needs at least one timestep")
        if any(k < 0 or k >= blank for k in lab):
            raise ParameterError(f"label {list(lab)} has indices outside [0, {blank})")
        if min_frames(lab) > lengths[b]:
            raise InfeasibleLabelError(
                f"label of length {len(lab)} needs {min_frames(lab)} frames, sequence has {lengths[b]}"
            )
    S = 2 * max((len(lab) for lab in labels), default=0) + 1
    ext = np.full((B, S), blank, dtype=np.int64)
    allow_skip = np.zeros((B, S), dtype=bool)
    S_b = np.empty(B, dtype=np.int64)
    for b, lab in enumerate(labels):
        lab = np.asarray(lab, dtype=np.int64)
        ext[b, 1 : 2 * len(lab) : 2] = lab
        S_b[b] = 2 * len(lab) + 1
        if len(lab) > 1:
            allow_skip[b, 3 : 2 * len(lab) : 2] = lab[1:] != lab[:-1]
    bidx = np.arange(B)[:, None]
    emit = logprobs[:, bidx, ext]  # (T, B, S)

    alpha = np.full((T, B, S), NEG_INF)
    alpha[0, :, 0] = emit[0, :, 0]
    if S > 1:
        has_label = S_b > 1
        alpha[0, has_label, 1] = emit[0, has_label, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[:, 1:] = _lse(acc[:, 1:], prev[:, :-1])
        acc[:, 2:] = np.where(allow_skip[:, 2:], _lse(acc[:, 2:], prev[:, :-2]), acc[:, 2:])
        alpha[t] = acc + emit[t]

    # beta excludes the emission at t: alpha_t(s) + beta_t(s) is the log mass
    # of all paths passing through s at time t.
    beta = np.full((T, B, S), NEG_INF)
    last = np.zeros((B, S), dtype=bool)
    last[np.arange(B), S_b - 1] = True
    last[np.arange(B)[S_b > 1], S_b[S_b > 1] - 2] = True
    end_init = np.where(last, 0.0, NEG_INF)
    for t in range(T - 1, -1, -1):
        if t < T - 1:
            nxt = beta[t + 1] + emit[t + 1]
            acc = nxt.copy()
            acc[:, :-1] = _lse(acc[:, :-1], nxt[:, 1:])
            acc[:, :-2] = np.where(allow_skip[:, 2:], _lse(acc[:, :-2], nxt[:, 2:]), acc[:, :-2])
        else:
            acc = np.full((B, S), NEG_INF)
        at_end = (lengths - 1 == t)[:, None]
        past_end = (lengths - 1 < t)[:, None]
        beta[t] = np.where(at_end, end_init, np.where(past_end, NEG_INF, acc))

    final = alpha[lengths - 1, np.arange(B)]
    log_like = np.logaddexp.reduce(np.where(last, final, NEG_INF), axis=1)
    losses = -log_like

    with np.errstate(invalid="ignore"):
        post = np.exp(alpha + beta - log_like[None, :, None])
    post = np.nan_to_num(post, nan=0.0)
    grad = np.zeros_like(logprobs)
    t_idx = np.broadcast_to(np.arange(T)[:, None, None], post.shape)
    b_idx = np.broadcast_to(np.arange(B)[None, :, None], post.shape)
    k_idx = np.broadcast_to(ext[None, :, :], post.shape)
    np.add.at(grad, (t_idx, b_idx, k_idx), -post)
    return losses, grad


def ctc_loss(logprobs, label) -> CtcResult:
    """Negative log-likelihood of ``label`` under (T, K+1) log-probabilities."""
    logprobs = np.asarray(logprobs, dtype=np.float64)
    if logprobs.ndim != 2 or logprobs.shape[0] < 1:
        raise ShapeError(f"expected (T, K+1) log-probabilities with T >= 1, got {logprobs.shape}")
    losses, grad = ctc_loss_batch(logprobs[:, None, :], [list(label)])
    return CtcResult(float(losses[0]), grad[:, 0, :])


def greedy_decode(logprobs, length: int | None = None) -> list:
    """Best-path decoding: per-step argmax, merge repeats, drop blanks."""
    logprobs = np.asarray(logprobs)
    if length is not None:
        logprobs = logprobs[:length]
    blank = logprobs.shape[-1] - 1
    best = np.argmax(logprobs, axis=-1)  # first maximum wins ties
    out = []
    prev = None
    for k in best:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def edit_distance(a, b) -> int:
    """Levenshtein distance with unit costs."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def cer(reference: str, hypothesis: str) -> float:
    if len(reference) == 0:
        raise ParameterError("CER is undefined for an empty reference; use corpus_cer")
    return edit_distance(reference, hypothesis) / len(reference)


def corpus_cer(pairs) -> float:
    """Pooled CER: total edits over total reference characters."""
    edits = 0
    chars = 0
    for ref, hyp in pairs:
        edits += edit_distance(ref, hyp)
        chars += len(ref)
    if chars == 0:
        raise ParameterError("corpus CER needs a positive total reference length")
    return edits / chars
