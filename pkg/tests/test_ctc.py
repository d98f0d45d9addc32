import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_ctc_loss, central_diff, relative_error
from oracles import edit_distance as edit_distance_oracle

from indylstm.ctc import (
    InfeasibleLabelError,
    cer,
    corpus_cer,
    ctc_loss,
    ctc_loss_batch,
    edit_distance,
    greedy_decode,
    min_frames,
)
from indylstm.numerics import ParameterError, Rng, ShapeError, log_softmax


def random_logprobs(T, C, seed):
    return log_softmax(Rng(seed).normal(1.5, (T, C)))


def test_single_frame_uniform():
    lp = np.log(np.full((1, 2), 0.5))
    assert ctc_loss(lp, [0]).loss == pytest.approx(math.log(2), abs=1e-12)


def test_two_frame_uniform():
    lp = np.log(np.full((2, 2), 0.5))
    # paths a-a, a-blank, blank-a collapse to "a"
    assert ctc_loss(lp, [0]).loss == pytest.approx(-math.log(0.75), abs=1e-12)


def test_repeated_label_needs_separator():
    assert min_frames([0, 0]) == 3
    assert min_frames([0, 1]) == 2
    assert min_frames([]) == 0
    with pytest.raises(InfeasibleLabelError):
        ctc_loss(random_logprobs(2, 3, 0), [1, 1])


@pytest.mark.parametrize(
    "T,C,label",
    [(1, 3, []), (3, 3, []), (3, 3, [0]), (4, 3, [1, 1]), (4, 4, [2, 0]), (5, 3, [0, 1, 0]), (5, 4, [2, 2]), (6, 3, [1])],
)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matches_brute_force_path_sum(T, C, label, seed):
    lp = random_logprobs(T, C, seed)
    assert ctc_loss(lp, label).loss == pytest.approx(brute_force_ctc_loss(lp, label), rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("label", [[0], [1, 1], [0, 2, 1], []])
def test_gradient_matches_finite_differences(label):
    lp = random_logprobs(7, 4, 11)
    res = ctc_loss(lp, label)
    (num,) = central_diff(lambda: ctc_loss(lp, label).loss, [lp], eps=1e-6)
    assert relative_error(res.grad, num) < 1e-6


def test_gradient_through_softmax_is_posterior_minus_prob():
    # d loss / d logits = softmax - posterior; rows sum to zero
    logits = Rng(3).normal(1.0, (6, 4))
    lp = log_softmax(logits)
    res = ctc_loss(lp, [0, 2])
    dlogits = res.grad - np.exp(lp) * res.grad.sum(axis=1, keepdims=True)
    assert np.abs(dlogits.sum(axis=1)).max() < 1e-12
    (num,) = central_diff(lambda: ctc_loss(log_softmax(logits), [0, 2]).loss, [logits])
    assert relative_error(dlogits, num) < 1e-6
    # posterior occupancies: each frame's mass sums to one
    np.testing.assert_allclose(-res.grad.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    T=st.integers(1, 12),
    C=st.integers(2, 6),
    seed=st.integers(0, 2**31),
    data=st.data(),
)
def test_probability_in_unit_interval(T, C, seed, data):
    lab = data.draw(st.lists(st.integers(0, C - 2), max_size=T))
    if min_frames(lab) > T:
        return
    loss = ctc_loss(random_logprobs(T, C, seed), lab).loss
    assert loss >= -1e-12
    assert 0 < math.exp(-loss) <= 1 + 1e-12


def test_batch_matches_single_with_padding():
    rng = Rng(4)
    lengths = np.array([5, 2, 7])
    lp = log_softmax(rng.normal(1.0, (7, 3, 4)))
    labels = [[0, 1], [2], [1, 1, 0]]
    losses, grad = ctc_loss_batch(lp, labels, lengths)
    for b, T in enumerate(lengths):
        r = ctc_loss(lp[:T, b], labels[b])
        assert losses[b] == pytest.approx(r.loss, abs=1e-12)
        np.testing.assert_allclose(grad[:T, b], r.grad, atol=1e-12)
        assert not np.any(grad[T:, b])


def test_errors():
    lp = random_logprobs(3, 3, 0)
    with pytest.raises(ParameterError):
        ctc_loss(lp, [2])  # blank index is not a label
    with pytest.raises(ShapeError):
        ctc_loss(np.zeros((0, 3)), [])
    with pytest.raises(ShapeError):
        ctc_loss_batch(lp[:, None, :], [[0], [1]])


def one_hot_path(path, C):
    lp = np.full((len(path), C), -50.0)
    lp[np.arange(len(path)), path] = 0.0
    return lp


@pytest.mark.parametrize(
    "path,expected",
    [([0, 0, 2, 1, 1], [0, 1]), ([0, 2, 0], [0, 0]), ([2, 2, 2], []), ([1, 1, 1], [1]), ([2, 0, 2, 1, 2], [0, 1])],
)
def test_greedy_decode_collapses(path, expected):
    assert greedy_decode(one_hot_path(path, 3)) == expected


def test_greedy_decode_respects_length():
    lp = one_hot_path([0, 2, 1, 1], 3)
    assert greedy_decode(lp, 2) == [0]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=8))
def test_one_hot_alignment_decodes_to_its_label(label):
    # build a minimal valid alignment, then stretch it
    path = []
    for k in label:
        if path and path[-1] == k:
            path.append(4)
        path += [k, k]
    assert greedy_decode(one_hot_path(path, 5)) == label


def test_cer_examples():
    assert cer("abc", "abc") == 0.0
    assert cer("abc", "abd") == pytest.approx(1 / 3)
    assert cer("abc", "") == 1.0
    assert cer("ab", "abab") == 1.0
    with pytest.raises(ParameterError):
        cer("", "x")


@settings(max_examples=200, deadline=None)
@given(st.text("abc", max_size=8), st.text("abc", max_size=8))
def test_edit_distance_matches_recursive_oracle(a, b):
    assert edit_distance(a, b) == edit_distance_oracle(a, b)


def test_corpus_cer_is_pooled():
    pairs = [("abcd", "abcd"), ("ab", "")]
    assert corpus_cer(pairs) == pytest.approx(2 / 6)
    assert corpus_cer([("", ""), ("abc", "abd")]) == pytest.approx(1 / 3)
    with pytest.raises(ParameterError):
        corpus_cer([("", "x")])
