"""Independent reference computations used as test oracles.

None of these share code paths with the implementations they check.
"""
import functools
import itertools
import math

import numpy as np


def collapse(path, blank):
    out = []
    prev = None
    for k in path:
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def brute_force_ctc_loss(logprobs, label):
    """-log of the summed probability of every path that collapses to label."""
    T, C = logprobs.shape
    blank = C - 1
    total = 0.0
    for path in itertools.product(range(C), repeat=T):
        if collapse(path, blank) == list(label):
            total += math.exp(sum(logprobs[t, k] for t, k in enumerate(path)))
    return -math.log(total)


def central_diff(f, arrays, eps=1e-6):
    """Numerical gradient of scalar ``f()`` w.r.t. each array, perturbed in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        for i in np.ndindex(a.shape):
            orig = a[i]
            a[i] = orig + eps
            fp = f()
            a[i] = orig - eps
            fm = f()
            a[i] = orig
            g[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    """Max-abs difference relative to the tensor's max-abs gradient."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    diff = np.abs(analytic - numeric).max(initial=0.0)
    return diff / scale if scale > 0 else diff


def edit_distance(a, b):
    @functools.lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def enumerate_elements(*arrays):
    return sum(1 for a in arrays for _ in np.ndindex(a.shape))


def brute_force_pareto(points):
    """Indices kept under: no other point has x <= and y <, first of exact duplicates."""
    keep = []
    for i, (x, y) in enumerate(points):
        dominated = any(x2 <= x and y2 < y for j, (x2, y2) in enumerate(points) if j != i)
        duplicate_of_earlier = any((x2, y2) == (x, y) for x2, y2 in points[:i])
        if not dominated and not duplicate_of_earlier:
            keep.append(i)
    return keep
