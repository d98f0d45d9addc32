import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from indylstm.cells import CellParams, CellState
from indylstm.numerics import Rng


def random_params(kind, n, m, rng, scale=1.0):
    p = CellParams.zeros(kind, n, m)
    for a in p.tensors().values():
        a[...] = rng.uniform(-scale, scale, a.shape)
    return p


def random_state(kind, m, rng, batch=()):
    s = CellState.zeros(kind, m, batch)
    s.h[...] = rng.uniform(-1, 1, s.h.shape)
    s.c[...] = rng.uniform(-1, 1, s.c.shape)
    return s


def randomize_model(model, rng, scale=0.5):
    for a in model.tensors().values():
        a[...] = rng.uniform(-scale, scale, a.shape)
    return model


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture(scope="session")
def tiny_splits():
    from indylstm.data import SynthConfig, generate

    return generate(SynthConfig(alphabet_size=3, train_n=40, val_n=10, test_n=10, label_len=(1, 3), seed=5))


# one verdict line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
