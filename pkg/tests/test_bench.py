from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_pareto, enumerate_elements

import indylstm.bench as bench
from indylstm.bench import (
    SWEEP_HEADER,
    CostModel,
    SweepGrid,
    SweepRow,
    cer_minimum_step,
    default_overfit_archs,
    layer_madds,
    madds_per_step,
    overfit_trace,
    pareto_front,
    read_sweep_csv,
    run_sweep,
    time_inference,
    write_sweep_csv,
)
from indylstm.cells import CellParams
from indylstm.network import Architecture, Model, model_param_count
from indylstm.numerics import ParameterError
from indylstm.training import TrainConfig, TrainTrace, init_model

TINY_TRAIN = TrainConfig(batch_size=2, learning_rate=1e-2, max_steps=6, patience_steps=3, eval_every_steps=3)


def test_lstm_layer_madds():
    assert layer_madds("lstm", 64, 64) == 33024
    assert layer_madds("lstm", 64, 64) == enumerate_elements(*CellParams.zeros("lstm", 64, 64).tensors().values())


def test_layer_ratio_example():
    assert Fraction(layer_madds("indylstm", 64, 64), layer_madds("lstm", 64, 64)) == Fraction(66, 129)


@settings(max_examples=200)
@given(st.integers(1, 512), st.integers(1, 512))
def test_layer_ratio_identity(n, m):
    assert Fraction(layer_madds("indylstm", n, m), layer_madds("lstm", n, m)) == Fraction(n + 2, n + m + 1)


def test_tiny_arch_total():
    arch = Architecture("lstm", 1, 1, 1, 1)
    assert madds_per_step(arch) == 30
    assert madds_per_step(arch) == enumerate_elements(*Model.zeros(arch).tensors().values())


def test_cost_model_breakdown():
    arch = Architecture("indylstm", 3, 96, 10, 79)
    cm = CostModel.of(arch)
    assert len(cm.per_layer) == 3
    assert cm.projection == 2 * 96 * 80 + 80
    assert cm.total == model_param_count(arch) == 322_640


def test_ratio_tends_to_half():
    ratios = [layer_madds("indylstm", m, m) / layer_madds("lstm", m, m) for m in (8, 64, 512, 4096)]
    assert all(r < 1 for r in ratios)
    assert ratios == sorted(ratios, reverse=True)
    assert abs(ratios[-1] - 0.5) < 1e-3


def test_indylstm_cheaper_over_default_grid():
    grid = SweepGrid()
    for depth in grid.depths:
        for width in grid.widths:
            a = Architecture("indylstm", depth, width, 10, 79)
            b = Architecture("lstm", depth, width, 10, 79)
            assert model_param_count(a) < model_param_count(b)


def test_time_inference_contract():
    model = init_model(Architecture("lstm", 1, 8, 4, 3), 0)
    t = time_inference(model, 10, repetitions=5)
    assert len(t.runs_us) == 5
    assert t.median_us_per_step == pytest.approx(float(np.median(t.runs_us)) / 10)
    assert t.p90_us_per_step >= t.median_us_per_step > 0
    with pytest.raises(ParameterError):
        time_inference(model, 10, repetitions=4)


def test_time_inference_orderings():
    model = init_model(Architecture("lstm", 2, 32, 10, 5), 0)
    short = [time_inference(model, 40, 5).total_us for _ in range(5)]
    long = [time_inference(model, 80, 5).total_us for _ in range(5)]
    assert np.median(long) > np.median(short)
    a = time_inference(model, 40, 5).median_us_per_step
    b = time_inference(model, 40, 5).median_us_per_step
    assert 1 / 3 <= a / b <= 3


def test_grid_defaults_and_validation():
    g = SweepGrid()
    assert g.depths == [3, 4, 5, 6, 7, 8, 9]
    assert g.widths == [32, 64, 96, 128, 160, 192, 224, 256]
    assert g.dropouts == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
    with pytest.raises(ParameterError):
        SweepGrid(depths=[])
    with pytest.raises(ParameterError):
        SweepGrid(widths=[0])
    with pytest.raises(ParameterError):
        SweepGrid.from_dict({"depth": [3]})


def test_grid_points_have_distinct_seeds():
    pts = SweepGrid(depths=[3, 4], widths=[32], dropouts=[0.0], seeds_per_point=2).points()
    assert len(pts) == 2 * 2 * 2
    assert len({p[-1] for p in pts}) == len(pts)
    assert pts == SweepGrid(depths=[3, 4], widths=[32], dropouts=[0.0], seeds_per_point=2).points()


def small_grid(**kw):
    base = dict(kinds=["lstm", "indylstm"], depths=[1], widths=[4], dropouts=[0.0], train=TINY_TRAIN, bench_seq_len=8)
    base.update(kw)
    return SweepGrid(**base)


def test_single_point_sweep(tiny_splits):
    rows = run_sweep(small_grid(kinds=["indylstm"]), *tiny_splits, workers=1)
    assert len(rows) == 1
    r = rows[0]
    assert r.error is None
    assert r.param_count == model_param_count(Architecture("indylstm", 1, 4, 10, 3))
    assert r.madds_per_step == r.param_count
    assert 0 <= r.test_cer <= 1.5 and 0 <= r.best_val_cer <= 1.5
    assert r.steps_to_best in (3, 6) and r.wall_us_per_step > 0


def test_two_kinds_sweep_csv_and_determinism(tiny_splits, tmp_path):
    grid = small_grid()
    rows = run_sweep(grid, *tiny_splits, out_path=tmp_path / "s.csv", workers=1)
    assert [r.kind for r in rows] == ["lstm", "indylstm"]
    assert rows[1].param_count < rows[0].param_count
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_HEADER)
    back = read_sweep_csv(tmp_path / "s.csv")
    assert back == rows
    again = run_sweep(grid, *tiny_splits, workers=1)
    assert [(r.best_val_cer, r.test_cer, r.steps_to_best) for r in again] == [
        (r.best_val_cer, r.test_cer, r.steps_to_best) for r in rows
    ]


def test_parallel_sweep_keeps_grid_order(tiny_splits):
    grid = small_grid(depths=[1, 2])
    serial = run_sweep(grid, *tiny_splits, workers=1)
    parallel = run_sweep(grid, *tiny_splits, workers=2)
    key = lambda r: (r.kind, r.depth, r.seed, r.test_cer, r.best_val_cer)
    assert [key(r) for r in parallel] == [key(r) for r in serial]


def test_failed_point_gets_error_marker(tiny_splits, tmp_path, monkeypatch):
    real_train = bench.train

    def flaky(model, *a, **kw):
        if model.arch.kind.value == "lstm":
            raise RuntimeError("boom")
        return real_train(model, *a, **kw)

    monkeypatch.setattr(bench, "train", flaky)
    rows = run_sweep(small_grid(), *tiny_splits, out_path=tmp_path / "s.csv", workers=1)
    assert "boom" in rows[0].error and rows[1].error is None
    line = (tmp_path / "s.csv").read_text().splitlines()[1]
    assert line.endswith(",ERROR,ERROR,ERROR,ERROR")
    back = read_sweep_csv(tmp_path / "s.csv")
    assert back[0].test_cer is None and back[0].error is not None


def row(x, y):
    return SweepRow("lstm", 3, 32, 0.0, 0, x, x, y, y, 0, 1.0)


def xy(rows):
    return [(r.param_count, r.test_cer) for r in rows]


@pytest.mark.parametrize(
    "points,expected",
    [
        ([(10, 5.0), (20, 6.0)], [(10, 5.0)]),
        ([(10, 5.0), (20, 4.0)], [(10, 5.0), (20, 4.0)]),
        ([(10, 5.0), (10, 4.0)], [(10, 4.0)]),
        ([(20, 4.0), (10, 5.0), (20, 4.0)], [(10, 5.0), (20, 4.0)]),
        ([(10, 5.0), (20, 5.0)], [(10, 5.0), (20, 5.0)]),
    ],
)
def test_pareto_examples(points, expected):
    assert xy(pareto_front([row(*p) for p in points])) == expected


def test_pareto_ignores_failed_rows():
    failed = row(5, None)
    assert xy(pareto_front([failed, row(10, 1.0)])) == [(10, 1.0)]


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(1, 20), st.integers(0, 10).map(lambda v: v / 10)), min_size=1, max_size=25))
def test_pareto_matches_brute_force_and_is_idempotent(points):
    rows = [row(*p) for p in points]
    front = pareto_front(rows)
    ids = {id(r): i for i, r in enumerate(rows)}
    assert sorted(ids[id(r)] for r in front) == brute_force_pareto(points)
    assert xy(front) == sorted(xy(front))
    assert xy(pareto_front(front)) == xy(front)


def test_default_overfit_trio():
    archs = default_overfit_archs(10, 79)
    assert [(a.kind.value, a.depth, a.width) for a in archs] == [("lstm", 3, 96), ("indylstm", 3, 96), ("indylstm", 3, 128)]
    assert [model_param_count(a) for a in archs] == [541_520, 322_640, 561_232]


def test_overfit_trace_rows_and_columns(tiny_splits, tmp_path):
    archs = [Architecture("lstm", 1, 4, 10, 3), Architecture("indylstm", 1, 4, 10, 3)]
    cfg = TrainConfig(batch_size=2, learning_rate=1e-2, max_steps=12, patience_steps=3, eval_every_steps=3, seed=1)
    traces = overfit_trace(archs, *tiny_splits, cfg, tmp_path)
    assert sorted(traces) == ["indylstm_1x4_seed1.csv", "lstm_1x4_seed1.csv"]
    for name, trace in traces.items():
        text = (tmp_path / name).read_text().splitlines()
        assert text[0] == "step,train_loss,val_cer,test_cer"
        assert len(text) - 1 == 12 // 3  # early stopping disabled
        assert all(r.test_cer is not None for r in trace.records)
        assert TrainTrace.read_csv(tmp_path / name) == trace
        assert cer_minimum_step(trace) in [r.step for r in trace.records]


def test_indylstm_inference_faster_at_large_width():
    # ordering only; no claim about the size of the gap
    lstm = init_model(Architecture("lstm", 1, 256, 10, 8), 0)
    indy = init_model(Architecture("indylstm", 1, 256, 10, 8), 0)
    t_lstm, t_indy = [], []
    for _ in range(3):
        t_lstm.append(time_inference(lstm, 64, 5).median_us_per_step)
        t_indy.append(time_inference(indy, 64, 5).median_us_per_step)
    assert np.median(t_indy) < np.median(t_lstm)
