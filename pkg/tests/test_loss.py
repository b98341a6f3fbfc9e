"""Dataset binding and the declarative objective."""

import math

import pytest

from conftest import decay_deck, decay_deck_xml, mkdeck
from odefit.deck import parse_deck
from odefit.loss import (
    BoundDataset,
    DatasetError,
    LossTerm,
    bind_dataset,
    loss_gradient_ready,
    loss_value,
    parse_signal,
    resolve_scale,
    restricted_times,
)
from odefit.model import compile_model
from odefit.solve import SolverConfig, integrate


def _write(tmp_path, text, name="decay.csv"):
    (tmp_path / name).write_text(text, encoding="utf-8")
    return tmp_path


def _bind(tmp_path, xml=None, csv_text=None):
    if csv_text is not None:
        _write(tmp_path, csv_text)
    deck = parse_deck(xml or decay_deck_xml())
    return bind_dataset(deck, base_dir=tmp_path)


# ---------------------------------------------------------------------------
# signal parsing


def test_parse_signal():
    assert parse_signal("y1") == ("y1", False)
    assert parse_signal("rate(T)") == ("T", True)
    assert parse_signal("rate( T )") == ("T", True)


# ---------------------------------------------------------------------------
# binding


def test_bind_maps_columns_and_differentiates(tmp_path):
    csv_text = "t,y\n0.0,1.0\n1.0,3.0\n3.0,4.0\n4.0,2.0\n"
    data = _bind(tmp_path, csv_text=csv_text)
    assert data.times == (0.0, 1.0, 3.0, 4.0)
    assert data.values["y"] == (1.0, 3.0, 4.0, 2.0)
    # one-sided at the ends, centered inside
    expect = (
        (3.0 - 1.0) / 1.0,
        (4.0 - 1.0) / 3.0,
        (2.0 - 3.0) / 3.0,
        (2.0 - 4.0) / 1.0,
    )
    assert data.rates["y"] == expect
    assert data.signal_data("rate(y)") == expect
    assert data.signal_data("y") == data.values["y"]


def test_bind_rate_column_overrides_differences(tmp_path):
    xml = """<problem name="arcmini">
  <states><state name="T">300</state></states>
  <parameters><parameter name="a" lower="0.1" upper="10"/></parameters>
  <rhs><eq state="T">a</eq></rhs>
  <dataset path="arc.csv" time="t" rate_source="column">
    <bind column="T" signal="T"/>
    <bind column="dTdt" signal="rate(T)"/>
  </dataset>
</problem>
"""
    _write(tmp_path, "t,T,dTdt\n0,300,1.5\n1,301.5,1.5\n2,303,1.5\n",
           name="arc.csv")
    data = bind_dataset(parse_deck(xml), base_dir=tmp_path)
    assert data.rates["T"] == (1.5, 1.5, 1.5)


def test_bind_rejects_short_dataset(tmp_path):
    with pytest.raises(DatasetError, match="fewer than 2 rows"):
        _bind(tmp_path, csv_text="t,y\n0.1,0.9\n")


def test_bind_reports_bad_cell_position(tmp_path):
    with pytest.raises(DatasetError, match="row 2, column 'y'"):
        _bind(tmp_path, csv_text="t,y\n0.1,0.9\n0.2,oops\n0.3,0.7\n")


def test_bind_unreadable_file(tmp_path):
    deck = parse_deck(decay_deck_xml(csv_name="missing.csv"))
    with pytest.raises(DatasetError, match="unreadable"):
        bind_dataset(deck, base_dir=tmp_path)


def test_bind_missing_column(tmp_path):
    with pytest.raises(DatasetError, match="column 'y' not in CSV header"):
        _bind(tmp_path, csv_text="t,z\n0.1,0.9\n0.2,0.8\n")


def test_signal_data_unknown_signal(tmp_path):
    data = _bind(tmp_path, csv_text="t,y\n0.1,0.9\n0.2,0.8\n")
    with pytest.raises(DatasetError, match="no bound data"):
        data.signal_data("z")


# ---------------------------------------------------------------------------
# scale resolution and window restriction


def test_scale_max_abs_of_data():
    data = BoundDataset(times=(0.0, 1.0, 2.0),
                        values={"x": (-0.4, 0.9, -1.3)}, rates={})
    term = LossTerm(signal="x", scale="max_abs_of_data")
    assert resolve_scale(term, data) == 1.3


def test_scale_max_abs_of_zero_data_rejected():
    data = BoundDataset(times=(0.0, 1.0), values={"x": (0.0, 0.0)}, rates={})
    term = LossTerm(signal="x", scale="max_abs_of_data")
    with pytest.raises(DatasetError, match="zero"):
        resolve_scale(term, data)


def test_scale_must_be_positive():
    data = BoundDataset(times=(0.0, 1.0), values={"x": (1.0, 2.0)}, rates={})
    with pytest.raises(DatasetError, match="positive"):
        resolve_scale(LossTerm(signal="x", scale=0.0), data)


def test_restricted_times_window_union():
    data = BoundDataset(times=tuple(float(i) for i in range(10)),
                        values={}, rates={})
    t1 = LossTerm(signal="x", window=(1.0, 3.0))
    t2 = LossTerm(signal="x", window=(6.0, 8.0))
    assert restricted_times(data, [t1, t2]) == (1.0, 2.0, 3.0, 6.0, 7.0, 8.0)
    # an unwindowed term forces the full grid
    t3 = LossTerm(signal="x")
    assert restricted_times(data, [t1, t3]) == data.times


# ---------------------------------------------------------------------------
# objective values


def _decay_fixture(tmp_path, offsets=None, k=1.7):
    """Dataset produced by the solver itself, optionally offset."""
    model = compile_model(decay_deck())
    cfg = SolverConfig(method="dopri5", rtol=1e-8, atol=1e-10,
                       t0=0.0, t1=2.0)
    times = [0.1 * (i + 1) for i in range(20)]
    traj = integrate(model, [k], times, cfg)
    rows = ["t,y"]
    for i, (t, row) in enumerate(zip(traj.times, traj.states)):
        v = row[0] + (offsets[i] if offsets else 0.0)
        rows.append(f"{t!r},{v!r}")
    _write(tmp_path, "\n".join(rows) + "\n")
    deck = parse_deck(decay_deck_xml())
    data = bind_dataset(deck, base_dir=tmp_path)
    return model, data, cfg


def test_identical_sim_and_data_gives_exact_zero(tmp_path):
    model, data, cfg = _decay_fixture(tmp_path)
    value = loss_value(model, [1.7], data, [LossTerm(signal="y")], cfg)
    assert value == 0.0


def test_mean_square_hand_oracle(tmp_path):
    # exact power-of-two offsets survive the CSV round trip unchanged
    offsets = [0.0078125 if i % 2 else -0.015625 for i in range(20)]
    model, data, cfg = _decay_fixture(tmp_path, offsets)
    w = 0.25
    value = loss_value(model, [1.7], data,
                       [LossTerm(signal="y", weight=w)], cfg)
    expect = w * sum(o * o for o in offsets) / 20.0
    assert value == pytest.approx(expect, rel=1e-12)


def test_root_mean_square_with_scale_oracle(tmp_path):
    offsets = [0.0078125] * 20
    model, data, cfg = _decay_fixture(tmp_path, offsets)
    s = 0.5
    term = LossTerm(signal="y", reduction="root_mean_square", scale=s)
    value = loss_value(model, [1.7], data, [term], cfg)
    assert value == pytest.approx(0.0078125 / s, rel=1e-12)


def test_max_abs_scale_resolves_from_data(tmp_path):
    offsets = [0.0078125] * 20
    model, data, cfg = _decay_fixture(tmp_path, offsets)
    s = max(abs(v) for v in data.values["y"])
    term = LossTerm(signal="y", reduction="root_mean_square",
                    scale="max_abs_of_data")
    value = loss_value(model, [1.7], data, [term], cfg)
    assert value == pytest.approx(0.0078125 / s, rel=1e-10)


def test_multi_term_sum_with_weights(tmp_path):
    offsets = [0.0078125] * 20
    model, data, cfg = _decay_fixture(tmp_path, offsets)
    terms = [LossTerm(signal="y", weight=0.25),
             LossTerm(signal="y", weight=0.5, reduction="root_mean_square")]
    value = loss_value(model, [1.7], data, terms, cfg)
    expect = 0.25 * 0.0078125 ** 2 + 0.5 * 0.0078125
    assert value == pytest.approx(expect, rel=1e-12)


def test_zero_weight_term_contributes_nothing(tmp_path):
    # degenerate weighting: the weighted term vanishes from the sum
    offsets = [0.0078125] * 20
    model, data, cfg = _decay_fixture(tmp_path, offsets)
    lone = loss_value(model, [1.7], data, [LossTerm(signal="y")], cfg)
    with_dead = loss_value(
        model, [1.7], data,
        [LossTerm(signal="y"),
         LossTerm(signal="rate(y)", transform="log10", weight=0.0)], cfg)
    assert with_dead == lone


def test_log10_term_oracle(tmp_path):
    model, data, cfg = _decay_fixture(tmp_path)
    # simulate at a perturbed rate: residuals are log10 ratios
    term = LossTerm(signal="y", transform="log10")
    theta = [1.8]
    value = loss_value(model, theta, data, [term], cfg)
    acc = 0.0
    for t, d in zip(data.times, data.values["y"]):
        r = math.log10(math.exp(-1.8 * t)) - math.log10(d)
        acc += r * r
    assert value == pytest.approx(acc / len(data.times), rel=1e-5)


def test_window_restricts_samples(tmp_path):
    offsets = [0.0078125 if i < 10 else 1.0 for i in range(20)]
    model, data, cfg = _decay_fixture(tmp_path, offsets)
    term = LossTerm(signal="y", window=(0.05, 1.04))
    value = loss_value(model, [1.7], data, [term], cfg)
    assert value == pytest.approx(0.0078125 ** 2, rel=1e-12)


def test_rate_terms_use_rhs_not_differencing(tmp_path):
    # data-side rates are exact -k*y samples; the model side must come
    # from the rhs at the trajectory sample, so residuals stay at solver
    # precision rather than at finite-difference truncation error
    k = 1.7
    times = [0.1 * (i + 1) for i in range(20)]
    rows = ["t,y,dy"]
    for t in times:
        y = math.exp(-k * t)
        rows.append(f"{t!r},{y!r},{(-k * y)!r}")
    _write(tmp_path, "\n".join(rows) + "\n")
    xml = decay_deck_xml().replace(
        '<bind column="y" signal="y"/>',
        '<bind column="y" signal="y"/><bind column="dy" signal="rate(y)"/>'
    ).replace('rate_source="finite_difference"', 'rate_source="column"')
    deck = parse_deck(xml)
    data = bind_dataset(deck, base_dir=tmp_path)
    model = compile_model(decay_deck())
    cfg = SolverConfig(method="dopri5", rtol=1e-10, atol=1e-12,
                       t0=0.0, t1=2.0)
    value = loss_value(model, [k], data, [LossTerm(signal="rate(y)")], cfg)
    assert value < 1e-18  # fd-differenced trajectories would sit near 1e-4


def test_solver_failure_returns_inf(tmp_path):
    model, data, _ = _decay_fixture(tmp_path)
    bad = SolverConfig(method="dopri5", rtol=1e-8, atol=1e-10,
                       t0=0.0, t1=2.0, max_steps=2)
    assert loss_value(model, [1.7], data, [LossTerm(signal="y")],
                      bad) == math.inf


def test_nonpositive_sim_under_log10_returns_inf(tmp_path):
    deck = mkdeck("osc", [("y", "1")], [("w", 1.0, 10.0, "linear")],
                  {"y": "-w*y"})
    model = compile_model(deck)
    times = [0.5, 1.0, 1.5]
    rows = ["t,y"] + [f"{t!r},{math.exp(-t)!r}" for t in times]
    _write(tmp_path, "\n".join(rows) + "\n", name="osc.csv")
    xml = decay_deck_xml(csv_name="osc.csv").replace(
        'transform="identity"', 'transform="log10"')
    data = bind_dataset(parse_deck(xml), base_dir=tmp_path)
    # drive the simulated state negative by integrating y' = -w*y from
    # a negative initial condition
    deck_neg = mkdeck("osc", [("y", "-1")], [("w", 1.0, 10.0, "linear")],
                      {"y": "-w*y"})
    model_neg = compile_model(deck_neg)
    cfg = SolverConfig(method="dopri5", rtol=1e-8, atol=1e-10,
                       t0=0.0, t1=2.0)
    value = loss_value(model_neg, [1.0], data,
                       [LossTerm(signal="y", transform="log10")], cfg)
    assert value == math.inf


def test_log10_drops_nonpositive_data_samples(tmp_path):
    model, data0, cfg = _decay_fixture(tmp_path)
    times = data0.times
    vals = list(data0.values["y"])
    vals[3] = -1.0  # poisoned sample must be skipped, not crash
    data = BoundDataset(times=times, values={"y": tuple(vals)}, rates={})
    term = LossTerm(signal="y", transform="log10")
    value = loss_value(model, [1.7], data, [term], cfg)
    assert math.isfinite(value)
    assert value < 1e-10  # remaining samples still match


def test_gradient_ready_flag(tmp_path):
    model, data, _ = _decay_fixture(tmp_path)
    assert loss_gradient_ready([LossTerm(signal="y")], data)
    assert loss_gradient_ready([LossTerm(signal="y", transform="log10")],
                               data)
    vals = list(data.values["y"])
    vals[0] = 0.0
    poisoned = BoundDataset(times=data.times, values={"y": tuple(vals)},
                            rates=dict(data.rates))
    assert not loss_gradient_ready(
        [LossTerm(signal="y", transform="log10")], poisoned)
    # the bad sample sits outside the window, so gradients stay exact
    windowed = LossTerm(signal="y", transform="log10", window=(0.15, 2.0))
    assert loss_gradient_ready([windowed], poisoned)
