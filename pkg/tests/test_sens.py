"""Forward sensitivities and loss gradients against analytic and FD oracles."""

import math

import pytest

from conftest import (
    decay_csv_text,
    decay_deck,
    decay_deck_xml,
    mkdeck,
    vdp_deck,
)
from odefit.deck import parse_deck
from odefit.loss import LossTerm, bind_dataset
from odefit.model import compile_model
from odefit.sens import (
    SensitivitySolution,
    fd_gradient,
    integrate_with_sensitivities,
    loss_and_gradient,
)
from odefit.solve import SolverConfig, integrate


@pytest.fixture(scope="module")
def decay_model():
    return compile_model(decay_deck())


@pytest.fixture(scope="module")
def decay_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("decay")
    (d / "decay.csv").write_text(decay_csv_text(k=1.7), encoding="utf-8")
    return bind_dataset(parse_deck(decay_deck_xml()), base_dir=d)


# ---------------------------------------------------------------------------
# sensitivity matrices


@pytest.mark.parametrize("method", ["dopri5", "tr_bdf2"])
def test_decay_sensitivity_matches_analytic(decay_model, method):
    # y = e^{-kt}, dy/dk = -t e^{-kt}; params map through internal
    # coordinates is not involved here, S is in natural units
    k = 1.7
    times = [0.25, 0.5, 1.0, 1.5, 2.0]
    cfg = SolverConfig(method=method, rtol=1e-10, atol=1e-12, t0=0.0, t1=2.0)
    sol = integrate_with_sensitivities(decay_model, [k], times, cfg)
    assert sol.status == "success"
    for t, s_row in zip(times, sol.sensitivities):
        want = -t * math.exp(-k * t)
        assert abs(s_row[0][0] - want) <= 1e-6 * max(1.0, abs(want))


def test_sensitivity_initial_rows_are_zero(decay_model):
    cfg = SolverConfig(method="dopri5", rtol=1e-8, atol=1e-10,
                       t0=0.0, t1=1.0)
    sol = integrate_with_sensitivities(decay_model, [1.7], [1e-12, 1.0], cfg)
    # constant initial conditions: S(t0) = 0, so the first sample taken
    # essentially at t0 stays at the origin
    assert abs(sol.sensitivities[0][0][0]) < 1e-10


def test_parametric_initial_condition_seeds_sensitivity():
    deck = mkdeck("ic", [("y", "2*k")], [("k", 0.5, 5.0, "linear")],
                  {"y": "-k*y"})
    m = compile_model(deck)
    k = 1.3
    cfg = SolverConfig(method="dopri5", rtol=1e-10, atol=1e-12,
                       t0=0.0, t1=1.0)
    sol = integrate_with_sensitivities(m, [k], [0.5, 1.0], cfg)
    # y = 2k e^{-kt}, dy/dk = (2 - 2kt) e^{-kt}
    for t, s_row in zip([0.5, 1.0], sol.sensitivities):
        want = (2.0 - 2.0 * k * t) * math.exp(-k * t)
        assert s_row[0][0] == pytest.approx(want, rel=1e-7)


@pytest.mark.parametrize("method", ["dopri5", "tr_bdf2"])
def test_states_bit_equal_to_plain_solve(decay_model, method):
    cfg = SolverConfig(method=method, rtol=1e-8, atol=1e-10, t0=0.0, t1=2.0)
    times = [0.5, 1.0, 2.0]
    plain = integrate(decay_model, [1.7], times, cfg)
    sol = integrate_with_sensitivities(decay_model, [1.7], times, cfg)
    assert sol.trajectory.states == plain.states
    assert sol.trajectory.stats.accepted == plain.stats.accepted


def test_vdp_states_bit_equal_and_sens_cross_method():
    m = compile_model(vdp_deck())
    times = [1.0, 2.5, 5.0]
    for method in ("dopri5", "tr_bdf2"):
        cfg = SolverConfig(method=method, rtol=1e-9, atol=1e-11,
                           t0=0.0, t1=5.0, max_steps=200_000)
        plain = integrate(m, [4.0], times, cfg)
        sol = integrate_with_sensitivities(m, [4.0], times, cfg)
        assert sol.trajectory.states == plain.states
    a = integrate_with_sensitivities(
        m, [4.0], times, SolverConfig(method="dopri5", rtol=1e-10,
                                      atol=1e-12, t0=0.0, t1=5.0,
                                      max_steps=400_000))
    b = integrate_with_sensitivities(
        m, [4.0], times, SolverConfig(method="tr_bdf2", rtol=1e-10,
                                      atol=1e-12, t0=0.0, t1=5.0,
                                      max_steps=400_000))
    for ra, rb in zip(a.sensitivities, b.sensitivities):
        for j in range(2):
            assert ra[j][0] == pytest.approx(rb[j][0], rel=2e-4, abs=1e-8)


def test_vdp_sensitivity_against_fd_of_solve():
    m = compile_model(vdp_deck())
    mu = 4.0
    times = [2.0, 4.0]
    cfg = SolverConfig(method="dopri5", rtol=1e-10, atol=1e-12,
                       t0=0.0, t1=4.0, max_steps=400_000)
    sol = integrate_with_sensitivities(m, [mu], times, cfg)
    h = 1e-5 * mu
    hi = integrate(m, [mu + h], times, cfg)
    lo = integrate(m, [mu - h], times, cfg)
    for i in range(len(times)):
        for j in range(2):
            fd = (hi.states[i][j] - lo.states[i][j]) / (2 * h)
            assert sol.sensitivities[i][j][0] == pytest.approx(
                fd, rel=1e-4, abs=1e-7)


def test_sensitivity_failure_status_propagates(decay_model):
    cfg = SolverConfig(method="dopri5", rtol=1e-8, atol=1e-10,
                       t0=0.0, t1=2.0, max_steps=2)
    sol = integrate_with_sensitivities(decay_model, [1.7], [2.0], cfg)
    assert isinstance(sol, SensitivitySolution)
    assert sol.status != "success"
    assert math.isnan(sol.trajectory.states[-1][0])


# ---------------------------------------------------------------------------
# loss gradients


def _terms():
    return [LossTerm(signal="y")]


def test_gradient_matches_fd_on_decay(decay_model, decay_data):
    cfg = SolverConfig(method="dopri5", rtol=1e-10, atol=1e-12,
                       t0=0.0, t1=2.0)
    value, grad = loss_and_gradient(decay_model, [2.2], decay_data,
                                    _terms(), cfg)
    fd = fd_gradient(decay_model, [2.2], decay_data, _terms(), cfg,
                     h_rel=1e-5)
    assert math.isfinite(value)
    assert grad[0] == pytest.approx(fd[0], rel=1e-6)


def test_gradient_value_bit_equal_to_loss_value(decay_model, decay_data):
    from odefit.loss import loss_value

    cfg = SolverConfig(method="dopri5", rtol=1e-8, atol=1e-10,
                       t0=0.0, t1=2.0)
    value, _ = loss_and_gradient(decay_model, [2.2], decay_data,
                                 _terms(), cfg)
    assert value == loss_value(decay_model, [2.2], decay_data, _terms(), cfg)


def test_gradient_is_internal_coordinates(decay_model, decay_data):
    # d loss / du must fold in the box width (chain factor 4.5)
    cfg = SolverConfig(method="dopri5", rtol=1e-10, atol=1e-12,
                       t0=0.0, t1=2.0)
    space = decay_model.param_space
    assert space.upper[0] - space.lower[0] == 4.5
    _, grad = loss_and_gradient(decay_model, [2.2], decay_data,
                                _terms(), cfg)
    # forward difference in natural units for the unscaled slope
    h = 1e-6
    from odefit.loss import loss_value

    f_plus = loss_value(decay_model, [2.2 + h], decay_data, _terms(), cfg)
    f_minus = loss_value(decay_model, [2.2 - h], decay_data, _terms(), cfg)
    natural = (f_plus - f_minus) / (2 * h)
    assert grad[0] == pytest.approx(natural * 4.5, rel=1e-4)


def test_gradient_with_log_scaled_parameter(tmp_path):
    deck = mkdeck("logk", [("y", "1")], [("k", 1e-2, 1e2, "log10")],
                  {"y": "-k*y"})
    m = compile_model(deck)
    (tmp_path / "decay.csv").write_text(decay_csv_text(k=1.7),
                                        encoding="utf-8")
    data = bind_dataset(parse_deck(decay_deck_xml()), base_dir=tmp_path)
    cfg = SolverConfig(method="dopri5", rtol=1e-10, atol=1e-12,
                       t0=0.0, t1=2.0)
    _, grad = loss_and_gradient(m, [2.2], data, _terms(), cfg)
    fd = fd_gradient(m, [2.2], data, _terms(), cfg, h_rel=1e-6)
    assert grad[0] == pytest.approx(fd[0], rel=1e-5)


def test_gradient_of_rate_terms(tmp_path):
    k = 1.7
    times = [0.1 * (i + 1) for i in range(20)]
    rows = ["t,y,dy"]
    for t in times:
        y = math.exp(-k * t)
        rows.append(f"{t!r},{y!r},{(-k * y)!r}")
    (tmp_path / "decay.csv").write_text("\n".join(rows) + "\n",
                                        encoding="utf-8")
    xml = decay_deck_xml().replace(
        '<bind column="y" signal="y"/>',
        '<bind column="y" signal="y"/><bind column="dy" signal="rate(y)"/>'
    ).replace('rate_source="finite_difference"', 'rate_source="column"')
    data = bind_dataset(parse_deck(xml), base_dir=tmp_path)
    m = compile_model(decay_deck())
    terms = [LossTerm(signal="rate(y)")]
    cfg = SolverConfig(method="dopri5", rtol=1e-10, atol=1e-12,
                       t0=0.0, t1=2.0)
    _, grad = loss_and_gradient(m, [2.0], data, terms, cfg)
    fd = fd_gradient(m, [2.0], data, terms, cfg, h_rel=1e-5)
    assert grad[0] == pytest.approx(fd[0], rel=1e-5)


def test_gradient_of_log10_rate_terms(tmp_path):
    # the arc objective shape: log10 of a rate signal
    k = 1.7
    times = [0.1 * (i + 1) for i in range(20)]
    rows = ["t,y,dy"]
    for t in times:
        y = math.exp(-k * t)
        rows.append(f"{t!r},{y!r},{(k * y)!r}")
    (tmp_path / "decay.csv").write_text("\n".join(rows) + "\n",
                                        encoding="utf-8")
    xml = decay_deck_xml().replace(
        '<bind column="y" signal="y"/>',
        '<bind column="y" signal="y"/><bind column="dy" signal="rate(y)"/>'
    ).replace('rate_source="finite_difference"', 'rate_source="column"')
    data = bind_dataset(parse_deck(xml), base_dir=tmp_path)
    growth = mkdeck("growth", [("y", "1")], [("k", 0.5, 5.0, "linear")],
                    {"y": "k*y"})
    m = compile_model(growth)
    terms = [LossTerm(signal="rate(y)", transform="log10")]
    cfg = SolverConfig(method="dopri5", rtol=1e-10, atol=1e-12,
                       t0=0.0, t1=2.0)
    _, grad = loss_and_gradient(m, [1.3], data, terms, cfg)
    fd = fd_gradient(m, [1.3], data, terms, cfg, h_rel=1e-5)
    assert grad[0] == pytest.approx(fd[0], rel=1e-5)


def test_fd_gradient_is_second_order(decay_model, decay_data):
    cfg = SolverConfig(method="dopri5", rtol=1e-12, atol=1e-14,
                       t0=0.0, t1=2.0)
    _, exact = loss_and_gradient(decay_model, [2.2], decay_data,
                                 _terms(), cfg)
    e1 = abs(fd_gradient(decay_model, [2.2], decay_data, _terms(), cfg,
                         h_rel=4e-3)[0] - exact[0])
    e2 = abs(fd_gradient(decay_model, [2.2], decay_data, _terms(), cfg,
                         h_rel=2e-3)[0] - exact[0])
    assert e1 / e2 == pytest.approx(4.0, rel=0.35)


def test_loose_solver_breaks_fd_agreement(decay_model, decay_data):
    # the dual-route check needs tight tolerances: at rtol 1e-4 the
    # solver noise floor overwhelms a small central-difference step
    loose = SolverConfig(method="dopri5", rtol=1e-4, atol=1e-5,
                         t0=0.0, t1=2.0)
    tight = SolverConfig(method="dopri5", rtol=1e-12, atol=1e-14,
                         t0=0.0, t1=2.0)
    _, exact = loss_and_gradient(decay_model, [2.2], decay_data,
                                 _terms(), tight)
    fd_loose = fd_gradient(decay_model, [2.2], decay_data, _terms(),
                           loose, h_rel=1e-7)
    fd_tight = fd_gradient(decay_model, [2.2], decay_data, _terms(),
                           tight, h_rel=1e-7)
    err_loose = abs(fd_loose[0] - exact[0]) / abs(exact[0])
    err_tight = abs(fd_tight[0] - exact[0]) / abs(exact[0])
    assert err_tight < 1e-6
    assert err_loose > 10 * err_tight


def test_gradient_failure_sentinel(decay_model, decay_data):
    bad = SolverConfig(method="dopri5", rtol=1e-8, atol=1e-10,
                       t0=0.0, t1=2.0, max_steps=2)
    value, grad = loss_and_gradient(decay_model, [2.2], decay_data,
                                    _terms(), bad)
    assert value == math.inf
    assert grad == [0.0]


def test_fd_gradient_rejects_zero_step(decay_model, decay_data):
    cfg = SolverConfig(method="dopri5", rtol=1e-8, atol=1e-10,
                       t0=0.0, t1=2.0)
    with pytest.raises(ValueError, match="positive"):
        fd_gradient(decay_model, [2.2], decay_data, _terms(), cfg, h_rel=0.0)
