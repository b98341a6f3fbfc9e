"""Integrator behavior: accuracy, statuses, dense output, determinism."""

import math

import pytest

from conftest import (
    ROBERTSON_THETA,
    ROBERTSON_Y_04,
    ROBERTSON_Y_1E5,
    decay_deck,
    mkdeck,
    robertson_deck,
    vdp_deck,
)
from odefit.model import compile_model
from odefit.solve import SolverConfig, Trajectory, integrate, stiffness_probe


@pytest.fixture(scope="module")
def decay_model():
    return compile_model(decay_deck())


@pytest.fixture(scope="module")
def robertson_model():
    return compile_model(robertson_deck())


# ---------------------------------------------------------------------------
# accuracy on reference problems


def test_decay_endpoint_against_analytic(decay_model):
    cfg = SolverConfig(method="dopri5", rtol=1e-10, atol=1e-10,
                       t0=0.0, t1=1.0)
    tr = integrate(decay_model, [1.0], [1.0], cfg)
    assert tr.status == "success"
    assert abs(tr.states[0][0] - math.exp(-1.0)) <= 1e-8


def test_decay_endpoint_trbdf2(decay_model):
    # second-order method: global error lands near 1e-8 at this rtol
    cfg = SolverConfig(method="tr_bdf2", rtol=1e-10, atol=1e-12,
                       t0=0.0, t1=1.0)
    tr = integrate(decay_model, [1.7], [1.0], cfg)
    assert tr.status == "success"
    assert abs(tr.states[0][0] - math.exp(-1.7)) <= 5e-8


def test_robertson_short_span_against_reference(robertson_model):
    cfg = SolverConfig(method="tr_bdf2", rtol=1e-8, atol=(1e-10, 1e-14, 1e-10),
                       t0=0.0, t1=0.4)
    tr = integrate(robertson_model, ROBERTSON_THETA, [0.4], cfg)
    assert tr.status == "success"
    y = tr.states[0]
    assert abs(y[0] - ROBERTSON_Y_04[0]) / ROBERTSON_Y_04[0] <= 1e-6
    assert abs(y[1] - ROBERTSON_Y_04[1]) / ROBERTSON_Y_04[1] <= 1e-5
    assert abs(y[2] - ROBERTSON_Y_04[2]) / ROBERTSON_Y_04[2] <= 1e-5


def test_robertson_long_span_against_reference(robertson_model):
    cfg = SolverConfig(method="tr_bdf2", rtol=1e-8, atol=(1e-10, 1e-14, 1e-10),
                       t0=0.0, t1=1e5, max_steps=500_000)
    tr = integrate(robertson_model, ROBERTSON_THETA, [1e5], cfg)
    assert tr.status == "success"
    y = tr.states[0]
    assert abs(y[0] - ROBERTSON_Y_1E5[0]) / ROBERTSON_Y_1E5[0] <= 1e-6
    assert abs(y[1] - ROBERTSON_Y_1E5[1]) / ROBERTSON_Y_1E5[1] <= 1e-4
    assert abs(y[2] - ROBERTSON_Y_1E5[2]) / ROBERTSON_Y_1E5[2] <= 1e-4


def test_robertson_conservation_drift(robertson_model):
    rtol = 1e-8
    grid = [10 ** (-5 + 9 * i / 99) for i in range(100)]
    cfg = SolverConfig(method="tr_bdf2", rtol=rtol, atol=(1e-10, 1e-14, 1e-10),
                       t0=0.0, t1=1e4, max_steps=500_000)
    tr = integrate(robertson_model, ROBERTSON_THETA, grid, cfg)
    assert tr.status == "success"
    drift = max(abs(sum(row) - 1.0) for row in tr.states)
    assert drift <= 100 * rtol


# ---------------------------------------------------------------------------
# failure statuses


def test_explicit_method_exhausts_steps_on_stiff_problem(robertson_model):
    cfg = SolverConfig(method="dopri5", rtol=1e-6, atol=1e-9,
                       t0=0.0, t1=1e5, max_steps=1000)
    tr = integrate(robertson_model, ROBERTSON_THETA, [1.0, 1e5], cfg)
    assert tr.status == "max_steps_exceeded"


def test_failure_fills_unreached_rows_with_nan(robertson_model):
    grid = [1e-4, 1.0, 1e5]
    cfg = SolverConfig(method="dopri5", rtol=1e-6, atol=1e-9,
                       t0=0.0, t1=1e5, max_steps=1000)
    tr = integrate(robertson_model, ROBERTSON_THETA, grid, cfg)
    assert tr.status != "success"
    assert list(tr.times) == grid
    assert all(math.isfinite(v) for v in tr.states[0])
    assert all(math.isnan(v) for v in tr.states[-1])


def test_finite_time_blowup_is_reported_not_raised():
    deck = mkdeck("blow", [("y", "0")], [("c", 0.5, 2.0, "linear")],
                  {"y": "c*(1 + y^2)"})
    m = compile_model(deck)
    cfg = SolverConfig(method="dopri5", rtol=1e-8, atol=1e-10,
                       t0=0.0, t1=2.0, max_steps=100_000)
    tr = integrate(m, [1.0], [0.5, 1.0, 1.5, 2.0], cfg)
    # tan(t) diverges at pi/2; the controller must fail cleanly
    assert tr.status in ("step_underflow", "nonfinite_state",
                         "max_steps_exceeded")
    assert abs(tr.states[0][0] - math.tan(0.5)) < 1e-6
    assert math.isnan(tr.states[-1][0])


def test_nonfinite_initial_state_reported():
    deck = mkdeck("nan0", [("y", "0")], [("c", 0.5, 2.0, "linear")],
                  {"y": "ln(y)"})
    m = compile_model(deck)
    cfg = SolverConfig(method="dopri5", rtol=1e-6, atol=1e-9, t0=0.0, t1=1.0)
    tr = integrate(m, [1.0], [1.0], cfg)
    assert tr.status == "nonfinite_state"


# ---------------------------------------------------------------------------
# grid and config validation


def test_grid_must_be_strictly_increasing(decay_model):
    cfg = SolverConfig(t0=0.0, t1=1.0)
    with pytest.raises(ValueError, match="strictly increasing"):
        integrate(decay_model, [1.0], [0.5, 0.5], cfg)
    with pytest.raises(ValueError, match="strictly increasing"):
        integrate(decay_model, [1.0], [0.7, 0.3], cfg)


def test_grid_must_lie_within_span(decay_model):
    cfg = SolverConfig(t0=0.0, t1=1.0)
    with pytest.raises(ValueError, match="outside t_span"):
        integrate(decay_model, [1.0], [0.5, 1.5], cfg)


def test_span_and_tolerance_validation(decay_model):
    with pytest.raises(ValueError, match="t1 > t0"):
        integrate(decay_model, [1.0], [1.0], SolverConfig(t0=1.0, t1=1.0))
    with pytest.raises(ValueError, match="rtol"):
        integrate(decay_model, [1.0], [0.5],
                  SolverConfig(t0=0.0, t1=1.0, rtol=0.0))
    with pytest.raises(ValueError, match="max_steps"):
        integrate(decay_model, [1.0], [0.5],
                  SolverConfig(t0=0.0, t1=1.0, max_steps=0))


def test_empty_grid_rejected(decay_model):
    with pytest.raises(ValueError, match="empty"):
        integrate(decay_model, [1.0], [], SolverConfig(t0=0.0, t1=1.0))


def test_atol_length_mismatch_rejected(robertson_model):
    cfg = SolverConfig(method="tr_bdf2", atol=(1e-8, 1e-10), t0=0.0, t1=1.0)
    with pytest.raises(ValueError, match="atol has 2 entries"):
        integrate(robertson_model, ROBERTSON_THETA, [1.0], cfg)


# ---------------------------------------------------------------------------
# convergence order (fixed-step study, controller disabled)


def _fixed_step_error(model, method, h):
    cfg = SolverConfig(method=method, rtol=1e-6, atol=1e-9, t0=0.0, t1=1.0,
                       fixed_step=h, max_steps=100_000)
    tr = integrate(model, [1.7], [1.0], cfg)
    assert tr.status == "success"
    return abs(tr.states[0][0] - math.exp(-1.7))


def test_dopri5_order_at_least_four(decay_model):
    e1 = _fixed_step_error(decay_model, "dopri5", 0.1)
    e2 = _fixed_step_error(decay_model, "dopri5", 0.05)
    assert e1 / e2 >= 2 ** 4 * 0.7


def test_trbdf2_order_at_least_two(decay_model):
    e1 = _fixed_step_error(decay_model, "tr_bdf2", 0.05)
    e2 = _fixed_step_error(decay_model, "tr_bdf2", 0.025)
    assert e1 / e2 >= 2 ** 2 * 0.7


# ---------------------------------------------------------------------------
# dense output and determinism


@pytest.mark.parametrize("method", ["dopri5", "tr_bdf2"])
def test_output_grid_never_changes_the_solution(decay_model, method):
    cfg = SolverConfig(method=method, rtol=1e-8, atol=1e-10, t0=0.0, t1=2.0)
    sparse = integrate(decay_model, [1.7], [2.0], cfg)
    dense_grid = [0.01 * (i + 1) for i in range(200)]
    dense = integrate(decay_model, [1.7], dense_grid, cfg)
    assert sparse.status == dense.status == "success"
    # the step sequence is grid-independent, so the shared endpoint
    # sample must agree bit for bit
    assert dense.states[-1][0] == sparse.states[0][0]
    assert dense.stats.accepted == sparse.stats.accepted


@pytest.mark.parametrize("method", ["dopri5", "tr_bdf2"])
def test_repeat_runs_bitwise_identical(robertson_model, method):
    cfg = SolverConfig(method=method, rtol=1e-6, atol=(1e-8, 1e-11, 1e-8),
                       t0=0.0, t1=0.4, max_steps=200_000)
    grid = [0.05 * (i + 1) for i in range(8)]
    a = integrate(robertson_model, ROBERTSON_THETA, grid, cfg)
    b = integrate(robertson_model, ROBERTSON_THETA, grid, cfg)
    assert a.status == b.status == "success"
    assert a.states == b.states
    assert a.stats.accepted == b.stats.accepted
    assert a.stats.rhs_evals == b.stats.rhs_evals


def test_interpolant_accuracy_between_steps(decay_model):
    cfg = SolverConfig(method="dopri5", rtol=1e-9, atol=1e-11, t0=0.0, t1=2.0)
    grid = [0.001 + 1.999 * i / 499 for i in range(500)]
    tr = integrate(decay_model, [1.7], grid, cfg)
    assert tr.status == "success"
    worst = max(abs(v[0] - math.exp(-1.7 * t)) for t, v in
                zip(tr.times, tr.states))
    assert worst <= 1e-7


def test_trajectory_to_csv_round_trip(decay_model):
    cfg = SolverConfig(method="dopri5", rtol=1e-8, atol=1e-10, t0=0.0, t1=1.0)
    tr = integrate(decay_model, [1.7], [0.25, 0.5, 1.0], cfg)
    text = tr.to_csv(["y"], time_name="t")
    lines = text.strip().split("\n")
    assert lines[0] == "t,y"
    assert len(lines) == 4
    t_back, y_back = (float(v) for v in lines[2].split(","))
    assert t_back == 0.5
    assert y_back == tr.states[1][0]


def test_stats_populated(robertson_model):
    cfg = SolverConfig(method="tr_bdf2", rtol=1e-6, atol=(1e-8, 1e-11, 1e-8),
                       t0=0.0, t1=100.0, max_steps=200_000)
    tr = integrate(robertson_model, ROBERTSON_THETA, [100.0], cfg)
    assert tr.status == "success"
    assert tr.stats.accepted > 0
    assert tr.stats.rhs_evals > tr.stats.accepted
    assert tr.stats.jacobian_evals > 0


def test_fixed_step_disables_controller(decay_model):
    cfg = SolverConfig(method="dopri5", rtol=1e-6, atol=1e-9, t0=0.0, t1=1.0,
                       fixed_step=0.125)
    tr = integrate(decay_model, [1.7], [1.0], cfg)
    assert tr.status == "success"
    assert tr.stats.accepted == 8
    assert tr.stats.rejected == 0


# ---------------------------------------------------------------------------
# stiffness probe


def test_probe_robertson_suggests_implicit(robertson_model):
    cfg = SolverConfig(method="tr_bdf2", t0=0.0, t1=1e5)
    assert stiffness_probe(robertson_model, ROBERTSON_THETA,
                           cfg) == "suggests_implicit"


def test_probe_decay_suggests_explicit(decay_model):
    cfg = SolverConfig(t0=0.0, t1=1.0)
    assert stiffness_probe(decay_model, [1.7], cfg) == "suggests_explicit"


def test_probe_vanderpol_suggests_implicit():
    m = compile_model(vdp_deck())
    cfg = SolverConfig(t0=0.0, t1=40.0)
    assert stiffness_probe(m, [10.0], cfg) == "suggests_implicit"


def test_trajectory_type_shape(decay_model):
    cfg = SolverConfig(method="dopri5", rtol=1e-8, atol=1e-10, t0=0.0, t1=1.0)
    tr = integrate(decay_model, [1.7], [0.5, 1.0], cfg)
    assert isinstance(tr, Trajectory)
    assert len(tr.times) == len(tr.states) == 2
    assert all(len(row) == 1 for row in tr.states)
