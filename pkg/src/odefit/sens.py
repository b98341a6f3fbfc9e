"""Forward sensitivities and exact loss gradients.

S = dy/dtheta obeys the linearized dynamics Sdot = (df/dy) S + df/dtheta
with S(t0) = dy0/dtheta.  Both steppers keep the y step sequence
bit-identical to the plain solve, so the loss and its gradient describe
the same discrete trajectory: dopri5 integrates the augmented system
with the S columns excluded from the accept test, and TR-BDF2 re-runs
the production stepper while solving the differentiated stage equations
exactly on each accepted step (staggered direct).  Gradients are
reported in the internal scaled coordinates the optimizers work in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from odefit.coords import chain, from_internal, to_internal
from odefit.loss import evaluate_terms, loss_value, restricted_times
from odefit.solve import (
    SolveStats,
    SolverConfig,
    Trajectory,
    _CG,
    _CN,
    _D,
    _ERR1,
    _ERR2,
    _ERR3,
    _GAMMA,
    _GridEmitter,
    _JAC_MAX_AGE,
    _MAX_NONFINITE_HALVINGS,
    _StepController,
    _all_finite,
    _atol_vector,
    _check_grid,
    _initial_step,
    _newton,
    _run_dopri5,
    lu_factor,
    lu_solve,
)

__all__ = [
    "SensitivitySolution",
    "integrate_with_sensitivities",
    "loss_and_gradient",
    "fd_gradient",
]

_INF = float("inf")


@dataclass
class SensitivitySolution:
    """Trajectory plus S sampled on the same grid.

    sensitivities[i][j][k] = dy_j/dtheta_k at output time i.  On a
    non-success status unreached rows are nan, matching Trajectory.
    """

    trajectory: Trajectory
    sensitivities: list
    status: str


def integrate_with_sensitivities(model, theta, output_times,
                                 config: SolverConfig) -> SensitivitySolution:
    """Integrate y and S = dy/dtheta together.

    S rides along outside the step-accept test, so the y samples (and
    the step sequence behind them) match integrate() bit for bit under
    the same config.
    """
    _check_grid(output_times, config)
    if config.method == "dopri5":
        return _sens_dopri5(model, theta, output_times, config)
    if config.method == "tr_bdf2":
        return _sens_trbdf2(model, theta, output_times, config)
    raise ValueError(f"unknown method {config.method!r}")


# ---------------------------------------------------------------------------
# dopri5: augmented system

class _AugmentedModel:
    """(y, S) system with S appended row-major: S[i][k] at n + i*m + k."""

    def __init__(self, base):
        self.base = base
        self.n_states = base.n_states * (1 + base.n_params)

    def initial_state(self, theta):
        z = list(self.base.initial_state(theta))
        for row in self.base.initial_state_jac(theta):
            z.extend(row)
        return z

    def rhs(self, t, z, theta):
        base = self.base
        n = base.n_states
        npar = base.n_params
        y = z[:n]
        out = list(base.rhs(t, y, theta))
        jac = base.jac_y(t, y, theta)
        bth = base.jac_theta(t, y, theta)
        for i in range(n):
            ji = jac[i]
            bi = bth[i]
            for k in range(npar):
                acc = bi[k]
                for j in range(n):
                    acc += ji[j] * z[n + j * npar + k]
                out.append(acc)
        return out


def _split(traj: Trajectory, n: int, npar: int) -> SensitivitySolution:
    states = [row[:n] for row in traj.states]
    sens = [
        [[row[n + i * npar + k] for k in range(npar)] for i in range(n)]
        for row in traj.states
    ]
    plain = Trajectory(traj.times, states, traj.status, traj.stats)
    return SensitivitySolution(plain, sens, traj.status)


def _sens_dopri5(model, theta, output_times, config) -> SensitivitySolution:
    n = model.n_states
    npar = model.n_params
    atol = _atol_vector(config.atol, n)
    cfg = replace(config, atol=atol + [_INF] * (n * npar), controlled=n)
    traj = _run_dopri5(_AugmentedModel(model), theta, output_times, cfg)
    return _split(traj, n, npar)


# ---------------------------------------------------------------------------
# TR-BDF2: staggered direct

def _flatten(cols, n, npar):
    flat = [0.0] * (n * npar)
    for k in range(npar):
        col = cols[k]
        for i in range(n):
            flat[i * npar + k] = col[i]
    return flat


def _sens_trbdf2(model, theta, output_times, cfg) -> SensitivitySolution:
    """TR-BDF2 with staggered-direct sensitivities.

    The y update mirrors the production stepper exactly (same chord
    Newton on a possibly aged Jacobian, same controller and
    interpolant).  On each accepted step the two converged stage maps

        yg   = y + dh*(fn + f(t_g, yg))              [TR]
        ynew = CG*yg - CN*y + dh*f(t_new, ynew)      [BDF2]

    are differentiated with respect to theta and solved exactly for the
    stage sensitivities, one fresh LU per stage shared across parameter
    columns.  The step-end Jacobian pair is reused as the next step's
    start pair, so each accepted step costs two jac_y and two jac_theta
    evaluations beyond the plain solve.
    """
    n = model.n_states
    npar = model.n_params
    nm = n * npar
    stats = SolveStats()
    rhs = model.rhs
    jac_y = model.jac_y
    jac_theta = model.jac_theta

    atol = _atol_vector(cfg.atol, n)
    rtol = cfg.rtol
    emitter = _GridEmitter(output_times, n + nm)

    def finish(status):
        return _split(emitter.finish(status, stats), n, npar)

    t = cfg.t0
    t_end = cfg.t1
    y = [float(v) for v in model.initial_state(theta)]
    if not _all_finite(y):
        return finish("nonfinite_state")
    s0 = model.initial_state_jac(theta)
    s_cols = [[s0[i][k] for i in range(n)] for k in range(npar)]
    s_flat = _flatten(s_cols, n, npar)
    if not _all_finite(s_flat):
        return finish("nonfinite_state")
    emitter.emit_exact(t, y + s_flat)
    if emitter.done():
        return finish("success")

    fn = rhs(t, y, theta)
    stats.rhs_evals += 1
    if not _all_finite(fn):
        return finish("nonfinite_state")

    jn = bn = None
    if npar:
        jn = jac_y(t, y, theta)
        bn = jac_theta(t, y, theta)
        stats.jacobian_evals += 2
        finite = all(_all_finite(row) for row in jn) and all(
            _all_finite(row) for row in bn
        )
        if not finite:
            return finish("nonfinite_state")

    sc0 = [atol[i] + rtol * abs(y[i]) for i in range(n)]
    fixed = cfg.fixed_step
    if fixed is not None:
        h = fixed
    elif cfg.initial_step is not None:
        h = cfg.initial_step
    else:
        h = _initial_step(rhs, t, y, fn, t_end, sc0, 3, theta)
        stats.rhs_evals += 1
    ctrl = _StepController(cfg, 3)
    nf_halvings = 0
    steps = 0
    rng = range(n)
    jac = None
    jac_age = 0

    def reject_halve():
        nonlocal h, nf_halvings
        nf_halvings += 1
        stats.rejected += 1
        h *= 0.5
        return nf_halvings > _MAX_NONFINITE_HALVINGS

    while t < t_end:
        if steps >= cfg.max_steps:
            return finish("max_steps_exceeded")
        steps += 1
        if h < 16.0 * 2.220446049250313e-16 * max(abs(t), 1.0):
            return finish("step_underflow")
        if t + h > t_end:
            h = t_end - t

        if jac is None or jac_age >= _JAC_MAX_AGE:
            jac = jac_y(t, y, theta)
            stats.jacobian_evals += 1
            jac_age = 0
            if not all(_all_finite(row) for row in jac):
                jac = None
                if reject_halve():
                    return finish("nonfinite_state")
                continue

        dh = _D * h
        m = [
            [(1.0 if i == j else 0.0) - dh * jac[i][j] for j in rng]
            for i in rng
        ]
        fac = lu_factor(m)
        if fac is None:
            if jac_age > 0:
                jac = None
                continue
            if reject_halve():
                return finish("nonfinite_state")
            continue
        lu, piv = fac

        sc = [atol[i] + rtol * abs(y[i]) for i in rng]

        t_g = t + _GAMMA * h
        fixed1 = [y[i] + dh * fn[i] for i in rng]
        z0 = [y[i] + _GAMMA * h * fn[i] for i in rng]
        yg = _newton(rhs, theta, t_g, z0, fixed1, dh, lu, piv, sc, n, stats)
        ynew = None
        if yg is not None:
            t_new = t + h
            fixed2 = [_CG * yg[i] - _CN * y[i] for i in rng]
            inv_g = 1.0 / _GAMMA
            z0 = [y[i] + inv_g * (yg[i] - y[i]) for i in rng]
            ynew = _newton(rhs, theta, t_new, z0, fixed2, dh, lu, piv, sc, n, stats)
        if ynew is None:
            if jac_age > 0:
                jac = None
                stats.rejected += 1
                continue
            if reject_halve():
                return finish("nonfinite_state")
            continue
        nf_halvings = 0
        inv_dh = 1.0 / dh
        fg = [(yg[i] - fixed1[i]) * inv_dh for i in rng]
        fnew = [(ynew[i] - fixed2[i]) * inv_dh for i in rng]

        if fixed is None:
            est = [
                h * (_ERR1 * fn[i] + _ERR2 * fg[i] + _ERR3 * fnew[i])
                for i in rng
            ]
            est = lu_solve(lu, piv, est)
            err = 0.0
            for i in rng:
                q = est[i] / (atol[i] + rtol * max(abs(y[i]), abs(ynew[i])))
                err += q * q
            err = math.sqrt(err / n)
        else:
            err = 0.0

        if err <= 1.0:
            s_flat_new = s_flat
            snew_cols = s_cols
            sdot_old = sdot_new = None
            if npar:
                jg = jac_y(t_g, yg, theta)
                bg = jac_theta(t_g, yg, theta)
                jnw = jac_y(t_new, ynew, theta)
                bnw = jac_theta(t_new, ynew, theta)
                stats.jacobian_evals += 4
                m1 = [
                    [(1.0 if i == j else 0.0) - dh * jg[i][j] for j in rng]
                    for i in rng
                ]
                fac1 = lu_factor(m1)
                m2 = [
                    [(1.0 if i == j else 0.0) - dh * jnw[i][j] for j in rng]
                    for i in rng
                ]
                fac2 = lu_factor(m2)
                if fac1 is None or fac2 is None:
                    return finish("nonfinite_state")
                lu1, piv1 = fac1
                lu2, piv2 = fac2
                sdot_old = []
                snew_cols = []
                sdot_new = []
                for k in range(npar):
                    col = s_cols[k]
                    # TR:   (I - dh*Jg) Sg = Sn + dh*(Jn Sn + Bn + Bg)
                    # BDF2: (I - dh*Jn1) Sn1 = CG*Sg - CN*Sn + dh*Bn1
                    sd = [
                        sum(jn[i][j] * col[j] for j in rng) + bn[i][k]
                        for i in rng
                    ]
                    sdot_old.append(sd)
                    b1 = [col[i] + dh * (sd[i] + bg[i][k]) for i in rng]
                    sg = lu_solve(lu1, piv1, b1)
                    b2 = [
                        _CG * sg[i] - _CN * col[i] + dh * bnw[i][k]
                        for i in rng
                    ]
                    snw = lu_solve(lu2, piv2, b2)
                    snew_cols.append(snw)
                    sdot_new.append([
                        sum(jnw[i][j] * snw[j] for j in rng) + bnw[i][k]
                        for i in rng
                    ])
                s_flat_new = _flatten(snew_cols, n, npar)
                finite = _all_finite(s_flat_new) and all(
                    _all_finite(c) for c in sdot_old
                ) and all(_all_finite(c) for c in sdot_new)
                if not finite:
                    return finish("nonfinite_state")
            t_old = t
            y_old = y
            if not emitter.done():
                h_step = h
                yc_old = y_old + s_flat
                yc_new = ynew + s_flat_new
                fc_old = fn + (_flatten(sdot_old, n, npar) if npar else [])
                fc_new = fnew + (_flatten(sdot_new, n, npar) if npar else [])
                nt = n + nm

                def interp(tq, t_old=t_old, h_step=h_step, y_old=yc_old,
                           ynew=yc_new, fn=fc_old, fnew=fc_new):
                    s = (tq - t_old) / h_step
                    s2 = s * s
                    s3 = s2 * s
                    a = 2.0 * s3 - 3.0 * s2 + 1.0
                    b = (s3 - 2.0 * s2 + s) * h_step
                    c = -2.0 * s3 + 3.0 * s2
                    d = (s3 - s2) * h_step
                    return [
                        a * y_old[i] + b * fn[i] + c * ynew[i] + d * fnew[i]
                        for i in range(nt)
                    ]

                emitter.emit_range(t_old, t_new, interp, yc_new)
            t = t_new
            y = ynew
            fn = fnew
            if npar:
                s_cols = snew_cols
                s_flat = s_flat_new
                jn = jnw
                bn = bnw
            jac_age += 1
            stats.accepted += 1
            if fixed is None:
                h *= ctrl.accept_factor(err)
            if emitter.done():
                return finish("success")
        else:
            stats.rejected += 1
            h *= ctrl.reject_factor(err)

    return finish("success" if emitter.done() else "max_steps_exceeded")


# ---------------------------------------------------------------------------
# loss gradient

def loss_and_gradient(model, theta, data, terms, config: SolverConfig):
    """Objective value and its gradient in internal coordinates.

    The value is bit-equal to loss_value at the same theta and config
    (the sensitivity run reproduces the plain solve's samples exactly).
    Returns (+inf, zero vector) when the solve fails or a residual is
    non-finite.  Models without a parameter box get the gradient in
    natural coordinates.
    """
    npar = model.n_params
    zeros = [0.0] * npar
    times = restricted_times(data, terms)
    sol = integrate_with_sensitivities(model, theta, times, config)
    if sol.status != "success":
        return _INF, zeros
    traj = sol.trajectory
    value, sp, rp = evaluate_terms(model, theta, traj.times, traj.states,
                                   data, terms, want_partials=True)
    if not (-_INF < value < _INF):
        return _INF, zeros

    sens = sol.sensitivities
    n = model.n_states
    grad = [0.0] * npar
    for idx in range(len(traj.times)):
        s_i = sens[idx]
        sp_row = sp[idx]
        for j in range(n):
            g = sp_row[j]
            if g != 0.0:
                s_j = s_i[j]
                for k in range(npar):
                    grad[k] += g * s_j[k]
        rp_row = rp[idx]
        if any(rp_row):
            # rate signals: df_j/dtheta_k along the solution manifold
            jy = model.jac_y(traj.times[idx], traj.states[idx], theta)
            jt = model.jac_theta(traj.times[idx], traj.states[idx], theta)
            for j in range(n):
                g = rp_row[j]
                if g != 0.0:
                    jyj = jy[j]
                    jtj = jt[j]
                    for k in range(npar):
                        acc = jtj[k]
                        for l in range(n):
                            acc += jyj[l] * s_i[l][k]
                        grad[k] += g * acc

    space = model.param_space
    if space is not None:
        u = to_internal(space, theta)
        ch = chain(space, u)
        grad = [grad[k] * ch[k] for k in range(npar)]
    return value, grad


def fd_gradient(model, theta, data, terms, config: SolverConfig, h_rel):
    """Central-difference gradient oracle in internal coordinates.

    Each coordinate is displaced by +-h_rel in the internal unit box
    (natural units for models without a box).  Truncation error is
    O(h_rel^2) and solver noise contributes O(rtol / h_rel), so tight
    tolerances with h_rel near 1e-5 balance the two.
    """
    if not h_rel > 0.0:
        raise ValueError("step must be positive")
    npar = model.n_params
    space = model.param_space
    if space is not None:
        u0 = to_internal(space, theta)
    else:
        u0 = [float(v) for v in theta]
    grad = []
    for k in range(npar):
        up = list(u0)
        um = list(u0)
        up[k] += h_rel
        um[k] -= h_rel
        if space is not None:
            tp = from_internal(space, up)
            tm = from_internal(space, um)
        else:
            tp, tm = up, um
        fp = loss_value(model, tp, data, terms, config)
        fm = loss_value(model, tm, data, terms, config)
        grad.append((fp - fm) / (2.0 * h_rel))
    return grad
