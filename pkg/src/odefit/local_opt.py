"""L-BFGS refinement of the swarm incumbent.

Two-loop recursion over a bounded memory of curvature pairs, Armijo
backtracking (c = 1e-4, contraction 0.5, at most 30 backtracks), box
handling by projection with a projected-gradient convergence test.
Curvature pairs are kept only when s.y > 1e-10.  The engine accepts any
(value, gradient) callable; refine binds it to the deck loss in
internal coordinates, and two_stage_fit chains it after the swarm
search.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from odefit.coords import clip_unit, from_internal, to_internal
from odefit.global_opt import run_pso
from odefit.loss import loss_gradient_ready
from odefit.sens import loss_and_gradient
from odefit.solve import Trajectory, integrate

__all__ = [
    "FitResult",
    "minimize_lbfgs",
    "refine",
    "two_stage_fit",
]

_INF = float("inf")

_ARMIJO_C = 1e-4
_CONTRACTION = 0.5
_MAX_BACKTRACKS = 30
_CURVATURE_MIN = 1e-10
_STALL_ITERS = 5


def _dot(a, b) -> float:
    return sum(x * y for x, y in zip(a, b))


def _project(x, lower, upper) -> list:
    if lower is None:
        return list(x)
    return [min(upper[j], max(lower[j], x[j])) for j in range(len(x))]


def _projected_gradient(x, g, lower, upper) -> list:
    """Gradient with components frozen where a bound blocks descent."""
    if lower is None:
        return list(g)
    out = []
    for j in range(len(x)):
        gj = g[j]
        if x[j] <= lower[j] and gj > 0.0:
            gj = 0.0
        elif x[j] >= upper[j] and gj < 0.0:
            gj = 0.0
        out.append(gj)
    return out


def _two_loop(g, mem) -> list:
    """L-BFGS direction -H*g from the (s, y, 1/s.y) memory.

    With no memory yet the direction is steepest descent normalized to
    unit length, so the line search owns the step size.  An unscaled -g
    near a flat optimum proposes steps of length |g| and the refiner
    creeps instead of letting Armijo backtrack from a real trial.
    """
    if not mem:
        gn = math.sqrt(_dot(g, g))
        if gn == 0.0:
            return [0.0 for _ in g]
        return [-v / gn for v in g]
    q = list(g)
    n = len(q)
    alphas = []
    for s, yv, rho in reversed(mem):
        a = rho * _dot(s, q)
        alphas.append(a)
        for j in range(n):
            q[j] -= a * yv[j]
    s, yv, _ = mem[-1]
    gamma = _dot(s, yv) / _dot(yv, yv)
    r = [gamma * v for v in q]
    for (s, yv, rho), a in zip(mem, reversed(alphas)):
        b = rho * _dot(yv, r)
        for j in range(n):
            r[j] += (a - b) * s[j]
    return [-v for v in r]


def minimize_lbfgs(fun: Callable, x0, max_iterations: int = 100,
                   memory: int = 10, grad_tolerance: float = 1e-8,
                   loss_rel_tolerance: float = 1e-10,
                   lower=None, upper=None):
    """Minimize fun(x) -> (value, gradient), optionally inside a box.

    Returns (best_x, history).  History rows are dicts with iteration,
    loss, grad_norm, step_length, slope and status; slope is the
    g.(x_new - x_old) term of the accepted Armijo test, so each
    accepted row k replays as

        loss_k <= loss_{k-1} + 1e-4 * slope_k

    The final row carries the termination status (converged_grad,
    converged_loss, max_iterations or line_search_failed) and the
    best-seen loss.  Non-finite loss at x0 raises; later non-finite
    trials just fail the Armijo test and backtrack.
    """
    x = _project([float(v) for v in x0], lower, upper)
    f, g = fun(x)
    if not (-_INF < f < _INF):
        raise ValueError("refinement requires feasible start")
    g = list(g)
    n = len(x)
    pg = _projected_gradient(x, g, lower, upper)
    gn = math.sqrt(_dot(pg, pg))
    history = [{
        "iteration": 0, "loss": f, "grad_norm": gn,
        "step_length": 0.0, "slope": 0.0, "status": "start",
    }]
    best_x = list(x)
    best_f = f
    mem: list = []
    stall = 0
    status = "max_iterations"
    it = 0

    for it in range(1, max_iterations + 1):
        pg = _projected_gradient(x, g, lower, upper)
        gn = math.sqrt(_dot(pg, pg))
        if gn <= grad_tolerance:
            status = "converged_grad"
            break
        d = _two_loop(g, mem)
        if _dot(g, d) >= 0.0:
            # memory produced a non-descent direction; fall back
            d = [-v / gn for v in pg]
        alpha = 1.0
        accepted = False
        f_old = f
        for _ in range(_MAX_BACKTRACKS + 1):
            xt = _project([x[j] + alpha * d[j] for j in range(n)],
                          lower, upper)
            delta = [xt[j] - x[j] for j in range(n)]
            if not any(delta):
                break
            slope = _dot(g, delta)
            ft, gt = fun(xt)
            if slope < 0.0 and ft <= f + _ARMIJO_C * slope:
                s_vec = delta
                y_vec = [gt[j] - g[j] for j in range(n)]
                sy = _dot(s_vec, y_vec)
                if sy > _CURVATURE_MIN:
                    mem.append((s_vec, y_vec, 1.0 / sy))
                    if len(mem) > memory:
                        mem.pop(0)
                else:
                    # a rejected pair means the memory no longer models
                    # the local curvature; restart from steepest descent
                    # rather than keep producing the same stale step
                    mem.clear()
                x = xt
                f = ft
                g = list(gt)
                pg = _projected_gradient(x, g, lower, upper)
                gn = math.sqrt(_dot(pg, pg))
                history.append({
                    "iteration": it, "loss": f, "grad_norm": gn,
                    "step_length": alpha, "slope": slope,
                    "status": "accepted",
                })
                if f < best_f:
                    best_f = f
                    best_x = list(x)
                accepted = True
                break
            alpha *= _CONTRACTION
        if not accepted:
            status = "line_search_failed"
            break
        rel = abs(f_old - f) / max(abs(f_old), 1e-300)
        stall = stall + 1 if rel <= loss_rel_tolerance else 0
        if stall >= _STALL_ITERS:
            status = "converged_loss"
            break

    history.append({
        "iteration": it, "loss": best_f, "grad_norm": gn,
        "step_length": 0.0, "slope": 0.0, "status": status,
    })
    return best_x, history


def refine(model, data, terms, solver_cfg, theta0, cfg):
    """Gradient refinement of theta0 inside the parameter box.

    cfg may be an OptimizerConfig or a bare LbfgsConfig.  Returns
    (theta_star, history) with theta_star the best-seen point in
    external coordinates; see minimize_lbfgs for the history layout.
    """
    lcfg = getattr(cfg, "lbfgs", cfg)
    space = model.param_space
    if space is None:
        raise ValueError("model has no parameter bounds to refine in")
    if not loss_gradient_ready(terms, data):
        raise ValueError("loss is not gradient-ready on this dataset")
    u0 = clip_unit(to_internal(space, theta0))

    def fun(u):
        theta = from_internal(space, u)
        return loss_and_gradient(model, theta, data, terms, solver_cfg)

    dim = space.dim
    best_u, history = minimize_lbfgs(
        fun, u0,
        max_iterations=lcfg.max_iterations,
        memory=lcfg.memory,
        grad_tolerance=lcfg.grad_tolerance,
        loss_rel_tolerance=lcfg.loss_rel_tolerance,
        lower=[0.0] * dim, upper=[1.0] * dim,
    )
    return from_internal(space, best_u), history


@dataclass
class FitResult:
    """Everything one calibration run produced.

    theta maps are keyed by declared parameter names in external units;
    loss_history rows are {stage, iteration, loss} with stage "pso" or
    "lbfgs"; trajectory is sampled at the dataset times.
    """

    theta_pso: dict
    theta_final: dict
    loss_pso: float
    loss_final: float
    loss_history: list
    trajectory: Trajectory
    solver: object
    optimizer: object
    wall_time: float
    status: str
    lint_report: object = None


def two_stage_fit(model, data, terms, solver_cfg, opt_cfg) -> FitResult:
    """Swarm search then L-BFGS refinement from the incumbent.

    The refinement never worsens the swarm result (best-seen return),
    so loss_final <= loss_pso.  Setting lbfgs.max_iterations to 0 (or
    passing a config without an lbfgs stage) skips refinement.
    """
    t_start = time.perf_counter()
    theta_pso, pso_hist = run_pso(model, data, terms, solver_cfg, opt_cfg)
    rows = [{"stage": "pso", "iteration": i, "loss": v}
            for i, v in enumerate(pso_hist)]
    lcfg = getattr(opt_cfg, "lbfgs", None)
    if lcfg is not None and lcfg.max_iterations > 0:
        theta_final, ref_hist = refine(
            model, data, terms, solver_cfg, theta_pso, opt_cfg)
        rows.extend({"stage": "lbfgs", "iteration": r["iteration"],
                     "loss": r["loss"]} for r in ref_hist)
        loss_final = ref_hist[-1]["loss"]
        status = ref_hist[-1]["status"]
    else:
        theta_final = list(theta_pso)
        loss_final = pso_hist[-1]
        status = "pso_only"
    names = model.param_names
    traj = integrate(model, theta_final, list(data.times), solver_cfg)
    return FitResult(
        theta_pso=dict(zip(names, theta_pso)),
        theta_final=dict(zip(names, theta_final)),
        loss_pso=pso_hist[-1],
        loss_final=loss_final,
        loss_history=rows,
        trajectory=traj,
        solver=solver_cfg,
        optimizer=opt_cfg,
        wall_time=time.perf_counter() - t_start,
        status=status,
    )
