"""Bounded particle swarm search over the internal unit box.

Particles carry positions u and velocities v in [0,1]^M internal
coordinates.  Per iteration: v <- w*v + c1*r1*(u_best_i - u) +
c2*r2*(u_best - u), then u <- u + v, clamping u to the box and zeroing
the violating velocity component.  r1, r2 are drawn per particle and
per dimension from that particle's own seeded stream, so results do not
depend on whether fitness evaluations run concurrently.  Best updates
use strict less-than; ties keep the incumbent.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from odefit.coords import from_internal
from odefit.loss import loss_value

__all__ = [
    "Swarm",
    "init_swarm",
    "evaluate_swarm",
    "pso_step",
    "run_pso",
    "worker_count",
]

_INF = float("inf")

_VEL_INIT = 0.25  # initial velocities uniform in [-0.25, 0.25]


@dataclass
class Swarm:
    """Particle state in internal coordinates.

    Personal and global bests stay unset (None / +inf) until the first
    evaluate_swarm call.
    """

    positions: np.ndarray       # P x M
    velocities: np.ndarray      # P x M
    personal_best_positions: Optional[np.ndarray]
    personal_best_values: Optional[np.ndarray]
    global_best_position: Optional[np.ndarray]
    global_best_value: float
    iteration: int
    rngs: list                  # one np.random.Generator per particle
    hyper: dict                 # {"w", "c1", "c2"}


def init_swarm(bounds, size: int, seed: int,
               w: float = 0.7, c1: float = 1.5, c2: float = 1.5) -> Swarm:
    """Seeded swarm over the unit box of ``bounds`` (a ParamSpace).

    Particle i draws its position row, then its velocity row, from its
    own stream (SeedSequence child i), so any particle's start is
    reproducible independent of swarm size.
    """
    if size < 2:
        raise ValueError("swarm size must be at least 2")
    dim = bounds.dim
    children = np.random.SeedSequence(seed).spawn(size)
    rngs = [np.random.default_rng(c) for c in children]
    positions = np.empty((size, dim))
    velocities = np.empty((size, dim))
    for i, rng in enumerate(rngs):
        positions[i] = rng.random(dim)
        velocities[i] = rng.random(dim) * (2.0 * _VEL_INIT) - _VEL_INIT
    return Swarm(
        positions=positions,
        velocities=velocities,
        personal_best_positions=None,
        personal_best_values=None,
        global_best_position=None,
        global_best_value=_INF,
        iteration=0,
        rngs=rngs,
        hyper={"w": w, "c1": c1, "c2": c2},
    )


def worker_count() -> int:
    """Fitness-evaluation parallelism cap from ODEFIT_WORKERS (default 1)."""
    raw = os.environ.get("ODEFIT_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _eval_positions(swarm: Swarm, fitness: Callable, workers: int) -> list:
    rows = [[float(x) for x in row] for row in swarm.positions]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(fitness, rows))
    else:
        values = [fitness(row) for row in rows]
    return [v if -_INF < v < _INF else _INF for v in values]


def _update_bests(swarm: Swarm, values: list) -> None:
    size = len(values)
    if swarm.personal_best_values is None:
        swarm.personal_best_positions = swarm.positions.copy()
        swarm.personal_best_values = np.array(values)
    else:
        for i in range(size):
            if values[i] < swarm.personal_best_values[i]:
                swarm.personal_best_values[i] = values[i]
                swarm.personal_best_positions[i] = swarm.positions[i]
    k = int(np.argmin(swarm.personal_best_values))
    if swarm.personal_best_values[k] < swarm.global_best_value:
        swarm.global_best_value = float(swarm.personal_best_values[k])
        swarm.global_best_position = swarm.personal_best_positions[k].copy()


def evaluate_swarm(swarm: Swarm, fitness: Callable,
                   workers: int = 1) -> Swarm:
    """Evaluate current positions and fold them into the bests.

    Used once after init_swarm to seed the bests; pso_step calls it
    after each move.  Non-finite fitness values are recorded as +inf.
    """
    values = _eval_positions(swarm, fitness, workers)
    _update_bests(swarm, values)
    return swarm


def pso_step(swarm: Swarm, fitness: Callable, workers: int = 1) -> Swarm:
    """One velocity/position/evaluation sweep; mutates and returns swarm."""
    if swarm.personal_best_values is None:
        raise ValueError("swarm has no bests; call evaluate_swarm first")
    w = swarm.hyper["w"]
    c1 = swarm.hyper["c1"]
    c2 = swarm.hyper["c2"]
    size, dim = swarm.positions.shape
    gbest = swarm.global_best_position
    for i in range(size):
        rng = swarm.rngs[i]
        r1 = rng.random(dim)
        r2 = rng.random(dim)
        u = swarm.positions[i]
        v = swarm.velocities[i]
        v[:] = (w * v
                + c1 * r1 * (swarm.personal_best_positions[i] - u)
                + c2 * r2 * (gbest - u))
        u += v
        for j in range(dim):
            if u[j] < 0.0:
                u[j] = 0.0
                v[j] = 0.0
            elif u[j] > 1.0:
                u[j] = 1.0
                v[j] = 0.0
    evaluate_swarm(swarm, fitness, workers)
    swarm.iteration += 1
    return swarm


def run_pso(model, data, terms, solver_cfg, opt_cfg):
    """Swarm search of the deck loss; returns (theta_best, history).

    opt_cfg may be an OptimizerConfig or a bare PsoConfig.  history[0]
    is the best value after the initial evaluation and one entry
    follows per iteration, so it has iterations+1 entries and is
    non-increasing.  Fully deterministic for a fixed seed, with or
    without concurrent fitness evaluation.
    """
    cfg = getattr(opt_cfg, "pso", opt_cfg)
    space = model.param_space
    if space is None:
        raise ValueError("model has no parameter bounds to search")

    def fitness(u: Sequence[float]) -> float:
        theta = from_internal(space, u)
        return loss_value(model, theta, data, terms, solver_cfg)

    workers = worker_count()
    swarm = init_swarm(space, cfg.swarm_size, cfg.seed,
                       w=cfg.w, c1=cfg.c1, c2=cfg.c2)
    evaluate_swarm(swarm, fitness, workers)
    if not swarm.global_best_value < _INF:
        raise RuntimeError(
            "no feasible particle found; widen solver tolerances or "
            "parameter bounds"
        )
    history = [swarm.global_best_value]
    for _ in range(cfg.iterations):
        pso_step(swarm, fitness, workers)
        history.append(swarm.global_best_value)
    theta_best = from_internal(
        space, [float(x) for x in swarm.global_best_position])
    return theta_best, history
