"""Reference calibration problems shipped as decks plus data generators.

Four cases.  robertson and vanderpol are synthetic-recovery problems
with known truth parameters; piezo_bouc_wen and arc_runaway mirror
experiment-shaped fits.  All four CSVs are generated here from the
shipped model forms (the latter two with noise, standing in for
external measurement campaigns), so regeneration under the pinned seed
is byte-identical and recovery tests are self-consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from odefit.deck import ProblemDeck, parse_deck
from odefit.loss import bind_dataset, parse_signal
from odefit.model import compile_model
from odefit.solve import integrate

__all__ = [
    "BenchmarkCase",
    "case_dir",
    "generate_synthetic",
    "list_benchmarks",
    "load_benchmark",
    "load_case_data",
]

_ROOT = Path(__file__).parent / "benchmarks"


@dataclass(frozen=True)
class BenchmarkCase:
    """A shipped deck, its data recipe, and acceptance tolerances.

    noise entries are (column, kind, sd) applied in order; kind "add"
    is additive Gaussian, "logmul" multiplies by exp(N(0, sd)).
    tolerance maps parameter names to relative recovery tolerances and
    is None for the property-checked experiment-shaped cases.
    """

    name: str
    deck: ProblemDeck
    truth: Optional[dict]
    times: tuple
    data_seed: int
    noise: tuple = ()
    tolerance: Optional[dict] = None
    gen_atol: object = 1e-12


def _robertson_times() -> tuple:
    return tuple(10.0 ** (-5.0 + 10.0 * i / 59.0) for i in range(60))


def _vanderpol_times() -> tuple:
    return tuple((i + 1) / 10.0 for i in range(400))


def _piezo_times() -> tuple:
    return tuple(i / 800.0 for i in range(201))


def _arc_times() -> tuple:
    # experiment-style adaptive log: 12 s cadence while self-heating,
    # 3 s through the runaway transition, 30 s on the exhausted tail
    slow = [12.0 * i for i in range(1, 126)]
    fast = [1500.0 + 3.0 * i for i in range(1, 68)]
    tail = [1710.0 + 30.0 * i for i in range(24)]
    return tuple(slow + fast + tail)


_META = {
    "robertson": dict(
        truth={"k1": 0.04, "k2": 3.0e7, "k3": 1.0e4},
        times=_robertson_times,
        data_seed=101,
        noise=(),
        tolerance={"k1": 0.02, "k2": 0.02, "k3": 0.02},
        gen_atol=(1e-12, 1e-15, 1e-12),
    ),
    "vanderpol": dict(
        truth={"mu": 10.0},
        times=_vanderpol_times,
        data_seed=102,
        noise=(),
        tolerance={"mu": 0.01},
        gen_atol=1e-12,
    ),
    "piezo_bouc_wen": dict(
        truth={"alpha": 0.6, "beta": 0.04, "gamma": 0.02,
               "cp": 20.0, "kp": 5.0e4, "de": 1.2e-7},
        times=_piezo_times,
        data_seed=103,
        noise=(("xp", "add", 5e-8),),
        tolerance=None,
        gen_atol=1e-14,
    ),
    "arc_runaway": dict(
        truth={"A1": 4.057e11, "Ea1": 2.000e-19, "h1": 2.519e2,
               "A2": 1.220e17, "Ea2": 2.565e-19, "h2": 4.970e1,
               "m2": 4.744, "n2": 2.407},
        times=_arc_times,
        data_seed=104,
        noise=(("T", "add", 0.5), ("dTdt", "logmul", 0.02)),
        tolerance=None,
        gen_atol=(1e-12, 1e-12, 1e-8),
    ),
}

_ORDER = ("robertson", "vanderpol", "piezo_bouc_wen", "arc_runaway")


def list_benchmarks() -> tuple:
    return _ORDER


def case_dir(name: str) -> Path:
    if name not in _META:
        raise KeyError(f"unknown benchmark {name!r}; "
                       f"choose from {', '.join(_ORDER)}")
    return _ROOT / name


def load_benchmark(name: str) -> BenchmarkCase:
    d = case_dir(name)
    deck = parse_deck((d / f"{name}.xml").read_text(encoding="utf-8"))
    meta = _META[name]
    return BenchmarkCase(
        name=name,
        deck=deck,
        truth=meta["truth"],
        times=meta["times"](),
        data_seed=meta["data_seed"],
        noise=meta["noise"],
        tolerance=meta["tolerance"],
        gen_atol=meta["gen_atol"],
    )


def load_case_data(case):
    """BoundDataset for a case (by name or BenchmarkCase)."""
    if isinstance(case, str):
        case = load_benchmark(case)
    return bind_dataset(case.deck, base_dir=case_dir(case.name))


def generate_synthetic(case, seed: Optional[int] = None) -> str:
    """CSV text for a case: tight reference solve plus pinned noise.

    The reference integrates the deck model at the truth parameters
    with rtol 1e-10 on the case grid; rate columns come from the RHS at
    the samples, matching the loss convention.  Identical (case, seed)
    always yields identical bytes.
    """
    if isinstance(case, str):
        case = load_benchmark(case)
    if case.truth is None:
        raise ValueError(f"benchmark {case.name!r} has no truth parameters")
    if seed is None:
        seed = case.data_seed

    deck = case.deck
    model = compile_model(deck)
    theta = [case.truth[n] for n in model.param_names]
    cfg = replace(deck.solver, rtol=1e-10, atol=case.gen_atol)
    times = list(case.times)
    traj = integrate(model, theta, times, cfg)
    if traj.status != "success":
        raise RuntimeError(
            f"reference solve for {case.name!r} failed: {traj.status}")

    header = [deck.dataset.time_column]
    columns = [list(times)]
    for b in deck.dataset.column_map:
        state, is_rate = parse_signal(b.signal)
        j = model.state_index[state]
        if is_rate:
            col = [model.rhs(t, list(row), theta)[j]
                   for t, row in zip(traj.times, traj.states)]
        else:
            col = [row[j] for row in traj.states]
        header.append(b.column)
        columns.append(col)

    rng = np.random.default_rng(seed)
    by_name = dict(zip(header, columns))
    for column, kind, sd in case.noise:
        vec = by_name[column]
        draws = rng.normal(0.0, sd, size=len(vec))
        if kind == "add":
            by_name[column] = [v + float(d) for v, d in zip(vec, draws)]
        elif kind == "logmul":
            by_name[column] = [v * float(np.exp(d))
                               for v, d in zip(vec, draws)]
        else:
            raise ValueError(f"unknown noise kind {kind!r}")

    lines = [",".join(header)]
    n = len(times)
    for i in range(n):
        lines.append(",".join(repr(by_name[h][i]) for h in header))
    return "\n".join(lines) + "\n"
