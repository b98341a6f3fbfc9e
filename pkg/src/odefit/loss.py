"""Bind CSV datasets to decks and assemble the calibration objective.

The objective is a sum of declarative terms.  Each term selects a signal
(a state or the rate of a state), an optional transform, a reduction,
a weight, a scale, and an optional time window.  Evaluation integrates
the model once at the data times restricted to the union of term
windows; rate signals are evaluated on the model side from the RHS at
the trajectory samples, never by differencing the trajectory.

Solver failure and non-finite residuals are encoded as +inf so that
optimizer comparisons stay total without exception plumbing.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from odefit.solve import SolverConfig, integrate

__all__ = [
    "BoundDataset",
    "DatasetError",
    "LossTerm",
    "bind_dataset",
    "evaluate_terms",
    "loss_gradient_ready",
    "loss_value",
    "parse_signal",
    "resolve_scale",
    "restricted_times",
]

_RATE = re.compile(r"^rate\(\s*([A-Za-z_][A-Za-z0-9_]*)\s*\)$")
_LN10 = math.log(10.0)
_INF = float("inf")


def parse_signal(signal: str) -> tuple:
    """Split a signal reference into (state_name, is_rate)."""
    m = _RATE.match(signal)
    if m:
        return m.group(1), True
    return signal, False


@dataclass(frozen=True)
class LossTerm:
    signal: str
    transform: str = "identity"
    weight: float = 1.0
    scale: Union[float, str] = 1.0
    window: Optional[tuple] = None
    reduction: str = "mean_square"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class BoundDataset:
    """Dataset columns mapped onto model signals, aligned to one time grid."""

    times: tuple
    values: dict  # state name -> observation tuple
    rates: dict   # state name -> data-side rate tuple
    path: str = ""

    def signal_data(self, signal: str) -> tuple:
        name, is_rate = parse_signal(signal)
        table = self.rates if is_rate else self.values
        if name not in table:
            raise DatasetError(f"signal {signal!r} has no bound data")
        return table[name]


def bind_dataset(deck, base_dir=None) -> BoundDataset:
    """Load the deck's CSV and materialize observation and rate vectors.

    Rate vectors come from an explicitly bound rate(...) column, or with
    rate_source=finite_difference from centered differences of each
    directly bound state column (one-sided at the endpoints).
    """
    ds = deck.dataset
    path = Path(ds.path)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"dataset unreadable: {path} ({exc})") from None

    rows = [r for r in csv.reader(text.splitlines()) if r]
    if not rows:
        raise DatasetError(f"{path}: empty dataset")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if len(body) < 2:
        raise DatasetError(f"{path}: fewer than 2 rows")

    col_index = {name: i for i, name in enumerate(header)}
    wanted = [(ds.time_column, None)]
    for b in ds.column_map:
        wanted.append((b.column, b.signal))
    for col, _ in wanted:
        if col not in col_index:
            raise DatasetError(f"{path}: column {col!r} not in CSV header")

    def column(col: str) -> tuple:
        j = col_index[col]
        out = []
        for i, row in enumerate(body):
            cell = row[j].strip() if j < len(row) else ""
            try:
                out.append(float(cell))
            except ValueError:
                raise DatasetError(
                    f"{path}: non-numeric cell at row {i + 1}, "
                    f"column {col!r}: {cell!r}"
                ) from None
        return tuple(out)

    times = column(ds.time_column)
    values: dict = {}
    rates: dict = {}
    for b in ds.column_map:
        name, is_rate = parse_signal(b.signal)
        if is_rate:
            rates[name] = column(b.column)
        else:
            values[name] = column(b.column)

    if ds.rate_source == "finite_difference":
        for name, vec in values.items():
            if name not in rates:
                rates[name] = _central_differences(times, vec)

    return BoundDataset(times=times, values=values, rates=rates, path=str(path))


def _central_differences(times: tuple, vec: tuple) -> tuple:
    n = len(vec)
    out = [0.0] * n
    out[0] = (vec[1] - vec[0]) / (times[1] - times[0])
    out[n - 1] = (vec[n - 1] - vec[n - 2]) / (times[n - 1] - times[n - 2])
    for i in range(1, n - 1):
        out[i] = (vec[i + 1] - vec[i - 1]) / (times[i + 1] - times[i - 1])
    return tuple(out)


# ---------------------------------------------------------------------------
# objective assembly


def resolve_scale(term: LossTerm, data: BoundDataset) -> float:
    if term.scale == "max_abs_of_data":
        vec = data.signal_data(term.signal)
        s = max(abs(v) for v in vec)
        if s == 0.0:
            raise DatasetError(
                f"scale max_abs_of_data of term {term.signal!r} is zero"
            )
        return s
    s = float(term.scale)
    if not s > 0.0:
        raise DatasetError(f"scale of term {term.signal!r} must be positive")
    return s


def restricted_times(data: BoundDataset, terms) -> tuple:
    """Data times inside the union of term windows (all, if any term is
    unwindowed)."""
    if not terms or any(t.window is None for t in terms):
        return tuple(data.times)
    out = []
    for tk in data.times:
        for term in terms:
            lo, hi = term.window
            if lo <= tk <= hi:
                out.append(tk)
                break
    return tuple(out)


def _in_window(term: LossTerm, tk: float) -> bool:
    if term.window is None:
        return True
    lo, hi = term.window
    return lo <= tk <= hi


def evaluate_terms(model, theta, times, states, data, terms,
                   want_partials: bool = False):
    """Sum the loss terms over one solved trajectory.

    ``times``/``states`` are the solution samples at the restricted data
    grid.  Returns (value, state_partials, rate_partials) where the
    partials are n_times x n_states arrays of dL/dy and dL/df (None
    unless requested).  Non-finite residuals yield (+inf, zeros, zeros).
    """
    n_times = len(times)
    n = model.n_states
    time_index = {tk: i for i, tk in enumerate(data.times)}
    sp = [[0.0] * n for _ in range(n_times)] if want_partials else None
    rp = [[0.0] * n for _ in range(n_times)] if want_partials else None

    needs_rate = any(parse_signal(t.signal)[1] for t in terms)
    rhs_rows = None
    if needs_rate:
        rhs = model.rhs
        rhs_rows = [rhs(times[i], states[i], theta) for i in range(n_times)]

    total = 0.0
    for term in terms:
        name, is_rate = parse_signal(term.signal)
        j = model.state_index.get(name)
        if j is None:
            raise DatasetError(f"loss term references unknown state {name!r}")
        dvec = data.signal_data(term.signal)
        s = resolve_scale(term, data)
        log_t = term.transform == "log10"

        # gather (sample index, sim, data) triples inside the window;
        # log10 terms drop non-positive data samples
        triples = []
        for i in range(n_times):
            tk = times[i]
            if not _in_window(term, tk):
                continue
            dk = dvec[time_index[tk]]
            if log_t and not dk > 0.0:
                continue
            sim = rhs_rows[i][j] if is_rate else states[i][j]
            triples.append((i, sim, dk))
        if not triples:
            continue

        count = len(triples)
        acc = 0.0
        qs = []
        for i, sim, dk in triples:
            if log_t:
                if sim > 0.0:
                    r = (math.log10(sim) - math.log10(dk)) / s
                else:
                    r = _INF
            else:
                r = (sim - dk) / s
            if not (-_INF < r < _INF):
                return _inf_result(want_partials, n_times, n)
            acc += r * r
            qs.append(r)
        mean_sq = acc / count

        if term.reduction == "mean_square":
            total += term.weight * mean_sq
            if want_partials:
                coeff = 2.0 * term.weight / count
                for (i, sim, dk), r in zip(triples, qs):
                    g = coeff * r / s
                    if log_t:
                        g /= sim * _LN10
                    if is_rate:
                        rp[i][j] += g
                    else:
                        sp[i][j] += g
        else:  # root_mean_square
            root = math.sqrt(mean_sq)
            total += term.weight * root
            if want_partials and root > 0.0:
                coeff = term.weight / (count * root)
                for (i, sim, dk), r in zip(triples, qs):
                    g = coeff * r / s
                    if log_t:
                        g /= sim * _LN10
                    if is_rate:
                        rp[i][j] += g
                    else:
                        sp[i][j] += g

    if not (-_INF < total < _INF):
        return _inf_result(want_partials, n_times, n)
    return total, sp, rp


def _inf_result(want_partials, n_times, n):
    if want_partials:
        z1 = [[0.0] * n for _ in range(n_times)]
        z2 = [[0.0] * n for _ in range(n_times)]
        return _INF, z1, z2
    return _INF, None, None


def loss_value(model, theta, data: BoundDataset, terms,
               solver: SolverConfig) -> float:
    """Scalar objective at theta; +inf on solver failure."""
    times = restricted_times(data, terms)
    traj = integrate(model, theta, times, solver)
    if traj.status != "success":
        return _INF
    value, _, _ = evaluate_terms(model, theta, list(traj.times),
                                 traj.states, data, terms)
    return value


def loss_gradient_ready(terms, data: BoundDataset) -> bool:
    """True iff every transform is differentiable on its data samples."""
    for term in terms:
        if term.transform != "log10":
            continue
        dvec = data.signal_data(term.signal)
        for tk, dk in zip(data.times, dvec):
            if _in_window(term, tk) and not dk > 0.0:
                return False
    return True
