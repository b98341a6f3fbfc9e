"""Internal scaled parameter coordinates.

Optimizers work in a unit box: each parameter dimension maps to [0, 1],
affinely in the value for linear-scaled parameters and affinely in
log10(value) for log-scaled ones.  This conditions searches whose bounds
span many decades.  Zero-width dimensions map to the single bound value
and carry zero derivative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

_LN10 = math.log(10.0)


@dataclass(frozen=True)
class ParamSpace:
    """Resolved parameter box: names, external bounds, per-dim scaling."""

    names: tuple[str, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    log: tuple[bool, ...]

    @property
    def dim(self) -> int:
        return len(self.names)


def resolve_scale(lower: float, upper: float, scale: str) -> str:
    """Resolve a declared scale (linear|log10|auto) to linear or log10.

    auto picks log10 when the bounds ratio exceeds 100 and the lower
    bound is positive.
    """
    if scale == "auto":
        if lower > 0.0 and upper / lower > 100.0:
            return "log10"
        return "linear"
    if scale not in ("linear", "log10"):
        raise ValueError(f"unknown scale {scale!r}")
    return scale


def make_space(
    names: Sequence[str],
    lower: Sequence[float],
    upper: Sequence[float],
    scale: Sequence[str],
) -> ParamSpace:
    log = []
    for name, lo, hi, sc in zip(names, lower, upper, scale):
        resolved = resolve_scale(lo, hi, sc)
        if resolved == "log10" and lo <= 0.0:
            raise ValueError(f"parameter {name!r}: log10 scale needs positive bounds")
        log.append(resolved == "log10")
    return ParamSpace(tuple(names), tuple(lower), tuple(upper), tuple(log))


def to_internal(space: ParamSpace, theta: Sequence[float]) -> list:
    """External parameter values to unit-box coordinates."""
    u = []
    for value, lo, hi, is_log in zip(theta, space.lower, space.upper, space.log):
        if hi == lo:
            u.append(0.0)
        elif is_log:
            u.append((math.log10(value) - math.log10(lo))
                     / (math.log10(hi) - math.log10(lo)))
        else:
            u.append((value - lo) / (hi - lo))
    return u


def from_internal(space: ParamSpace, u: Sequence[float]) -> list:
    """Unit-box coordinates to external parameter values."""
    theta = []
    for ui, lo, hi, is_log in zip(u, space.lower, space.upper, space.log):
        if hi == lo:
            theta.append(lo)
        elif is_log:
            e_lo = math.log10(lo)
            theta.append(10.0 ** (e_lo + ui * (math.log10(hi) - e_lo)))
        else:
            theta.append(lo + ui * (hi - lo))
    return theta


def chain(space: ParamSpace, u: Sequence[float]) -> list:
    """dθ_j/du_j at the given internal point (diagonal chain rule)."""
    out = []
    for ui, lo, hi, is_log in zip(u, space.lower, space.upper, space.log):
        if hi == lo:
            out.append(0.0)
        elif is_log:
            e_lo = math.log10(lo)
            e_hi = math.log10(hi)
            theta = 10.0 ** (e_lo + ui * (e_hi - e_lo))
            out.append(theta * _LN10 * (e_hi - e_lo))
        else:
            out.append(hi - lo)
    return out


def clip_unit(u: Sequence[float]) -> list:
    """Project onto the unit box."""
    return [0.0 if ui < 0.0 else (1.0 if ui > 1.0 else ui) for ui in u]
