"""Deterministic deck lint with mechanical auto-repair.

Findings are partitioned into criticals (likely to break the fit stage)
and warnings (accuracy or efficiency hazards).  ``auto_fix`` applies
only mechanical repairs; name inference and anything touching model
semantics are refused.  ``lint_loop`` alternates lint and fix until the
deck is clean or the iteration budget is spent.

Rule codes are stable strings:

===========================  ========  =======
code                         severity  fixable
===========================  ========  =======
expression-syntax            critical  no
undeclared-symbol            critical  no
empty-rhs                    critical  no
empty-initial-condition      critical  no
inverted-bounds              critical  yes (swap)
non-monotone-time            critical  yes (stable sort to sibling file)
missing-observed-column      critical  no
unbound-loss-signal          critical  no
empty-loss                   critical  no
dataset-unreadable           critical  no
dataset-malformed            critical  no
unused-parameter             warning   no
zero-width-bounds            warning   no
wide-bounds-no-log           warning   yes (scale -> log10)
unobserved-uncoupled-state   warning   no
loose-tolerance-stiff        warning   no
empty-window                 warning   no
non-positive-log-data        warning   no
unknown-element              warning   no
===========================  ========  =======
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from odefit.deck import ProblemDeck
from odefit.expr import ExprError, free_symbols, parse_expr
from odefit.loss import parse_signal

__all__ = [
    "LintFinding",
    "LintReport",
    "auto_fix",
    "lint_deck",
    "lint_loop",
    "report_to_json",
    "report_to_text",
]


@dataclass(frozen=True)
class LintFinding:
    severity: str  # critical | warning
    code: str
    message: str
    location: str
    fixable: bool = False
    fix: Optional[str] = None  # description of the applied repair


@dataclass(frozen=True)
class LintReport:
    findings: tuple
    iterations_used: int = 1

    @property
    def clean(self) -> bool:
        return not any(f.severity == "critical" for f in self.findings)

    def criticals(self) -> tuple:
        return tuple(f for f in self.findings if f.severity == "critical")


# ---------------------------------------------------------------------------
# rule evaluation


def lint_deck(deck: ProblemDeck, base_dir=None) -> LintReport:
    findings: list = []
    add = findings.append

    state_names = set(deck.state_names)
    param_names = set(deck.param_names)
    const_names = {c.name for c in deck.constants}
    input_names = {u.name for u in deck.inputs}
    dot_names = {u.name + "_dot" for u in deck.inputs}

    rhs_allowed = (state_names | param_names | const_names | input_names
                   | dot_names | {"t"})
    ic_allowed = param_names | const_names
    input_allowed = const_names | {"t"}

    used: set = set()

    def check_expr(text: str, location: str, allowed: set, what: str):
        try:
            ast = parse_expr(text)
        except ExprError as exc:
            add(LintFinding("critical", "expression-syntax",
                            f"{what}: {exc}", location))
            return
        syms = free_symbols(ast)
        used.update(syms)
        for sym in sorted(syms - allowed):
            add(LintFinding(
                "critical", "undeclared-symbol",
                f"{what} references {sym!r}, which is not declared "
                f"(or not allowed here)", location))

    for s in deck.states:
        if not s.initial:
            add(LintFinding("critical", "empty-initial-condition",
                            f"state {s.name!r} has no initial condition",
                            f"states/{s.name}"))
        else:
            check_expr(s.initial, f"states/{s.name}", ic_allowed,
                       f"initial condition of {s.name!r}")

    for u in deck.inputs:
        if not u.expression:
            add(LintFinding("critical", "empty-rhs",
                            f"input {u.name!r} has no expression",
                            f"inputs/{u.name}"))
        else:
            check_expr(u.expression, f"inputs/{u.name}", input_allowed,
                       f"input {u.name!r}")

    for s in deck.states:
        text = deck.rhs.get(s.name, "")
        if not text:
            add(LintFinding("critical", "empty-rhs",
                            f"state {s.name!r} has an empty rhs",
                            f"rhs/{s.name}"))
        else:
            check_expr(text, f"rhs/{s.name}", rhs_allowed,
                       f"rhs of {s.name!r}")

    # bounds rules
    for p in deck.parameters:
        loc = f"parameters/{p.name}"
        if p.lower > p.upper:
            add(LintFinding(
                "critical", "inverted-bounds",
                f"parameter {p.name!r} has lower {p.lower!r} > upper "
                f"{p.upper!r}", loc, fixable=True))
        elif p.lower == p.upper:
            add(LintFinding(
                "warning", "zero-width-bounds",
                f"parameter {p.name!r} has equal bounds; it is treated "
                f"as a constant", loc))
        elif p.lower > 0.0 and p.upper / p.lower > 1e6 \
                and _resolved_scale(p) == "linear":
            add(LintFinding(
                "warning", "wide-bounds-no-log",
                f"parameter {p.name!r} spans more than 6 decades on a "
                f"linear scale", loc, fixable=True))
        if p.name not in used:
            add(LintFinding(
                "warning", "unused-parameter",
                f"parameter {p.name!r} is declared but never used", loc))

    # loss rules
    bound_states = set()
    bound_rates = set()
    for b in deck.dataset.column_map:
        name, is_rate = parse_signal(b.signal)
        if is_rate:
            bound_rates.add(name)
        else:
            bound_states.add(name)
    if deck.dataset.rate_source == "finite_difference":
        bound_rates |= bound_states

    if not deck.loss:
        add(LintFinding("critical", "empty-loss",
                        "deck defines no loss terms and binds no signals",
                        "loss"))
    for idx, term in enumerate(deck.loss, start=1):
        loc = f"loss/term[{idx}]"
        name, is_rate = parse_signal(term.signal)
        if name not in state_names:
            add(LintFinding(
                "critical", "unbound-loss-signal",
                f"loss term references undeclared state {name!r}", loc))
        elif is_rate and name not in bound_rates:
            add(LintFinding(
                "critical", "unbound-loss-signal",
                f"loss term needs rate data for {name!r}, but no column "
                f"binds it and rate_source is not finite_difference", loc))
        elif not is_rate and name not in bound_states:
            add(LintFinding(
                "critical", "unbound-loss-signal",
                f"loss term observes {name!r}, but no column binds it",
                loc))

    # identifiability heuristic: a state must be observed or feed,
    # directly or transitively, into an observed state's rhs
    observed = bound_states | bound_rates
    influences = {s: set() for s in state_names}
    for target in deck.state_names:
        text = deck.rhs.get(target, "")
        if not text:
            continue
        try:
            syms = free_symbols(parse_expr(text))
        except ExprError:
            continue
        for sym in syms & state_names:
            influences[sym].add(target)
    for s in deck.state_names:
        if s in observed:
            continue
        reached = set()
        frontier = [s]
        hits_observed = False
        while frontier and not hits_observed:
            cur = frontier.pop()
            for nxt in influences[cur]:
                if nxt in observed:
                    hits_observed = True
                    break
                if nxt not in reached:
                    reached.add(nxt)
                    frontier.append(nxt)
        if not hits_observed:
            add(LintFinding(
                "warning", "unobserved-uncoupled-state",
                f"state {s!r} is unobserved and does not influence any "
                f"observed state; it is likely unidentifiable",
                f"states/{s}"))

    # solver tolerance rule
    sv = deck.solver
    atol_max = (max(sv.atol) if isinstance(sv.atol, (tuple, list))
                else sv.atol)
    if sv.method == "tr_bdf2" and (sv.rtol > 1e-3 or atol_max > 1e-3):
        add(LintFinding(
            "warning", "loose-tolerance-stiff",
            f"tolerances (rtol={sv.rtol!r}, atol max={atol_max!r}) are "
            f"looser than 1e-3 for a stiff-capable method", "solver"))

    findings.extend(_lint_dataset(deck, base_dir))

    for w in deck.warnings:
        add(LintFinding("warning", "unknown-element", w, "problem"))

    return LintReport(findings=tuple(findings))


def _resolved_scale(p) -> str:
    if p.scale == "auto":
        if p.lower > 0.0 and p.upper / p.lower > 100.0:
            return "log10"
        return "linear"
    return p.scale


def _dataset_path(deck: ProblemDeck, base_dir):
    path = Path(deck.dataset.path)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    return path


def _lint_dataset(deck: ProblemDeck, base_dir) -> list:
    findings = []
    path = _dataset_path(deck, base_dir)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        findings.append(LintFinding(
            "critical", "dataset-unreadable",
            f"cannot read dataset {path}: {exc}", "dataset"))
        return findings
    rows = [r for r in csv.reader(text.splitlines()) if r]
    if len(rows) < 3:
        findings.append(LintFinding(
            "critical", "dataset-malformed",
            f"dataset {path} has fewer than 2 data rows", "dataset"))
        return findings
    header = [h.strip() for h in rows[0]]

    missing = False
    for col in [deck.dataset.time_column] + \
            [b.column for b in deck.dataset.column_map]:
        if col not in header:
            findings.append(LintFinding(
                "critical", "missing-observed-column",
                f"column {col!r} is not in the CSV header of {path}",
                "dataset"))
            missing = True
    if missing:
        return findings

    tj = header.index(deck.dataset.time_column)
    times = []
    for i, row in enumerate(rows[1:], start=1):
        cell = row[tj].strip() if tj < len(row) else ""
        try:
            tv = float(cell)
        except ValueError:
            findings.append(LintFinding(
                "critical", "dataset-malformed",
                f"non-numeric cell at row {i}, column "
                f"{deck.dataset.time_column!r}: {cell!r}", "dataset"))
            return findings
        if not math.isfinite(tv):
            findings.append(LintFinding(
                "critical", "dataset-malformed",
                f"non-finite time at row {i}", "dataset"))
            return findings
        times.append(tv)

    if any(b <= a for a, b in zip(times, times[1:])):
        sortable = len(set(times)) == len(times)
        findings.append(LintFinding(
            "critical", "non-monotone-time",
            "dataset time column is not strictly increasing"
            + ("" if sortable else
               " and has duplicate timestamps, so sorting cannot fix it"),
            "dataset", fixable=sortable))

    tmin, tmax = min(times), max(times)
    for idx, term in enumerate(deck.loss, start=1):
        if term.window is not None:
            lo, hi = term.window
            if hi < tmin or lo > tmax:
                findings.append(LintFinding(
                    "warning", "empty-window",
                    f"window [{lo!r}, {hi!r}] does not intersect the data "
                    f"time range [{tmin!r}, {tmax!r}]", f"loss/term[{idx}]"))

    # log10 transforms need positive data samples
    name_to_col = {}
    for b in deck.dataset.column_map:
        nm, is_rate = parse_signal(b.signal)
        name_to_col[(nm, is_rate)] = b.column
    for idx, term in enumerate(deck.loss, start=1):
        if term.transform != "log10":
            continue
        nm, is_rate = parse_signal(term.signal)
        col = name_to_col.get((nm, is_rate))
        if col is None and is_rate:
            # rate column absent: the data-side rate comes from finite
            # differences of the directly bound state column
            col = name_to_col.get((nm, False))
            if col is None:
                continue
            cj = header.index(col)
            vals = _float_column(rows[1:], cj)
            if vals is None:
                continue
            vec = _fd_rates(times, vals)
        else:
            if col is None:
                continue
            cj = header.index(col)
            vec = _float_column(rows[1:], cj)
            if vec is None:
                continue
        if any(not v > 0.0 for v in vec):
            findings.append(LintFinding(
                "warning", "non-positive-log-data",
                f"log10 term on {term.signal!r} has non-positive data "
                f"samples; they will be dropped and gradients are "
                f"unavailable", f"loss/term[{idx}]"))
    return findings


def _float_column(body, j):
    out = []
    for row in body:
        cell = row[j].strip() if j < len(row) else ""
        try:
            out.append(float(cell))
        except ValueError:
            return None
    return out


def _fd_rates(times, vals):
    n = len(vals)
    if n < 2 or len(times) != n:
        return []
    out = [0.0] * n
    out[0] = (vals[1] - vals[0]) / (times[1] - times[0]) \
        if times[1] != times[0] else 0.0
    out[-1] = (vals[-1] - vals[-2]) / (times[-1] - times[-2]) \
        if times[-1] != times[-2] else 0.0
    for i in range(1, n - 1):
        dt = times[i + 1] - times[i - 1]
        out[i] = (vals[i + 1] - vals[i - 1]) / dt if dt else 0.0
    return out


# ---------------------------------------------------------------------------
# repair


def auto_fix(deck: ProblemDeck, report: LintReport, base_dir=None):
    """Apply the mechanical repairs for the report's fixable findings.

    Returns (repaired deck, list of human-readable change descriptions).
    Unfixable findings are left alone.
    """
    changes: list = []
    params = list(deck.parameters)
    dataset = deck.dataset

    for f in report.findings:
        if not f.fixable:
            continue
        if f.code == "inverted-bounds":
            name = f.location.split("/", 1)[1]
            for i, p in enumerate(params):
                if p.name == name:
                    params[i] = replace(p, lower=p.upper, upper=p.lower)
                    changes.append(
                        f"inverted-bounds on {name}: swapped lower and "
                        f"upper ({p.upper!r}, {p.lower!r})")
        elif f.code == "wide-bounds-no-log":
            name = f.location.split("/", 1)[1]
            for i, p in enumerate(params):
                if p.name == name:
                    params[i] = replace(p, scale="log10")
                    changes.append(
                        f"wide-bounds-no-log on {name}: scale set to log10")
        elif f.code == "non-monotone-time":
            new_path, desc = _sort_dataset(deck, base_dir)
            if new_path is not None:
                dataset = replace(dataset, path=new_path)
                changes.append(desc)

    fixed = replace(deck, parameters=tuple(params), dataset=dataset)
    return fixed, changes


def _sort_dataset(deck: ProblemDeck, base_dir):
    path = _dataset_path(deck, base_dir)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError:
        return None, ""
    rows = [r for r in csv.reader(text.splitlines()) if r]
    header = [h.strip() for h in rows[0]]
    tj = header.index(deck.dataset.time_column)
    body = rows[1:]
    try:
        keyed = [(float(r[tj]), r) for r in body]
    except (ValueError, IndexError):
        return None, ""
    keyed.sort(key=lambda kv: kv[0])
    out_path = path.with_suffix(".sorted.csv")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(r for _, r in keyed)
    out_path.write_text(buf.getvalue(), encoding="utf-8")
    orig = Path(deck.dataset.path)
    new_decl = str(out_path) if orig.is_absolute() \
        else str(orig.with_name(out_path.name))
    return new_decl, (f"non-monotone-time: rows stably sorted by "
                      f"{deck.dataset.time_column!r} into {out_path.name}")


def lint_loop(deck: ProblemDeck, max_iterations: int, base_dir=None):
    """Alternate lint and auto_fix until clean or the budget is spent.

    Returns (final deck, list of reports in order).
    """
    if max_iterations < 1:
        raise ValueError("max_iterations must be at least 1")
    reports = []
    current = deck
    for i in range(max_iterations):
        report = LintReport(
            findings=lint_deck(current, base_dir).findings,
            iterations_used=i + 1,
        )
        reports.append(report)
        if report.clean:
            break
        if i + 1 < max_iterations:
            current, _ = auto_fix(current, report, base_dir)
    return current, reports


# ---------------------------------------------------------------------------
# report rendering


def report_to_json(report: LintReport) -> str:
    payload = {
        "clean": report.clean,
        "iterations_used": report.iterations_used,
        "findings": [
            {
                "severity": f.severity,
                "code": f.code,
                "message": f.message,
                "location": f.location,
                "fixable": f.fixable,
                "fix": f.fix,
            }
            for f in report.findings
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def report_to_text(report: LintReport) -> str:
    if not report.findings:
        return "lint: clean, no findings\n"
    lines = []
    for f in report.findings:
        tag = "CRITICAL" if f.severity == "critical" else "warning"
        fixnote = " [fixable]" if f.fixable else ""
        lines.append(f"{tag} {f.code} at {f.location}: {f.message}{fixnote}")
    lines.append(f"{'not clean' if not report.clean else 'clean'} "
                 f"({len(report.criticals())} critical, "
                 f"{len(report.findings) - len(report.criticals())} warning)")
    return "\n".join(lines) + "\n"
