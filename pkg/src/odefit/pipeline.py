"""Command-line front end: skeleton, lint, fit, and simulate.

Thin orchestration over the library modules plus all artifact I/O.
Exit codes are a stable contract: 0 ok, 1 unresolved lint criticals,
2 missing file, 3 parse failure, 4 infeasible optimization, 5 bad
parameter file.  Identical deck and seed produce byte-identical
params.json and loss_history.csv.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional

from odefit.deck import DeckError, ProblemDeck, generate_skeleton, \
    parse_deck, serialize_deck
from odefit.global_opt import worker_count
from odefit.lint import lint_loop, report_to_json, report_to_text
from odefit.local_opt import two_stage_fit
from odefit.loss import DatasetError, bind_dataset
from odefit.model import compile_model
from odefit.solve import integrate

__all__ = [
    "cli_fit",
    "cli_lint",
    "cli_simulate",
    "cli_skeleton",
    "main",
]

EXIT_OK = 0
EXIT_LINT = 1
EXIT_MISSING = 2
EXIT_PARSE = 3
EXIT_INFEASIBLE = 4
EXIT_PARAMS = 5


def _say(msg: str) -> None:
    print(msg)


def _complain(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_deck(deck_path):
    """Read and parse a deck, mapping failures to (None, exit_code)."""
    path = Path(deck_path)
    if not path.is_file():
        _complain(f"file not found: {path}")
        return None, EXIT_MISSING
    try:
        deck = parse_deck(path.read_text(encoding="utf-8"))
    except DeckError as exc:
        # XML syntax errors already carry "line L, column C" in the text
        _complain(f"{path}: {exc}")
        return None, EXIT_PARSE
    return deck, None


def cli_skeleton(deck_path) -> int:
    deck, code = _load_deck(deck_path)
    if deck is None:
        return code
    out = Path(deck_path).with_suffix(".model.txt")
    out.write_text(generate_skeleton(deck), encoding="utf-8")
    _say(f"[skeleton] wrote {out}")
    return EXIT_OK


def cli_lint(deck_path, max_iters: int = 5, fix: bool = True) -> int:
    deck, code = _load_deck(deck_path)
    if deck is None:
        return code
    path = Path(deck_path)
    base = path.parent
    if fix:
        fixed, reports = lint_loop(deck, max_iters, base_dir=base)
        report = reports[-1]
        if serialize_deck(fixed) != serialize_deck(deck):
            out = path.with_suffix(".fixed.xml")
            out.write_text(serialize_deck(fixed), encoding="utf-8")
            _say(f"[lint] wrote repaired deck {out}")
    else:
        _, reports = lint_loop(deck, 1, base_dir=base)
        report = reports[0]
    (base / "lint_report.json").write_text(
        report_to_json(report), encoding="utf-8")
    _say(f"[lint] wrote {base / 'lint_report.json'}")
    sys.stdout.write(report_to_text(report))
    return EXIT_OK if report.clean else EXIT_LINT


def _config_dict(obj):
    return asdict(obj) if not isinstance(obj, dict) else obj


def _params_payload(deck: ProblemDeck, theta: dict) -> dict:
    payload = {}
    for p in deck.parameters:
        payload[p.name] = {
            "value": theta[p.name],
            "lower": p.lower,
            "upper": p.upper,
            "scale": p.scale,
        }
    return payload


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _write_trajectory(path: Path, deck: ProblemDeck, traj) -> None:
    text = traj.to_csv(deck.state_names, time_name=deck.dataset.time_column)
    path.write_text(text, encoding="utf-8")


def cli_fit(deck_path, seed: Optional[int] = None, out_dir=None) -> int:
    deck, code = _load_deck(deck_path)
    if deck is None:
        return code
    path = Path(deck_path)
    base = path.parent
    out = Path(out_dir) if out_dir is not None else base
    out.mkdir(parents=True, exist_ok=True)

    original = deck
    deck, reports = lint_loop(deck, 5, base_dir=base)
    report = reports[-1]
    if serialize_deck(deck) != serialize_deck(original):
        _say("[lint] applied mechanical repairs before fitting")
    if not report.clean:
        _complain("[lint] unresolved critical findings; aborting fit")
        sys.stderr.write(report_to_text(report))
        return EXIT_LINT

    if seed is not None:
        deck = replace(
            deck,
            optimizer=replace(deck.optimizer,
                              pso=replace(deck.optimizer.pso, seed=seed)),
        )
    model = compile_model(deck)
    data = bind_dataset(deck, base_dir=base)
    _say(f"[fit] {deck.name}: swarm {deck.optimizer.pso.swarm_size}, "
         f"{deck.optimizer.pso.iterations} iterations, "
         f"seed {deck.optimizer.pso.seed}, {worker_count()} worker(s)")
    try:
        result = two_stage_fit(model, data, list(deck.loss), deck.solver,
                               deck.optimizer)
    except RuntimeError as exc:
        _complain(f"[fit] infeasible: {exc}")
        return EXIT_INFEASIBLE
    _say(f"[fit] pso loss {result.loss_pso:.6e} -> "
         f"final loss {result.loss_final:.6e} ({result.status}) "
         f"in {result.wall_time:.1f}s")

    _write_json(out / "params.json", _params_payload(deck, result.theta_final))
    hist = ["stage,iteration,loss"]
    hist += [f"{r['stage']},{r['iteration']},{repr(float(r['loss']))}"
             for r in result.loss_history]
    (out / "loss_history.csv").write_text("\n".join(hist) + "\n",
                                          encoding="utf-8")
    _write_trajectory(out / "trajectory.csv", deck, result.trajectory)
    fit_report = {
        "problem": deck.name,
        "status": result.status,
        "loss_pso": result.loss_pso,
        "loss_final": result.loss_final,
        "theta_pso": result.theta_pso,
        "theta_final": result.theta_final,
        "wall_time_seconds": result.wall_time,
        "seed": deck.optimizer.pso.seed,
        "workers": worker_count(),
        "solver": _config_dict(deck.solver),
        "optimizer": _config_dict(deck.optimizer),
        "lint": {
            "clean": report.clean,
            "findings": len(report.findings),
            "iterations_used": report.iterations_used,
        },
        "trajectory_status": result.trajectory.status,
    }
    _write_json(out / "fit_report.json", fit_report)
    for name in ("params.json", "loss_history.csv", "trajectory.csv",
                 "fit_report.json"):
        _say(f"[fit] wrote {out / name}")
    return EXIT_OK


def cli_simulate(deck_path, params_path) -> int:
    deck, code = _load_deck(deck_path)
    if deck is None:
        return code
    ppath = Path(params_path)
    if not ppath.is_file():
        _complain(f"file not found: {ppath}")
        return EXIT_MISSING
    try:
        raw = json.loads(ppath.read_text(encoding="utf-8"))
    except ValueError as exc:
        _complain(f"{ppath}: not valid JSON ({exc})")
        return EXIT_PARAMS

    theta = {}
    for name, entry in raw.items():
        value = entry.get("value") if isinstance(entry, dict) else entry
        try:
            theta[name] = float(value)
        except (TypeError, ValueError):
            _complain(f"{ppath}: parameter {name!r} has no numeric value")
            return EXIT_PARAMS

    declared = list(deck.param_names)
    missing = [n for n in declared if n not in theta]
    if missing:
        _complain(f"missing parameter values for: {', '.join(missing)}")
        return EXIT_PARAMS
    for name in theta:
        if name not in declared:
            _say(f"[simulate] ignoring unknown parameter {name!r}")
    for p in deck.parameters:
        v = theta[p.name]
        if not p.lower <= v <= p.upper:
            _say(f"[simulate] warning: {p.name}={v!r} outside "
                 f"[{p.lower!r}, {p.upper!r}]; simulating anyway")

    base = Path(deck_path).parent
    try:
        data = bind_dataset(deck, base_dir=base)
    except DatasetError as exc:
        _complain(f"[simulate] {exc}")
        return EXIT_LINT
    model = compile_model(deck)
    vec = [theta[n] for n in declared]
    traj = integrate(model, vec, list(data.times), deck.solver)
    _write_trajectory(base / "trajectory.csv", deck, traj)
    _say(f"[simulate] status {traj.status}; wrote {base / 'trajectory.csv'}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fit",
        description="ODE parameter calibration from XML problem decks",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("skeleton", help="write a model skeleton beside the deck")
    p.add_argument("deck")

    p = sub.add_parser("lint", help="check a deck, repairing what is mechanical")
    p.add_argument("deck")
    p.add_argument("--max-iters", type=int, default=5)
    fix = p.add_mutually_exclusive_group()
    fix.add_argument("--fix", dest="fix", action="store_true", default=True)
    fix.add_argument("--no-fix", dest="fix", action="store_false")

    p = sub.add_parser("fit", help="two-stage calibration with artifacts")
    p.add_argument("deck")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)

    p = sub.add_parser("simulate", help="integrate once at given parameters")
    p.add_argument("deck")
    p.add_argument("--params", required=True)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "skeleton":
        return cli_skeleton(args.deck)
    if args.command == "lint":
        return cli_lint(args.deck, max_iters=args.max_iters, fix=args.fix)
    if args.command == "fit":
        return cli_fit(args.deck, seed=args.seed, out_dir=args.out_dir)
    return cli_simulate(args.deck, args.params)


if __name__ == "__main__":
    raise SystemExit(main())
