"""Parse, canonicalize, and template the XML problem deck.

A deck declares the whole calibration task: states with initial
conditions, bounded parameters, constants, input signals, the RHS map,
the dataset binding, loss terms, solver and optimizer settings, and the
requested output artifacts.  The schema is documented in the README.

``parse_deck`` applies defaults for absent optional blocks and records
unknown elements as warnings instead of failing.  ``serialize_deck``
emits a canonical form: declaration order, defaults materialized,
byte-identical under repeated round trips.  ``generate_skeleton`` emits
the same XML with a FILL comment in every empty expression slot.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union
from xml.etree import ElementTree as ET
from xml.sax.saxutils import escape, quoteattr

from odefit.loss import LossTerm, parse_signal
from odefit.solve import SolverConfig

__all__ = [
    "DataBinding",
    "DatasetDecl",
    "DeckError",
    "InputDecl",
    "LbfgsConfig",
    "OptimizerConfig",
    "ParamDecl",
    "ProblemDeck",
    "PsoConfig",
    "StateDecl",
    "ConstDecl",
    "generate_skeleton",
    "load_deck",
    "parse_deck",
    "parse_signal",
    "save_deck",
    "serialize_deck",
]

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
# `t` is the independent variable; pi and e are built-in constants
_RESERVED_NAMES = frozenset({"t", "pi", "e"})

_OUTPUT_KINDS = ("params", "loss_history", "trajectory", "report")
_SOLVER_METHODS = ("dopri5", "tr_bdf2")
_SCALES = ("linear", "log10", "auto")
_TRANSFORMS = ("identity", "log10")
_REDUCTIONS = ("mean_square", "root_mean_square")
_RATE_SOURCES = ("column", "finite_difference")


class DeckError(ValueError):
    """Deck parse failure; .line/.column set for XML syntax errors."""

    def __init__(self, message: str, line: Optional[int] = None,
                 column: Optional[int] = None) -> None:
        super().__init__(message)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class StateDecl:
    name: str
    initial: str
    observed: Optional[str] = None  # data column bound directly to this state


@dataclass(frozen=True)
class ParamDecl:
    name: str
    lower: float
    upper: float
    scale: str = "auto"


@dataclass(frozen=True)
class ConstDecl:
    name: str
    value: float


@dataclass(frozen=True)
class InputDecl:
    name: str
    expression: str


@dataclass(frozen=True)
class DataBinding:
    column: str
    signal: str  # "x" or "rate(x)" with x a declared state


@dataclass(frozen=True)
class DatasetDecl:
    path: str
    time_column: str
    column_map: tuple = ()
    rate_source: str = "finite_difference"


@dataclass(frozen=True)
class PsoConfig:
    swarm_size: int = 64
    iterations: int = 300
    w: float = 0.7
    c1: float = 1.5
    c2: float = 1.5
    seed: int = 0


@dataclass(frozen=True)
class LbfgsConfig:
    max_iterations: int = 100
    memory: int = 10
    grad_tolerance: float = 1e-8
    loss_rel_tolerance: float = 1e-10


@dataclass(frozen=True)
class OptimizerConfig:
    pso: PsoConfig = field(default_factory=PsoConfig)
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)


@dataclass(frozen=True)
class ProblemDeck:
    name: str
    states: tuple
    parameters: tuple
    constants: tuple
    inputs: tuple
    rhs: dict
    dataset: DatasetDecl
    loss: tuple
    solver: SolverConfig
    optimizer: OptimizerConfig
    outputs: tuple
    warnings: tuple = ()

    @property
    def state_names(self) -> tuple:
        return tuple(s.name for s in self.states)

    @property
    def param_names(self) -> tuple:
        return tuple(p.name for p in self.parameters)


# ---------------------------------------------------------------------------
# parsing


def parse_deck(xml_text: str) -> ProblemDeck:
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line, col = getattr(exc, "position", (None, None))
        raise DeckError(f"XML syntax error: {exc}", line, col) from None
    if root.tag != "problem":
        raise DeckError(f"root element must be <problem>, got <{root.tag}>")

    warnings: list = []
    name = root.get("name", "model")
    if not _IDENT.match(name):
        raise DeckError(f"invalid problem name {name!r}")
    _warn_unknown_attrs(root, ("name",), warnings)

    blocks: dict = {}
    for child in root:
        if child.tag in ("states", "parameters", "constants", "inputs",
                         "rhs", "dataset", "loss", "solver", "optimizer",
                         "outputs"):
            if child.tag in blocks:
                raise DeckError(f"duplicate <{child.tag}> block")
            blocks[child.tag] = child
        else:
            warnings.append(f"unknown element <{child.tag}> in <problem>")

    for mandatory in ("states", "parameters", "rhs", "dataset"):
        if mandatory not in blocks:
            raise DeckError(f"missing mandatory block: {mandatory}")

    seen: dict = {}

    def declare(kind: str, nm: str) -> None:
        if not _IDENT.match(nm):
            raise DeckError(f"invalid {kind} name {nm!r}")
        if nm in _RESERVED_NAMES:
            raise DeckError(f"duplicate/reserved name: {nm!r} is reserved")
        if nm in seen:
            raise DeckError(
                f"duplicate/reserved name: {nm!r} declared as both "
                f"{seen[nm]} and {kind}"
            )
        seen[nm] = kind

    states = []
    for el in blocks["states"]:
        if el.tag != "state":
            warnings.append(f"unknown element <{el.tag}> in <states>")
            continue
        nm = _require_attr(el, "name")
        declare("state", nm)
        _warn_unknown_attrs(el, ("name",), warnings)
        states.append(StateDecl(name=nm, initial=_text_of(el)))
    if not states:
        raise DeckError("missing mandatory block: states")

    parameters = []
    for el in blocks["parameters"]:
        if el.tag != "parameter":
            warnings.append(f"unknown element <{el.tag}> in <parameters>")
            continue
        nm = _require_attr(el, "name")
        declare("parameter", nm)
        _warn_unknown_attrs(el, ("name", "lower", "upper", "scale"), warnings)
        scale = el.get("scale", "auto")
        if scale not in _SCALES:
            raise DeckError(f"unknown scale {scale!r} for parameter {nm!r}")
        parameters.append(ParamDecl(
            name=nm,
            lower=_float_attr(el, "lower"),
            upper=_float_attr(el, "upper"),
            scale=scale,
        ))
    if not parameters:
        raise DeckError("missing mandatory block: parameters")

    constants = []
    if "constants" in blocks:
        for el in blocks["constants"]:
            if el.tag != "constant":
                warnings.append(f"unknown element <{el.tag}> in <constants>")
                continue
            nm = _require_attr(el, "name")
            declare("constant", nm)
            _warn_unknown_attrs(el, ("name", "value"), warnings)
            constants.append(ConstDecl(name=nm, value=_float_attr(el, "value")))

    inputs = []
    if "inputs" in blocks:
        for el in blocks["inputs"]:
            if el.tag != "input":
                warnings.append(f"unknown element <{el.tag}> in <inputs>")
                continue
            nm = _require_attr(el, "name")
            declare("input", nm)
            _warn_unknown_attrs(el, ("name",), warnings)
            inputs.append(InputDecl(name=nm, expression=_text_of(el)))
    # input u implicitly defines symbol u_dot; reject collisions
    for u in inputs:
        dot = u.name + "_dot"
        if dot in seen:
            raise DeckError(
                f"duplicate/reserved name: {dot!r} collides with the "
                f"time derivative of input {u.name!r}"
            )

    state_names = {s.name for s in states}
    rhs: dict = {}
    for el in blocks["rhs"]:
        if el.tag != "eq":
            warnings.append(f"unknown element <{el.tag}> in <rhs>")
            continue
        nm = _require_attr(el, "state")
        if nm not in state_names:
            raise DeckError(f"rhs entry references undeclared state {nm!r}")
        if nm in rhs:
            raise DeckError(f"duplicate rhs entry for state {nm!r}")
        _warn_unknown_attrs(el, ("state",), warnings)
        rhs[nm] = _text_of(el)
    for s in states:
        rhs.setdefault(s.name, "")
    rhs = {s.name: rhs[s.name] for s in states}

    ds_el = blocks["dataset"]
    _warn_unknown_attrs(ds_el, ("path", "time", "rate_source"), warnings)
    rate_source = ds_el.get("rate_source", "finite_difference")
    if rate_source not in _RATE_SOURCES:
        raise DeckError(f"unknown rate_source {rate_source!r}")
    binds = []
    bound_columns = set()
    for el in ds_el:
        if el.tag != "bind":
            warnings.append(f"unknown element <{el.tag}> in <dataset>")
            continue
        col = _require_attr(el, "column")
        sig = _require_attr(el, "signal")
        _warn_unknown_attrs(el, ("column", "signal"), warnings)
        target, is_rate = parse_signal(sig)
        if target not in state_names:
            raise DeckError(
                f"dataset binds column {col!r} to undeclared state {target!r}"
            )
        if col in bound_columns:
            raise DeckError(f"duplicate dataset binding for column {col!r}")
        bound_columns.add(col)
        binds.append(DataBinding(column=col,
                                 signal=f"rate({target})" if is_rate else target))
    dataset = DatasetDecl(
        path=_require_attr(ds_el, "path"),
        time_column=_require_attr(ds_el, "time"),
        column_map=tuple(binds),
        rate_source=rate_source,
    )

    observed = {}
    for b in binds:
        target, is_rate = parse_signal(b.signal)
        if not is_rate and target not in observed:
            observed[target] = b.column
    states = [replace(s, observed=observed.get(s.name)) for s in states]

    loss_terms = []
    if "loss" in blocks:
        for el in blocks["loss"]:
            if el.tag != "term":
                warnings.append(f"unknown element <{el.tag}> in <loss>")
                continue
            loss_terms.append(_parse_term(el, warnings))
    if not loss_terms:
        # default objective: equal-weight mean-square term per bound signal
        signals = [b.signal for b in binds]
        w = 1.0 / len(signals) if signals else 1.0
        loss_terms = [LossTerm(signal=s, weight=w) for s in signals]

    solver = _parse_solver(blocks.get("solver"), warnings)
    optimizer = _parse_optimizer(blocks.get("optimizer"), warnings)

    if "outputs" in blocks:
        _warn_unknown_attrs(blocks["outputs"], (), warnings)
        tokens = tuple(_text_of(blocks["outputs"]).split())
        for tok in tokens:
            if tok not in _OUTPUT_KINDS:
                raise DeckError(f"unknown output kind {tok!r}")
        outputs = tokens
    else:
        outputs = _OUTPUT_KINDS

    return ProblemDeck(
        name=name,
        states=tuple(states),
        parameters=tuple(parameters),
        constants=tuple(constants),
        inputs=tuple(inputs),
        rhs=rhs,
        dataset=dataset,
        loss=tuple(loss_terms),
        solver=solver,
        optimizer=optimizer,
        outputs=outputs,
        warnings=tuple(warnings),
    )


def _parse_term(el, warnings: list) -> LossTerm:
    _warn_unknown_attrs(
        el, ("signal", "transform", "reduction", "weight", "scale", "window"),
        warnings,
    )
    sig = _require_attr(el, "signal")
    target, is_rate = parse_signal(sig)
    if not _IDENT.match(target):
        raise DeckError(f"invalid loss signal {sig!r}")
    transform = el.get("transform", "identity")
    if transform not in _TRANSFORMS:
        raise DeckError(f"unknown transform {transform!r}")
    reduction = el.get("reduction", "mean_square")
    if reduction not in _REDUCTIONS:
        raise DeckError(f"unknown reduction {reduction!r}")
    scale_text = el.get("scale", "1")
    scale: Union[float, str]
    if scale_text == "max_abs_of_data":
        scale = "max_abs_of_data"
    else:
        scale = _to_float(scale_text, f"scale of loss term {sig!r}")
    window = None
    if el.get("window") is not None:
        parts = el.get("window").split(",")
        if len(parts) != 2:
            raise DeckError(f"window of loss term {sig!r} must be 't0,t1'")
        window = (_to_float(parts[0], "window start"),
                  _to_float(parts[1], "window end"))
    weight = 1.0
    if el.get("weight") is not None:
        weight = _to_float(el.get("weight"), f"weight of loss term {sig!r}")
        if not weight > 0.0:
            raise DeckError(f"weight of loss term {sig!r} must be positive")
    return LossTerm(
        signal=f"rate({target})" if is_rate else target,
        transform=transform,
        weight=weight,
        scale=scale,
        window=window,
        reduction=reduction,
    )


def _parse_solver(el, warnings: list) -> SolverConfig:
    if el is None:
        return SolverConfig()
    _warn_unknown_attrs(
        el,
        ("method", "rtol", "atol", "t0", "t1", "max_steps", "initial_step"),
        warnings,
    )
    method = el.get("method", "dopri5")
    if method not in _SOLVER_METHODS:
        raise DeckError(f"unknown solver method {method!r}")
    atol_text = el.get("atol", "1e-9")
    parts = [p for p in atol_text.split(",") if p.strip()]
    if len(parts) == 1:
        atol: Union[float, tuple] = _to_float(parts[0], "atol")
    else:
        atol = tuple(_to_float(p, "atol") for p in parts)
    initial_step = None
    if el.get("initial_step") is not None:
        initial_step = _to_float(el.get("initial_step"), "initial_step")
    return SolverConfig(
        method=method,
        rtol=_to_float(el.get("rtol", "1e-6"), "rtol"),
        atol=atol,
        t0=_to_float(el.get("t0", "0"), "t0"),
        t1=_to_float(el.get("t1", "1"), "t1"),
        max_steps=_int_attr(el, "max_steps", 100_000),
        initial_step=initial_step,
    )


def _parse_optimizer(el, warnings: list) -> OptimizerConfig:
    if el is None:
        return OptimizerConfig()
    _warn_unknown_attrs(el, (), warnings)
    pso = PsoConfig()
    lbfgs = LbfgsConfig()
    for child in el:
        if child.tag == "pso":
            _warn_unknown_attrs(
                child,
                ("swarm_size", "iterations", "w", "c1", "c2", "seed"),
                warnings,
            )
            pso = PsoConfig(
                swarm_size=_int_attr(child, "swarm_size", 64),
                iterations=_int_attr(child, "iterations", 300),
                w=_to_float(child.get("w", "0.7"), "w"),
                c1=_to_float(child.get("c1", "1.5"), "c1"),
                c2=_to_float(child.get("c2", "1.5"), "c2"),
                seed=_int_attr(child, "seed", 0),
            )
        elif child.tag == "lbfgs":
            _warn_unknown_attrs(
                child,
                ("max_iterations", "memory", "grad_tolerance",
                 "loss_rel_tolerance"),
                warnings,
            )
            lbfgs = LbfgsConfig(
                max_iterations=_int_attr(child, "max_iterations", 100),
                memory=_int_attr(child, "memory", 10),
                grad_tolerance=_to_float(
                    child.get("grad_tolerance", "1e-8"), "grad_tolerance"),
                loss_rel_tolerance=_to_float(
                    child.get("loss_rel_tolerance", "1e-10"),
                    "loss_rel_tolerance"),
            )
        else:
            warnings.append(f"unknown element <{child.tag}> in <optimizer>")
    return OptimizerConfig(pso=pso, lbfgs=lbfgs)


def _text_of(el) -> str:
    return (el.text or "").strip()


def _require_attr(el, attr: str) -> str:
    v = el.get(attr)
    if v is None:
        raise DeckError(f"<{el.tag}> element missing required attribute {attr!r}")
    return v


def _to_float(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DeckError(f"invalid number {text!r} for {what}") from None


def _float_attr(el, attr: str) -> float:
    return _to_float(_require_attr(el, attr), f"{attr} of <{el.tag}>")


def _int_attr(el, attr: str, default: int) -> int:
    v = el.get(attr)
    if v is None:
        return default
    try:
        return int(v)
    except ValueError:
        raise DeckError(f"invalid integer {v!r} for {attr} of <{el.tag}>") from None


def _warn_unknown_attrs(el, known: tuple, warnings: list) -> None:
    for attr in el.attrib:
        if attr not in known:
            warnings.append(f"unknown attribute {attr!r} on <{el.tag}>")


# ---------------------------------------------------------------------------
# serialization


def serialize_deck(deck: ProblemDeck) -> str:
    return _render(deck, skeleton=False)


def generate_skeleton(deck: ProblemDeck) -> str:
    """Emit the deck as a template with FILL comments in empty slots."""
    return _render(deck, skeleton=True)


def _render(deck: ProblemDeck, skeleton: bool) -> str:
    out = []
    w = out.append
    w(f"<problem name={quoteattr(deck.name)}>\n")

    w("  <states>\n")
    for s in deck.states:
        body = _slot(s.initial, f"initial condition of {s.name}", skeleton)
        w(f"    <state name={quoteattr(s.name)}>{body}</state>\n")
    w("  </states>\n")

    w("  <parameters>\n")
    for p in deck.parameters:
        w(f"    <parameter name={quoteattr(p.name)} lower={_qnum(p.lower)} "
          f"upper={_qnum(p.upper)} scale={quoteattr(p.scale)}/>\n")
    w("  </parameters>\n")

    if deck.constants:
        w("  <constants>\n")
        for c in deck.constants:
            w(f"    <constant name={quoteattr(c.name)} value={_qnum(c.value)}/>\n")
        w("  </constants>\n")

    if deck.inputs:
        w("  <inputs>\n")
        for u in deck.inputs:
            body = _slot(u.expression, f"input {u.name}(t)", skeleton)
            w(f"    <input name={quoteattr(u.name)}>{body}</input>\n")
        w("  </inputs>\n")

    w("  <rhs>\n")
    for s in deck.states:
        body = _slot(deck.rhs.get(s.name, ""), f"rhs of {s.name}", skeleton)
        w(f"    <eq state={quoteattr(s.name)}>{body}</eq>\n")
    w("  </rhs>\n")

    ds = deck.dataset
    w(f"  <dataset path={quoteattr(ds.path)} time={quoteattr(ds.time_column)} "
      f"rate_source={quoteattr(ds.rate_source)}>\n")
    for b in ds.column_map:
        w(f"    <bind column={quoteattr(b.column)} signal={quoteattr(b.signal)}/>\n")
    w("  </dataset>\n")

    w("  <loss>\n")
    if skeleton and not deck.loss:
        w("    <!-- FILL: loss terms -->\n")
    for t in deck.loss:
        scale = t.scale if isinstance(t.scale, str) else _num(t.scale)
        attrs = (
            f"signal={quoteattr(t.signal)} transform={quoteattr(t.transform)} "
            f"reduction={quoteattr(t.reduction)} weight={_qnum(t.weight)} "
            f'scale="{scale}"'
        )
        if t.window is not None:
            attrs += f' window="{_num(t.window[0])},{_num(t.window[1])}"'
        w(f"    <term {attrs}/>\n")
    w("  </loss>\n")

    sv = deck.solver
    atol = (",".join(_num(a) for a in sv.atol)
            if isinstance(sv.atol, (tuple, list)) else _num(sv.atol))
    attrs = (
        f"method={quoteattr(sv.method)} rtol={_qnum(sv.rtol)} atol=\"{atol}\" "
        f"t0={_qnum(sv.t0)} t1={_qnum(sv.t1)} max_steps=\"{sv.max_steps}\""
    )
    if sv.initial_step is not None:
        attrs += f" initial_step={_qnum(sv.initial_step)}"
    w(f"  <solver {attrs}/>\n")

    pso, lb = deck.optimizer.pso, deck.optimizer.lbfgs
    w("  <optimizer>\n")
    w(f'    <pso swarm_size="{pso.swarm_size}" iterations="{pso.iterations}" '
      f"w={_qnum(pso.w)} c1={_qnum(pso.c1)} c2={_qnum(pso.c2)} "
      f'seed="{pso.seed}"/>\n')
    w(f'    <lbfgs max_iterations="{lb.max_iterations}" memory="{lb.memory}" '
      f"grad_tolerance={_qnum(lb.grad_tolerance)} "
      f"loss_rel_tolerance={_qnum(lb.loss_rel_tolerance)}/>\n")
    w("  </optimizer>\n")

    w(f"  <outputs>{escape(' '.join(deck.outputs))}</outputs>\n")
    w("</problem>\n")
    return "".join(out)


def _slot(text: str, what: str, skeleton: bool) -> str:
    if text:
        return escape(text)
    return f"<!-- FILL: {what} -->" if skeleton else ""


def _num(v: float) -> str:
    return repr(float(v))


def _qnum(v: float) -> str:
    return f'"{_num(v)}"'


# ---------------------------------------------------------------------------
# file helpers


def load_deck(path) -> ProblemDeck:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return parse_deck(text)
    except DeckError as exc:
        raise DeckError(f"{path}: {exc}", exc.line, exc.column) from None


def save_deck(deck: ProblemDeck, path) -> None:
    Path(path).write_text(serialize_deck(deck), encoding="utf-8")
