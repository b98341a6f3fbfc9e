"""Expression DSL: parsing, printing, evaluation, and forward-mode duals.

The grammar covers arithmetic over named symbols with a fixed function
vocabulary.  Precedence, tightest first: ``^`` (right associative), unary
minus, ``*``/``/``, ``+``/``-``.  ``pi`` and ``e`` are reserved constants
and never count as free symbols.

Evaluation follows IEEE semantics: division by zero, domain errors, and
overflow produce ``inf``/``nan`` values that propagate through the tree
instead of raising.  Derivative conventions: ``d|x|/dx = sign(x)`` with
``sign(0) = 0``, and ``sign`` itself has derivative 0 everywhere.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Union

_INF = math.inf
_NAN = math.nan

UNARY_OPS = ("neg", "abs", "sign", "exp", "ln", "log10", "sqrt", "sin", "cos", "tanh")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")
CALL_FNS = ("min", "max")

# function-call spellings accepted by the parser, mapped to Unary ops
_UNARY_FN = {name: name for name in UNARY_OPS if name != "neg"}
_RESERVED_CONSTS = {"pi": math.pi, "e": math.e}


class ExprError(ValueError):
    """Syntax or semantic error in expression text.

    ``span`` is a ``(start, end)`` pair of 0-based character offsets into
    the source text, end exclusive.
    """

    def __init__(self, message: str, span: tuple[int, int] = (0, 0)):
        super().__init__(message)
        self.span = span


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Sym:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple["Expr", ...]


Expr = Union[Const, Sym, Unary, Binary, Call]


# ---------------------------------------------------------------------------
# tokenizer


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # "num" | "name" | "op" | "end"
    text: str
    start: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            # skip trailing whitespace before declaring an error
            rest = text[pos:]
            stripped = rest.lstrip()
            if not stripped:
                break
            at = pos + (len(rest) - len(stripped))
            raise ExprError(
                f"unexpected character {stripped[0]!r}", span=(at, at + 1)
            )
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def span(self, tok: _Tok) -> tuple[int, int]:
        if tok.kind == "end":
            return (tok.start, tok.start)
        return (tok.start, tok.start + len(tok.text))

    def expect_op(self, op: str) -> _Tok:
        tok = self.take()
        if tok.kind != "op" or tok.text != op:
            what = "end of input" if tok.kind == "end" else repr(tok.text)
            raise ExprError(f"expected {op!r}, found {what}", span=self.span(tok))
        return tok

    def parse(self) -> Expr:
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExprError(
                f"unexpected trailing {tok.text!r}", span=self.span(tok)
            )
        return node

    def expr(self) -> Expr:
        node = self.term()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in "+-":
                self.take()
                rhs = self.term()
                node = Binary("add" if tok.text == "+" else "sub", node, rhs)
            else:
                return node

    def term(self) -> Expr:
        node = self.factor()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in "*/":
                self.take()
                rhs = self.factor()
                node = Binary("mul" if tok.text == "*" else "div", node, rhs)
            else:
                return node

    def factor(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.take()
            return Unary("neg", self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.take()
            # right associative; exponent may carry a unary minus
            return Binary("pow", base, self.factor())
        return base

    def atom(self) -> Expr:
        tok = self.take()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "name":
            nxt = self.peek()
            if nxt.kind == "op" and nxt.text == "(":
                return self.call(tok)
            if tok.text in _UNARY_FN or tok.text in CALL_FNS:
                raise ExprError(
                    f"reserved function name {tok.text!r} used as a symbol",
                    span=self.span(tok),
                )
            return Sym(tok.text)
        if tok.kind == "op" and tok.text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        what = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExprError(f"expected a value, found {what}", span=self.span(tok))

    def call(self, name_tok: _Tok) -> Expr:
        fn = name_tok.text
        self.expect_op("(")
        args = [self.expr()]
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text == ",":
                self.take()
                args.append(self.expr())
            else:
                break
        self.expect_op(")")
        if fn in _UNARY_FN:
            if len(args) != 1:
                raise ExprError(
                    f"{fn}() takes exactly 1 argument, got {len(args)}",
                    span=self.span(name_tok),
                )
            return Unary(fn, args[0])
        if fn in CALL_FNS:
            if len(args) < 2:
                raise ExprError(
                    f"{fn}() takes at least 2 arguments, got {len(args)}",
                    span=self.span(name_tok),
                )
            return Call(fn, tuple(args))
        raise ExprError(f"unknown function {fn!r}", span=self.span(name_tok))


def parse_expr(text: str) -> Expr:
    """Parse expression text into an AST.

    Raises ExprError with a character span on malformed input.
    """
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# canonical printer

_PREC_ADD = 10
_PREC_MUL = 20
_PREC_NEG = 30
_PREC_POW = 40
_PREC_ATOM = 50

_BIN_PREC = {"add": _PREC_ADD, "sub": _PREC_ADD, "mul": _PREC_MUL,
             "div": _PREC_MUL, "pow": _PREC_POW}
_BIN_TEXT = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


def _prec(node: Expr) -> int:
    if isinstance(node, Binary):
        return _BIN_PREC[node.op]
    if isinstance(node, Unary) and node.op == "neg":
        return _PREC_NEG
    return _PREC_ATOM


def print_expr(node: Expr) -> str:
    """Emit canonical text; parse_expr(print_expr(ast)) == ast."""
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Sym):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            inner = print_expr(node.arg)
            if _prec(node.arg) < _PREC_NEG:
                inner = f"({inner})"
            return f"-{inner}"
        return f"{node.op}({print_expr(node.arg)})"
    if isinstance(node, Call):
        return f"{node.fn}({', '.join(print_expr(a) for a in node.args)})"
    p = _BIN_PREC[node.op]
    left = print_expr(node.left)
    right = print_expr(node.right)
    if node.op == "pow":
        # right associative: parenthesize an equal-precedence left child
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < p:
            right = f"({right})"
    else:
        if _prec(node.left) < p:
            left = f"({left})"
        # left associative: an equal-precedence right child needs parens
        if _prec(node.right) <= p:
            right = f"({right})"
    return f"{left}{_BIN_TEXT[node.op]}{right}"


# ---------------------------------------------------------------------------
# IEEE-propagating scalar operations


def _safe_div(a: float, b: float) -> float:
    try:
        return a / b
    except ZeroDivisionError:
        if a == 0.0 or a != a:
            return _NAN
        same = (a > 0.0) == (math.copysign(1.0, b) > 0.0)
        return _INF if same else -_INF


def _safe_pow(a: float, b: float) -> float:
    try:
        return math.pow(a, b)
    except ValueError:
        # negative base with non-integer exponent, or 0 raised to b < 0
        return _INF if a == 0.0 else _NAN
    except OverflowError:
        if a < 0.0 and b == round(b) and int(b) % 2 == 1:
            return -_INF
        return _INF


def _safe_exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError:
        return _INF


def _safe_ln(a: float) -> float:
    if a != a:
        return _NAN
    try:
        return math.log(a)
    except ValueError:
        return -_INF if a == 0.0 else _NAN


def _safe_log10(a: float) -> float:
    if a != a:
        return _NAN
    try:
        return math.log10(a)
    except ValueError:
        return -_INF if a == 0.0 else _NAN


def _safe_sqrt(a: float) -> float:
    try:
        return math.sqrt(a)
    except ValueError:
        return _NAN


def _safe_sin(a: float) -> float:
    try:
        return math.sin(a)
    except ValueError:  # sin(inf)
        return _NAN


def _safe_cos(a: float) -> float:
    try:
        return math.cos(a)
    except ValueError:
        return _NAN


def _sign(a: float) -> float:
    if a != a:
        return _NAN
    if a > 0.0:
        return 1.0
    if a < 0.0:
        return -1.0
    return 0.0


_UNARY_VAL: dict[str, Callable[[float], float]] = {
    "neg": lambda a: -a,
    "abs": abs,
    "sign": _sign,
    "exp": _safe_exp,
    "ln": _safe_ln,
    "log10": _safe_log10,
    "sqrt": _safe_sqrt,
    "sin": _safe_sin,
    "cos": _safe_cos,
    "tanh": math.tanh,
}

_LN10 = math.log(10.0)


# ---------------------------------------------------------------------------
# closure compilers
#
# Expressions are compiled once into trees of small closures over a flat
# slot environment (a list of floats).  The integrators call these in
# their inner loops, so the per-node work is kept to a bare arithmetic
# operation plus the child calls.


def compile_value(node: Expr, slot_of: Mapping[str, int]) -> Callable[[list], float]:
    """Compile to a closure mapping a slot environment to a float.

    Symbols are resolved through ``slot_of`` at compile time; unknown
    symbols raise ExprError here rather than at call time.  Leaf operands
    (slots and constants) are inlined into their parent's closure, so the
    evaluator call count roughly tracks operator count, not node count.
    """
    kind, val = _cv(node, slot_of)
    if kind == "c":
        c = val
        return lambda env: c
    if kind == "s":
        i = val
        return lambda env: env[i]
    return val


def _cv(node: Expr, slot_of: Mapping[str, int]):
    """Compile to a tagged operand: ('c', const) | ('s', slot) | ('f', fn)."""
    if isinstance(node, Const):
        return "c", node.value
    if isinstance(node, Sym):
        if node.name in slot_of:
            return "s", slot_of[node.name]
        if node.name in _RESERVED_CONSTS:
            return "c", _RESERVED_CONSTS[node.name]
        raise ExprError(f"unknown symbol {node.name!r}")
    if isinstance(node, Unary):
        kind, val = _cv(node.arg, slot_of)
        op = node.op
        if op == "neg":
            if kind == "c":
                return "c", -val
            if kind == "s":
                i = val
                return "f", lambda env: -env[i]
            f = val
            return "f", lambda env: -f(env)
        g = _UNARY_VAL[op]
        if kind == "c":
            return "f", _const_fn(g(val))
        if kind == "s":
            i = val
            return "f", lambda env: g(env[i])
        f = val
        return "f", lambda env: g(f(env))
    if isinstance(node, Call):
        fns = [compile_value(a, slot_of) for a in node.args]
        if node.fn == "min":
            return "f", lambda env: min(f(env) for f in fns)
        return "f", lambda env: max(f(env) for f in fns)
    return _cv_binary(node, slot_of)


def _const_fn(c: float):
    return lambda env: c


def _cv_binary(node: Binary, slot_of):
    op = node.op
    lk, lv = _cv(node.left, slot_of)
    rk, rv = _cv(node.right, slot_of)

    if op == "pow":
        # constant exponents get dedicated closures; 2 and 3 avoid libm
        if rk == "c":
            c = rv
            if lk == "c":
                return "f", _const_fn(_safe_pow(lv, c))
            if c == 2.0:
                if lk == "s":
                    i = lv
                    return "f", lambda env: env[i] * env[i]
                f = lv
                def _sq(env):
                    v = f(env)
                    return v * v
                return "f", _sq
            if c == 3.0:
                if lk == "s":
                    i = lv
                    return "f", lambda env: env[i] * env[i] * env[i]
                f = lv
                def _cube(env):
                    v = f(env)
                    return v * v * v
                return "f", _cube
            if lk == "s":
                i = lv
                return "f", lambda env: _safe_pow(env[i], c)
            f = lv
            return "f", lambda env: _safe_pow(f(env), c)
        fl = _as_fn(lk, lv)
        fr = _as_fn(rk, rv)
        return "f", lambda env: _safe_pow(fl(env), fr(env))

    if op == "add":
        if lk == "s" and rk == "s":
            i, j = lv, rv
            return "f", lambda env: env[i] + env[j]
        if lk == "s" and rk == "c":
            i, c = lv, rv
            return "f", lambda env: env[i] + c
        if lk == "c" and rk == "s":
            c, j = lv, rv
            return "f", lambda env: c + env[j]
        if lk == "c" and rk == "c":
            return "f", _const_fn(lv + rv)
        if lk == "f" and rk == "s":
            f, j = lv, rv
            return "f", lambda env: f(env) + env[j]
        if lk == "s" and rk == "f":
            i, f = lv, rv
            return "f", lambda env: env[i] + f(env)
        if lk == "f" and rk == "c":
            f, c = lv, rv
            return "f", lambda env: f(env) + c
        if lk == "c" and rk == "f":
            c, f = lv, rv
            return "f", lambda env: c + f(env)
        fl, fr = lv, rv
        return "f", lambda env: fl(env) + fr(env)

    if op == "sub":
        if lk == "s" and rk == "s":
            i, j = lv, rv
            return "f", lambda env: env[i] - env[j]
        if lk == "s" and rk == "c":
            i, c = lv, rv
            return "f", lambda env: env[i] - c
        if lk == "c" and rk == "s":
            c, j = lv, rv
            return "f", lambda env: c - env[j]
        if lk == "c" and rk == "c":
            return "f", _const_fn(lv - rv)
        if lk == "f" and rk == "s":
            f, j = lv, rv
            return "f", lambda env: f(env) - env[j]
        if lk == "s" and rk == "f":
            i, f = lv, rv
            return "f", lambda env: env[i] - f(env)
        if lk == "f" and rk == "c":
            f, c = lv, rv
            return "f", lambda env: f(env) - c
        if lk == "c" and rk == "f":
            c, f = lv, rv
            return "f", lambda env: c - f(env)
        fl, fr = lv, rv
        return "f", lambda env: fl(env) - fr(env)

    if op == "mul":
        # three-slot products appear throughout mass-action kinetics
        if lk == "f" and rk == "s" and isinstance(node.left, Binary) \
                and node.left.op == "mul":
            inner = node.left
            ik, iv = _cv(inner.left, slot_of)
            jk, jv = _cv(inner.right, slot_of)
            if ik == "s" and jk == "s":
                i, j, k = iv, jv, rv
                return "f", lambda env: env[i] * env[j] * env[k]
        if lk == "s" and rk == "s":
            i, j = lv, rv
            return "f", lambda env: env[i] * env[j]
        if lk == "s" and rk == "c":
            i, c = lv, rv
            return "f", lambda env: env[i] * c
        if lk == "c" and rk == "s":
            c, j = lv, rv
            return "f", lambda env: c * env[j]
        if lk == "c" and rk == "c":
            return "f", _const_fn(lv * rv)
        if lk == "f" and rk == "s":
            f, j = lv, rv
            return "f", lambda env: f(env) * env[j]
        if lk == "s" and rk == "f":
            i, f = lv, rv
            return "f", lambda env: env[i] * f(env)
        if lk == "f" and rk == "c":
            f, c = lv, rv
            return "f", lambda env: f(env) * c
        if lk == "c" and rk == "f":
            c, f = lv, rv
            return "f", lambda env: c * f(env)
        fl, fr = lv, rv
        return "f", lambda env: fl(env) * fr(env)

    # div
    if lk == "s" and rk == "s":
        i, j = lv, rv
        return "f", lambda env: _safe_div(env[i], env[j])
    if lk == "s" and rk == "c":
        i, c = lv, rv
        if c == c and c != 0.0:
            return "f", lambda env: env[i] / c
        return "f", lambda env: _safe_div(env[i], c)
    if lk == "c" and rk == "s":
        c, j = lv, rv
        return "f", lambda env: _safe_div(c, env[j])
    if lk == "c" and rk == "c":
        v = _safe_div(lv, rv)
        return "f", _const_fn(v)
    if lk == "f" and rk == "c":
        f, c = lv, rv
        if c == c and c != 0.0:
            return "f", lambda env: f(env) / c
        return "f", lambda env: _safe_div(f(env), c)
    fl = _as_fn(lk, lv)
    fr = _as_fn(rk, rv)
    return "f", lambda env: _safe_div(fl(env), fr(env))


def _as_fn(kind, val):
    if kind == "c":
        return _const_fn(val)
    if kind == "s":
        i = val
        return lambda env: env[i]
    return val


def _dual_pow(va: float, da: float, vb: float, db: float) -> tuple[float, float]:
    v = _safe_pow(va, vb)
    if da == 0.0 and db == 0.0:
        return v, 0.0
    if db == 0.0:
        return v, vb * _safe_pow(va, vb - 1.0) * da
    d = v * (db * _safe_ln(va) + vb * _safe_div(da, va))
    return v, d


def compile_dual(node: Expr, slot_of: Mapping[str, int]) -> Callable[[list, list], tuple]:
    """Compile to a closure ``(env, dots) -> (value, derivative)``.

    ``dots`` holds the seed derivatives for each slot; the result is the
    directional derivative along that seed.
    """
    if isinstance(node, Const):
        c = node.value
        return lambda env, dots: (c, 0.0)
    if isinstance(node, Sym):
        if node.name in _RESERVED_CONSTS and node.name not in slot_of:
            c = _RESERVED_CONSTS[node.name]
            return lambda env, dots: (c, 0.0)
        try:
            i = slot_of[node.name]
        except KeyError:
            raise ExprError(f"unknown symbol {node.name!r}") from None
        return lambda env, dots: (env[i], dots[i])
    if isinstance(node, Unary):
        f = compile_dual(node.arg, slot_of)
        op = node.op
        if op == "neg":
            def _neg(env, dots):
                v, d = f(env, dots)
                return -v, -d
            return _neg
        if op == "abs":
            def _abs(env, dots):
                v, d = f(env, dots)
                return abs(v), _sign(v) * d
            return _abs
        if op == "sign":
            def _sgn(env, dots):
                v, _ = f(env, dots)
                return _sign(v), 0.0
            return _sgn
        if op == "exp":
            def _exp(env, dots):
                v, d = f(env, dots)
                ev = _safe_exp(v)
                return ev, ev * d
            return _exp
        if op == "ln":
            def _ln(env, dots):
                v, d = f(env, dots)
                return _safe_ln(v), _safe_div(d, v)
            return _ln
        if op == "log10":
            def _log10(env, dots):
                v, d = f(env, dots)
                return _safe_log10(v), _safe_div(d, v * _LN10)
            return _log10
        if op == "sqrt":
            def _sqrt(env, dots):
                v, d = f(env, dots)
                s = _safe_sqrt(v)
                return s, 0.0 if d == 0.0 else _safe_div(d, 2.0 * s)
            return _sqrt
        if op == "sin":
            def _sin(env, dots):
                v, d = f(env, dots)
                return _safe_sin(v), _safe_cos(v) * d
            return _sin
        if op == "cos":
            def _cos(env, dots):
                v, d = f(env, dots)
                return _safe_cos(v), -_safe_sin(v) * d
            return _cos
        def _tanh(env, dots):
            v, d = f(env, dots)
            tv = math.tanh(v)
            return tv, (1.0 - tv * tv) * d
        return _tanh
    if isinstance(node, Call):
        fns = [compile_dual(a, slot_of) for a in node.args]
        pick = min if node.fn == "min" else max
        def _call(env, dots):
            pairs = [f(env, dots) for f in fns]
            return pick(pairs, key=lambda p: p[0])
        return _call
    fl = compile_dual(node.left, slot_of)
    fr = compile_dual(node.right, slot_of)
    op = node.op
    if op == "add":
        def _add(env, dots):
            va, da = fl(env, dots)
            vb, db = fr(env, dots)
            return va + vb, da + db
        return _add
    if op == "sub":
        def _sub(env, dots):
            va, da = fl(env, dots)
            vb, db = fr(env, dots)
            return va - vb, da - db
        return _sub
    if op == "mul":
        def _mul(env, dots):
            va, da = fl(env, dots)
            vb, db = fr(env, dots)
            return va * vb, da * vb + va * db
        return _mul
    if op == "div":
        def _div(env, dots):
            va, da = fl(env, dots)
            vb, db = fr(env, dots)
            v = _safe_div(va, vb)
            return v, _safe_div(da - v * db, vb)
        return _div
    def _pow(env, dots):
        va, da = fl(env, dots)
        vb, db = fr(env, dots)
        return _dual_pow(va, da, vb, db)
    return _pow


# ---------------------------------------------------------------------------
# dict-environment front ends


def _slots_for(env: Mapping[str, float]) -> tuple[dict[str, int], list]:
    names = sorted(env)
    slot_of = {n: i for i, n in enumerate(names)}
    return slot_of, [float(env[n]) for n in names]


def eval_expr(node: Expr, env: Mapping[str, float]) -> float:
    """Evaluate with symbol values from a mapping; IEEE propagation."""
    slot_of, values = _slots_for(env)
    return compile_value(node, slot_of)(values)


def eval_dual(
    node: Expr, env: Mapping[str, float], seed: Union[str, Mapping[str, float]]
) -> tuple[float, float]:
    """Evaluate value and directional derivative in one forward pass.

    ``seed`` is either a symbol name (one-hot direction) or a mapping
    assigning the derivative component of each symbol; unnamed symbols
    get component 0.
    """
    if isinstance(seed, str):
        seed = {seed: 1.0}
    for name in seed:
        if name in _RESERVED_CONSTS and name not in env:
            raise ExprError(f"cannot differentiate with respect to constant {name!r}")
    slot_of, values = _slots_for(env)
    for name in seed:
        if name not in slot_of:
            slot_of = dict(slot_of)
            slot_of[name] = len(values)
            values = values + [0.0]
    dots = [0.0] * len(values)
    for name, component in seed.items():
        dots[slot_of[name]] = float(component)
    return compile_dual(node, slot_of)(values, dots)


def free_symbols(node: Expr) -> set[str]:
    """All symbol names in the tree, excluding the constants pi and e."""
    out: set[str] = set()
    _collect_syms(node, out)
    return out - set(_RESERVED_CONSTS)


def _collect_syms(node: Expr, out: set[str]) -> None:
    if isinstance(node, Sym):
        out.add(node.name)
    elif isinstance(node, Unary):
        _collect_syms(node.arg, out)
    elif isinstance(node, Binary):
        _collect_syms(node.left, out)
        _collect_syms(node.right, out)
    elif isinstance(node, Call):
        for a in node.args:
            _collect_syms(a, out)


# ---------------------------------------------------------------------------
# constant folding


def fold_constants(node: Expr, bindings: Mapping[str, float] | None = None) -> Expr:
    """Substitute named constants and collapse constant subtrees.

    ``pi`` and ``e`` always fold.  A subtree is collapsed only when its
    value is finite, so expressions that hit IEEE specials keep their
    structure and reproduce the special at evaluation time.
    """
    bind = dict(_RESERVED_CONSTS)
    if bindings:
        bind.update(bindings)

    def rec(n: Expr) -> Expr:
        if isinstance(n, Const):
            return n
        if isinstance(n, Sym):
            if n.name in bind:
                return Const(float(bind[n.name]))
            return n
        if isinstance(n, Unary):
            arg = rec(n.arg)
            if isinstance(arg, Const):
                v = _UNARY_VAL[n.op](arg.value)
                if math.isfinite(v):
                    return Const(v)
            return Unary(n.op, arg)
        if isinstance(n, Call):
            args = tuple(rec(a) for a in n.args)
            if all(isinstance(a, Const) for a in args):
                vals = [a.value for a in args]
                v = min(vals) if n.fn == "min" else max(vals)
                if math.isfinite(v):
                    return Const(v)
            return Call(n.fn, args)
        left = rec(n.left)
        right = rec(n.right)
        if isinstance(left, Const) and isinstance(right, Const):
            a, b = left.value, right.value
            if n.op == "add":
                v = a + b
            elif n.op == "sub":
                v = a - b
            elif n.op == "mul":
                v = a * b
            elif n.op == "div":
                v = _safe_div(a, b)
            else:
                v = _safe_pow(a, b)
            if math.isfinite(v):
                return Const(v)
        return Binary(n.op, left, right)

    return rec(node)
