"""Compile a problem deck into an evaluable ODE system.

Expressions are constant-folded once and compiled to closure trees over
a flat slot environment [t, states..., params..., inputs..., input
derivatives...].  Jacobians are assembled column-wise from forward-mode
dual passes, one seed per state or parameter.  Input signals are
functions of t alone; their time derivatives come from a dual pass in t.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Callable

from odefit.coords import make_space
from odefit.expr import (
    ExprError,
    compile_dual,
    compile_value,
    fold_constants,
    free_symbols,
    parse_expr,
)

if TYPE_CHECKING:
    from odefit.deck import Deck


class CompiledModel:
    """Immutable evaluable system; all evaluators are pure."""

    def __init__(self, deck) -> None:
        self.name = deck.name
        self.state_names = tuple(s.name for s in deck.states)
        self.param_names = tuple(p.name for p in deck.parameters)
        self.input_names = tuple(u.name for u in deck.inputs)
        self.n_states = len(self.state_names)
        self.n_params = len(self.param_names)
        self.state_index = {n: i for i, n in enumerate(self.state_names)}
        self.param_index = {n: i for i, n in enumerate(self.param_names)}
        constants = {c.name: c.value for c in deck.constants}

        # search box for the optimizers, when the deck declares bounds
        self.param_space = None
        if self.n_params and all(
            getattr(p, "lower", None) is not None
            and getattr(p, "upper", None) is not None
            for p in deck.parameters
        ):
            self.param_space = make_space(
                self.param_names,
                [float(p.lower) for p in deck.parameters],
                [float(p.upper) for p in deck.parameters],
                [getattr(p, "scale", "auto") for p in deck.parameters],
            )

        n, m, p = self.n_states, self.n_params, len(self.input_names)
        slot_of = {"t": 0}
        for i, name in enumerate(self.state_names):
            slot_of[name] = 1 + i
        for j, name in enumerate(self.param_names):
            slot_of[name] = 1 + n + j
        for k, name in enumerate(self.input_names):
            slot_of[name] = 1 + n + m + k
        for k, name in enumerate(self.input_names):
            slot_of[name + "_dot"] = 1 + n + m + p + k
        self._slot_of = slot_of
        self._env_len = 1 + n + m + 2 * p

        # input signals: value and dual-in-t closures over a [t] env
        t_slot = {"t": 0}
        self._input_val = []
        self._input_dual = []
        self.inputs: dict[str, tuple[Callable, Callable]] = {}
        for u in deck.inputs:
            ast = fold_constants(parse_expr(u.expression), constants)
            extra = free_symbols(ast) - {"t"}
            if extra:
                raise ExprError(
                    f"input {u.name!r} may only depend on t, found {sorted(extra)}"
                )
            val = compile_value(ast, t_slot)
            dual = compile_dual(ast, t_slot)
            self._input_val.append(val)
            self._input_dual.append(dual)
            self.inputs[u.name] = (
                (lambda t, _v=val: _v([t])),
                (lambda t, _d=dual: _d([t], [1.0])[1]),
            )

        # RHS expressions in declared state order
        used_dots = set()
        rhs_val = []
        rhs_dual = []
        for name in self.state_names:
            text = deck.rhs.get(name, "")
            ast = fold_constants(parse_expr(text), constants)
            for sym in free_symbols(ast):
                if sym.endswith("_dot") and sym[:-4] in self.inputs:
                    used_dots.add(sym[:-4])
            rhs_val.append(compile_value(ast, slot_of))
            rhs_dual.append(compile_dual(ast, slot_of))
        self._rhs_val = rhs_val
        self._rhs_dual = rhs_dual
        self._needs_input_dots = bool(used_dots)

        # initial conditions over a parameter-only env
        ic_slot = {name: j for j, name in enumerate(self.param_names)}
        self._ic_val = []
        self._ic_dual = []
        for s in deck.states:
            ast = fold_constants(parse_expr(s.initial), constants)
            extra = free_symbols(ast) - set(self.param_names)
            if extra:
                raise ExprError(
                    f"initial condition of {s.name!r} may only reference "
                    f"parameters and constants, found {sorted(extra)}"
                )
            self._ic_val.append(compile_value(ast, ic_slot))
            self._ic_dual.append(compile_dual(ast, ic_slot))

        self.rhs = self._make_rhs()
        self.jac_y = self._make_jac(seed_base=1, seed_count=n)
        self.jac_theta = self._make_jac(seed_base=1 + n, seed_count=m)

    # -- environment assembly -------------------------------------------

    def _env(self, t: float, y, theta) -> list:
        env = [t]
        env.extend(y)
        env.extend(theta)
        if self._input_val:
            tenv = [t]
            if self._needs_input_dots:
                duals = [d(tenv, [1.0]) for d in self._input_dual]
                env.extend(v for v, _ in duals)
                env.extend(d for _, d in duals)
            else:
                env.extend(v(tenv) for v in self._input_val)
                env.extend(0.0 for _ in self._input_val)
        return env

    # -- evaluator construction -------------------------------------------
    #
    # rhs and the Jacobians are built as closures in __init__ so the
    # integrator inner loops avoid attribute lookups and method dispatch.

    def _make_rhs(self):
        fns = self._rhs_val
        if not self._input_val:
            if len(fns) == 1:
                f0, = fns
                def rhs(t, y, theta):
                    env = [t]
                    env.extend(y)
                    env.extend(theta)
                    return [f0(env)]
                return rhs
            if len(fns) == 2:
                f0, f1 = fns
                def rhs(t, y, theta):
                    env = [t]
                    env.extend(y)
                    env.extend(theta)
                    return [f0(env), f1(env)]
                return rhs
            if len(fns) == 3:
                f0, f1, f2 = fns
                def rhs(t, y, theta):
                    env = [t]
                    env.extend(y)
                    env.extend(theta)
                    return [f0(env), f1(env), f2(env)]
                return rhs
            def rhs(t, y, theta):
                env = [t]
                env.extend(y)
                env.extend(theta)
                return [f(env) for f in fns]
            return rhs
        make_env = self._env
        def rhs(t, y, theta):
            env = make_env(t, y, theta)
            return [f(env) for f in fns]
        return rhs

    def _make_jac(self, seed_base: int, seed_count: int):
        duals = self._rhs_dual
        make_env = self._env
        env_len = self._env_len
        n = len(duals)
        def jac(t, y, theta):
            env = make_env(t, y, theta)
            dots = [0.0] * env_len
            out = [[0.0] * seed_count for _ in range(n)]
            for j in range(seed_count):
                dots[seed_base + j] = 1.0
                for i in range(n):
                    out[i][j] = duals[i](env, dots)[1]
                dots[seed_base + j] = 0.0
            return out
        return jac

    # -- remaining evaluators ---------------------------------------------

    def initial_state(self, theta) -> list:
        env = list(theta)
        return [f(env) for f in self._ic_val]

    def initial_state_jac(self, theta) -> list:
        env = list(theta)
        dots = [0.0] * self.n_params
        cols = []
        for j in range(self.n_params):
            dots[j] = 1.0
            cols.append([f(env, dots)[1] for f in self._ic_dual])
            dots[j] = 0.0
        return [[cols[j][i] for j in range(self.n_params)]
                for i in range(self.n_states)]


def compile_model(deck) -> CompiledModel:
    """Compile a lint-clean deck; inconsistencies raise ExprError."""
    return CompiledModel(deck)


def rhs_sum_check(model: CompiledModel, t: float, y, theta) -> float:
    """Sum of RHS components; zero for mass-conserving systems."""
    return sum(model.rhs(t, y, theta))
