"""Shared builders for model- and deck-level tests."""

import math
from types import SimpleNamespace


def mkdeck(name, states, params, rhs, consts=(), inputs=()):
    """Minimal deck stand-in for compile_model.

    states: [(name, initial_expr)], params: [(name, lo, hi, scale)],
    rhs: {state: expr}, consts: [(name, value)], inputs: [(name, expr)].
    """
    return SimpleNamespace(
        name=name,
        states=[SimpleNamespace(name=n, initial=i, observed=None)
                for n, i in states],
        parameters=[SimpleNamespace(name=n, lower=lo, upper=hi, scale=sc)
                    for n, lo, hi, sc in params],
        constants=[SimpleNamespace(name=n, value=v) for n, v in consts],
        inputs=[SimpleNamespace(name=n, expression=e) for n, e in inputs],
        rhs=dict(rhs),
    )


def decay_deck(k_lower=0.5, k_upper=5.0, scale="linear"):
    return mkdeck("decay", [("y", "1")], [("k", k_lower, k_upper, scale)],
                  {"y": "-k*y"})


def robertson_deck():
    return mkdeck(
        "robertson",
        [("y1", "1"), ("y2", "0"), ("y3", "0")],
        [("k1", 1e-3, 1.0, "log10"),
         ("k2", 1e5, 1e9, "log10"),
         ("k3", 1e2, 1e6, "log10")],
        {"y1": "-k1*y1 + k2*y2*y3",
         "y2": "k1*y1 - k2*y2*y3 - k3*y2^2",
         "y3": "k3*y2^2"},
    )


def vdp_deck():
    return mkdeck(
        "vanderpol",
        [("x1", "2"), ("x2", "0")],
        [("mu", 1.0, 100.0, "log10")],
        {"x1": "mu*(x2 - (x1^3/3 - x1))", "x2": "-x1/mu"},
    )


ROBERTSON_THETA = [0.04, 3e7, 1e4]

# reference endpoints for the Robertson problem at the true rates,
# from an independent implicit solver at rtol 1e-12 (two tolerance
# levels agreeing to 5e-16, cross-checked against two other methods)
ROBERTSON_Y_04 = (0.9999242436724949, 4.792636599915722e-05,
                  2.7829961507005204e-05)
ROBERTSON_Y_1E5 = (0.9982536038732446, 7.624764859740922e-07,
                   0.0017456336502739245)


def decay_csv_text(k=1.7, times=None, column="y"):
    """Exact-decay samples written the way Trajectory.to_csv writes them."""
    if times is None:
        times = [0.1 * (i + 1) for i in range(20)]
    lines = ["t," + column]
    for t in times:
        lines.append(f"{t!r},{math.exp(-k * t)!r}")
    return "\n".join(lines) + "\n"


def decay_deck_xml(csv_name="decay.csv", lower=0.5, upper=5.0,
                   rtol=1e-8, atol=1e-10, t1=2.0, swarm=8, iters=12,
                   pso_seed=3, lbfgs_iters=15, extra=""):
    return f"""<problem name="decay">
  <states>
    <state name="y">1</state>
  </states>
  <parameters>
    <parameter name="k" lower="{lower}" upper="{upper}" scale="linear"/>
  </parameters>
  <rhs>
    <eq state="y">-k*y</eq>
  </rhs>
  <dataset path="{csv_name}" time="t" rate_source="finite_difference">
    <bind column="y" signal="y"/>
  </dataset>
  <loss>
    <term signal="y" transform="identity" reduction="mean_square" weight="1" scale="1"/>
  </loss>
  <solver method="dopri5" rtol="{rtol}" atol="{atol}" t0="0" t1="{t1}" max_steps="100000"/>
  <optimizer>
    <pso swarm_size="{swarm}" iterations="{iters}" w="0.7" c1="1.5" c2="1.5" seed="{pso_seed}"/>
    <lbfgs max_iterations="{lbfgs_iters}" memory="10" grad_tolerance="1e-8" loss_rel_tolerance="1e-10"/>
  </optimizer>
  <outputs>params loss_history trajectory report</outputs>
{extra}</problem>
"""


def write_decay_problem(dirpath, **kwargs):
    """Materialize the decay deck and its dataset; returns the deck path."""
    k = kwargs.pop("k", 1.7)
    csv_name = kwargs.pop("csv_name", "decay.csv")
    (dirpath / csv_name).write_text(decay_csv_text(k=k), encoding="utf-8")
    deck_path = dirpath / "decay.xml"
    deck_path.write_text(decay_deck_xml(csv_name=csv_name, **kwargs),
                         encoding="utf-8")
    return deck_path
