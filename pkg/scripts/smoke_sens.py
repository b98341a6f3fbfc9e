"""Smoke checks for sens.py: step parity, analytic S, FD agreement."""
import math
import sys
from types import SimpleNamespace

sys.path.insert(0, "/root/pkg/src")

from odefit.loss import BoundDataset, LossTerm, loss_value
from odefit.model import compile_model
from odefit.sens import (fd_gradient, integrate_with_sensitivities,
                         loss_and_gradient)
from odefit.solve import SolverConfig, integrate


def mkdeck(name, states, params, rhs, inputs=(), consts=()):
    return SimpleNamespace(
        name=name,
        states=[SimpleNamespace(name=s, initial=ic, observed=None)
                for s, ic in states],
        parameters=[SimpleNamespace(name=p, lower=lo, upper=hi, scale=sc)
                    for p, lo, hi, sc in params],
        inputs=[SimpleNamespace(name=n, expression=e) for n, e in inputs],
        constants=[SimpleNamespace(name=n, value=v) for n, v in consts],
        rhs=rhs,
    )


# 1. linear ODE analytic sensitivity: ydot=-k*y, y0=1 -> S=-t*exp(-k t)
lin = compile_model(mkdeck(
    "lin", [("y", "1")], [("k", 0.1, 10.0, "linear")], {"y": "-k*y"}))
for method in ("dopri5", "tr_bdf2"):
    cfg = SolverConfig(method=method, rtol=1e-10, atol=1e-12, t0=0.0, t1=1.0)
    sol = integrate_with_sensitivities(lin, [2.0], [0.0, 0.5, 1.0], cfg)
    assert sol.status == "success"
    s_t1 = sol.sensitivities[2][0][0]
    exact = -1.0 * math.exp(-2.0)
    print(f"{method}: S(1)={s_t1:.10f} exact={exact:.10f} "
          f"diff={abs(s_t1 - exact):.2e}")
    assert abs(s_t1 - exact) < 1e-6
    # S(t0) equals dy0/dtheta = 0
    assert sol.sensitivities[0][0][0] == 0.0
    # mid-sample (dense output) check too
    exact_mid = -0.5 * math.exp(-1.0)
    assert abs(sol.sensitivities[1][0][0] - exact_mid) < 1e-6

# 2. parity: Robertson tr_bdf2, y samples bit-identical to plain integrate
rob = compile_model(mkdeck(
    "robertson",
    [("y1", "1"), ("y2", "0"), ("y3", "0")],
    [("k1", 1e-3, 1.0, "auto"), ("k2", 1e5, 1e9, "auto"),
     ("k3", 1e2, 1e6, "auto")],
    {"y1": "-k1*y1 + k2*y2*y3",
     "y2": "k1*y1 - k2*y2*y3 - k3*y2^2",
     "y3": "k3*y2^2"}))
theta = [0.04, 3e7, 1e4]
grid = [10 ** (-5 + 10 * i / 59) for i in range(60)]
cfg = SolverConfig(method="tr_bdf2", rtol=1e-6, atol=(1e-8, 1e-11, 1e-8),
                   t0=0.0, t1=1e5)
tr = integrate(rob, theta, grid, cfg)
sol = integrate_with_sensitivities(rob, theta, grid, cfg)
assert tr.status == sol.status == "success"
same = all(a == b for ra, rb in zip(tr.states, sol.trajectory.states)
           for a, b in zip(ra, rb))
print(f"tr_bdf2 parity: bitwise={same} accepted {tr.stats.accepted} "
      f"vs {sol.trajectory.stats.accepted}")
assert same
assert tr.stats.accepted == sol.trajectory.stats.accepted
assert tr.stats.rejected == sol.trajectory.stats.rejected

# 3. parity: VdP dopri5
vdp = compile_model(mkdeck(
    "vdp", [("x1", "2"), ("x2", "0")], [("mu", 1.0, 100.0, "auto")],
    {"x1": "mu*(x2 - (x1^3/3 - x1))", "x2": "-x1/mu"}))
vgrid = [40.0 * i / 49 for i in range(1, 50)]
vcfg = SolverConfig(method="dopri5", rtol=1e-10, atol=1e-12, t0=0.0, t1=40.0)
tr = integrate(vdp, [10.0], vgrid, vcfg)
sol = integrate_with_sensitivities(vdp, [10.0], vgrid, vcfg)
same = all(a == b for ra, rb in zip(tr.states, sol.trajectory.states)
           for a, b in zip(ra, rb))
print(f"dopri5 parity: bitwise={same} accepted {tr.stats.accepted} "
      f"vs {sol.trajectory.stats.accepted}")
assert same and tr.stats.accepted == sol.trajectory.stats.accepted

# 4. VdP: S vs central FD over mu (natural coords), 50 times, rel 1e-4
# at h_rel=1e-5 (the 1e-4 step's own truncation error reaches 1.1e-3 at
# the steep flank and converges O(h^2) to the sens value)
h = 1e-5 * 10.0
trp = integrate(vdp, [10.0 + h], vgrid, vcfg)
trm = integrate(vdp, [10.0 - h], vgrid, vcfg)
worst = 0.0
for i in range(len(vgrid)):
    for j in range(2):
        fd = (trp.states[i][j] - trm.states[i][j]) / (2 * h)
        s = sol.sensitivities[i][j][0]
        rel = abs(s - fd) / max(1e-8, abs(fd), abs(s))
        worst = max(worst, rel)
print(f"VdP S vs FD worst rel (h_rel=1e-5): {worst:.2e}")
assert worst < 1e-4

# 5. loss_and_gradient vs fd_gradient on Robertson (tight rtol)
tcfg = SolverConfig(method="tr_bdf2", rtol=1e-8, atol=(1e-10, 1e-13, 1e-10),
                    t0=0.0, t1=1e5)
ref = integrate(rob, theta, grid, tcfg)
data = BoundDataset(times=tuple(grid),
                    values={"y1": tuple(r[0] for r in ref.states),
                            "y2": tuple(r[1] for r in ref.states),
                            "y3": tuple(r[2] for r in ref.states)},
                    rates={})
terms = [LossTerm(signal=s) for s in ("y1", "y2", "y3")]
theta_off = [0.05, 2.5e7, 1.2e4]
val, grad = loss_and_gradient(rob, theta_off, data, terms, tcfg)
assert val == loss_value(rob, theta_off, data, terms, tcfg), "value not bit-equal"
fd = fd_gradient(rob, theta_off, data, terms, tcfg, 1e-5)
for k in range(3):
    rel = abs(grad[k] - fd[k]) / max(abs(grad[k]), abs(fd[k]), 1e-12)
    print(f"grad[{k}]: sens={grad[k]:+.8e} fd={fd[k]:+.8e} rel={rel:.2e}")
    assert rel < 1e-3

# 6. rate-signal gradient path (ARC-style log10 rate term)
terms_r = [LossTerm(signal="rate(y3)", transform="identity", weight=1.0)]
rates = {"y3": tuple(rob.rhs(grid[i], ref.states[i], theta)[2]
                     for i in range(len(grid)))}
data_r = BoundDataset(times=tuple(grid),
                      values={"y1": data.values["y1"]}, rates=rates)
val_r, grad_r = loss_and_gradient(rob, theta_off, data_r, terms_r, tcfg)
fd_r = fd_gradient(rob, theta_off, data_r, terms_r, tcfg, 1e-5)
for k in range(3):
    rel = abs(grad_r[k] - fd_r[k]) / max(abs(grad_r[k]), abs(fd_r[k]), 1e-12)
    print(f"rate grad[{k}]: sens={grad_r[k]:+.6e} fd={fd_r[k]:+.6e} rel={rel:.2e}")
    assert rel < 1e-3

# 7. failure sentinel
val_f, grad_f = loss_and_gradient(rob, [1e300, 3e7, 1e4], data, terms, tcfg)
print(f"failure sentinel: ({val_f}, {grad_f})")
assert val_f == math.inf and grad_f == [0.0, 0.0, 0.0]

# 8. fd_gradient h_rel=0
try:
    fd_gradient(rob, theta, data, terms, tcfg, 0.0)
    raise AssertionError("no error for h_rel=0")
except ValueError as e:
    assert str(e) == "step must be positive"
    print("h_rel=0 raises:", e)

print("ALL SENS SMOKE CHECKS PASSED")
