"""Smoke checks for local_opt: engine behavior plus deck-bound refine."""

import math
import sys

sys.path.insert(0, "src")

from odefit.local_opt import minimize_lbfgs, refine, two_stage_fit


def check(name, ok, detail=""):
    print(("PASS" if ok else "FAIL"), name, detail)
    if not ok:
        sys.exit(1)


# 1. convex quadratic 0.5*||x - a||^2: exact after one unit step
a = [0.3, -1.7, 2.5, 0.02]


def quad(x):
    g = [x[j] - a[j] for j in range(len(a))]
    return 0.5 * sum(v * v for v in g), g


x0 = [5.0, 4.0, -3.0, 2.0]
xs, hist = minimize_lbfgs(quad, x0)
err = max(abs(xs[j] - a[j]) for j in range(4))
iters = max(r["iteration"] for r in hist)
check("quadratic", err < 1e-10 and iters <= 20,
      f"err={err:.3e} iters={iters}")

# 2. Rosenbrock from the classic start
def rosen(x):
    x1, x2 = x
    f = (1.0 - x1) ** 2 + 100.0 * (x2 - x1 * x1) ** 2
    g = [-2.0 * (1.0 - x1) - 400.0 * x1 * (x2 - x1 * x1),
         200.0 * (x2 - x1 * x1)]
    return f, g


xs, hist = minimize_lbfgs(rosen, [-1.2, 1.0], max_iterations=200)
err = max(abs(xs[0] - 1.0), abs(xs[1] - 1.0))
iters = max(r["iteration"] for r in hist)
check("rosenbrock", err < 1e-6,
      f"err={err:.3e} iters={iters} status={hist[-1]['status']}")

# 3. Armijo inequality replays from the recorded history rows
ok = True
prev = hist[0]["loss"]
for row in hist[1:]:
    if row["step_length"] > 0.0:
        if not row["loss"] <= prev + 1e-4 * row["slope"]:
            ok = False
        prev = row["loss"]
check("armijo_replay", ok)

# 4. losses non-increasing, best-seen returned
losses = [r["loss"] for r in hist]
check("monotone", all(b <= a + 1e-300 for a, b in zip(losses, losses[1:])))

# 5. box projection: minimum outside the box lands on the face
xs, hist = minimize_lbfgs(quad, [0.5, 0.5, 0.5, 0.5],
                          lower=[0.0] * 4, upper=[1.0] * 4)
expect = [0.3, 0.0, 1.0, 0.02]
err = max(abs(xs[j] - expect[j]) for j in range(4))
check("box_projection", err < 1e-8,
      f"err={err:.3e} status={hist[-1]['status']}")

# 6. non-finite start raises the documented error
try:
    minimize_lbfgs(lambda x: (float("nan"), [0.0]), [0.0])
    check("feasible_start", False)
except ValueError as e:
    check("feasible_start", "refinement requires feasible start" in str(e))

# 7. max_iterations=0 returns the start unchanged
xs, hist = minimize_lbfgs(quad, x0, max_iterations=0)
check("zero_iters", xs == [float(v) for v in x0]
      and hist[-1]["status"] == "max_iterations")

# 8. deck-bound refine on a linear decay model
from types import SimpleNamespace

from odefit.deck import LbfgsConfig, OptimizerConfig, PsoConfig
from odefit.loss import BoundDataset, LossTerm, loss_value
from odefit.model import compile_model
from odefit.solve import SolverConfig, integrate


def mkdeck(name, states, params, rhs):
    return SimpleNamespace(
        name=name,
        states=[SimpleNamespace(name=n, initial=ic, observed=None)
                for n, ic in states],
        parameters=[SimpleNamespace(name=n, lower=lo, upper=hi, scale=sc)
                    for n, lo, hi, sc in params],
        inputs=[], constants=[],
        rhs=dict(rhs),
    )


deck = mkdeck("decay", [("y", "1.0")], [("k", 0.1, 10.0, "linear")],
              {"y": "-k * y"})
model = compile_model(deck)
cfg = SolverConfig(method="dopri5", rtol=1e-10, atol=1e-12,
                   t0=0.0, t1=3.0)
times = [0.2 * i for i in range(1, 16)]
k_true = 1.7
ref = integrate(model, [k_true], times, cfg)
data = BoundDataset(times=tuple(times),
                    values={"y": tuple(r[0] for r in ref.states)},
                    rates={})
terms = [LossTerm(signal="y")]

theta, hist = refine(model, data, terms, cfg, [0.4],
                     LbfgsConfig(max_iterations=60))
check("refine_linear", abs(theta[0] - k_true) < 1e-7,
      f"k={theta[0]:.10f} status={hist[-1]['status']}")

# 9. two_stage_fit end to end on the same problem
opt = OptimizerConfig(
    pso=PsoConfig(swarm_size=8, iterations=25, seed=3),
    lbfgs=LbfgsConfig(max_iterations=40),
)
res = two_stage_fit(model, data, terms, cfg, opt)
ok = (abs(res.theta_final["k"] - k_true) < 1e-6
      and res.loss_final <= res.loss_pso
      and set(res.theta_pso) == {"k"}
      and res.trajectory.status == "success"
      and len(res.trajectory.times) == len(times))
check("two_stage", ok,
      f"k={res.theta_final['k']:.8f} pso={res.loss_pso:.3e} "
      f"final={res.loss_final:.3e} status={res.status}")

# 10. stage handoff: first lbfgs loss equals last pso loss bitwise
pso_rows = [r for r in res.loss_history if r["stage"] == "pso"]
lb_rows = [r for r in res.loss_history if r["stage"] == "lbfgs"]
check("handoff", lb_rows[0]["loss"] == pso_rows[-1]["loss"]
      and len(pso_rows) == 26)

# 11. max_iterations=0 gives the PSO-only result
opt0 = OptimizerConfig(pso=PsoConfig(swarm_size=8, iterations=25, seed=3),
                       lbfgs=LbfgsConfig(max_iterations=0))
res0 = two_stage_fit(model, data, terms, cfg, opt0)
check("pso_only", res0.status == "pso_only"
      and res0.theta_final == res0.theta_pso
      and res0.loss_final == res.loss_pso)

print("all local_opt smoke checks passed")
