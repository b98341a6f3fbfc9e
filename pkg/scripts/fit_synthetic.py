"""Full two-stage fits on the benchmark cases, with recovery and shape checks."""

import sys
import time

sys.path.insert(0, "src")

from odefit.bench import load_benchmark, load_case_data
from odefit.local_opt import two_stage_fit
from odefit.model import compile_model

names = sys.argv[1:] or ["robertson", "vanderpol"]

for name in names:
    case = load_benchmark(name)
    model = compile_model(case.deck)
    data = load_case_data(case)
    t0 = time.perf_counter()
    res = two_stage_fit(model, data, list(case.deck.loss),
                        case.deck.solver, case.deck.optimizer)
    dt = time.perf_counter() - t0
    print(f"== {name}: {dt:.1f}s status={res.status} traj={res.trajectory.status}")
    print(f"   loss pso={res.loss_pso:.6e} final={res.loss_final:.6e}")
    losses = [row["loss"] for row in res.loss_history]
    stages = [row["stage"] for row in res.loss_history]
    nonincreasing = all(b <= a for a, b in zip(losses, losses[1:]))
    lb = [l for s, l in zip(stages, losses) if s == "lbfgs"]
    strict = bool(lb) and min(lb) < res.loss_pso
    print(f"   history rows={len(losses)} nonincreasing={nonincreasing} "
          f"lbfgs_rows={len(lb)} lbfgs_strict_decrease={strict}")
    if case.tolerance:
        for p, tol in case.tolerance.items():
            true = case.truth[p]
            pso = res.theta_pso[p]
            fin = res.theta_final[p]
            rel = abs(fin - true) / abs(true)
            print(f"   {p}: pso={pso:.6e} final={fin:.6e} "
                  f"true={true:.3e} rel={rel:.4%} "
                  f"{'OK' if rel <= tol else 'MISS'} (tol {tol:.0%})")
    else:
        for p in model.param_names:
            print(f"   {p}: pso={res.theta_pso[p]:.6e} final={res.theta_final[p]:.6e} "
                  f"true={case.truth[p]:.4e}")
    sys.stdout.flush()
print("done")
