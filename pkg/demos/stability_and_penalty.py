"""
Stability bound and penalty-weight sweep
========================================

Check the perturbation bound on a coarse gamma grid, then watch the cost
error grow as the quadratic penalty weight increases.
"""

import numpy as np

from bregiot.experiments import ExperimentConfig, exp_lambda_sweep, exp_stability

# ||C_hat - C||_inf <= 2 gamma ||phi'(X_hat) - phi'(X)||_inf on every trial
cfg = ExperimentConfig("stability", n=10, trials=20, gamma=np.logspace(-2, 1, 6), gen="entropy")
agg = exp_stability(cfg)["aggregates"]
for b in agg["buckets"]:
    print(f"gamma={b['gamma']:7.3f}  pass={b['pass_rate']:.0%}  "
          f"ratio mean={b['ratio']['mean']:.2f}  min={b['ratio']['min']:.2f}")

# small penalties leave the recovered cost untouched, large ones bias it
cfg = ExperimentConfig("lambda", n=10, gamma=0.1, lam=np.logspace(-12, -2, 6).tolist(),
                       max_iters=1000)
agg = exp_lambda_sweep(cfg)["aggregates"]
print()
for lam, c, x in zip(agg["lambda"], agg["c_err"], agg["x_err"]):
    print(f"lambda={lam:7.0e}  C err={c:.2e}  X err={x:.2e}")
