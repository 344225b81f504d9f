"""Adaptive vs perfectly adapted variance: invariant kernels vs a model that breaks the condition.

    python3 demos/stability.py
"""
from adaptive_smc import experiments as ex

for name, horizon in (("sequential-bayes-grid", 5), ("violating-two-state", 2)):
    res = ex.stability_compare(ex.make_config(model=name, particles=1000, replicates=800, seed=3,
                                              horizon=horizon, kind="stability-compare"))
    lo, hi = res.ci
    print(name)
    for n in res.n[1:]:
        print(f"  n={n}  ratio {res.ratio[n]:.3f}  95% CI [{lo[n]:.3f}, {hi[n]:.3f}]  "
              f"exact {res.oracle_adaptive[n] / res.oracle_perfect[n]:.3f}  derivative {res.stability[n]:.1e}")
