"""Relative variance of the normalising-constant estimate grows linearly in the horizon.

    python3 demos/variance_growth.py
"""
from adaptive_smc import experiments as ex

res = ex.variance_growth(ex.make_config(model="homogeneous", particles=500, replicates=500, seed=4,
                                        horizon=15, kind="variance-growth"))
for n, v, o in zip(res.n, res.scaled_var, res.oracle):
    print(f"{n:3d}  {v:7.4f}  exact {o:7.4f}")
print(f"fitted slope {res.slope:.4f} (R^2 {res.r2:.3f}), exact increment {res.oracle_increment:.4f}")
