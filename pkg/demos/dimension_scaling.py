"""Coordinate-adapted pCN moves in growing dimension: MSE of the half-space probability.

    python3 demos/dimension_scaling.py
"""
from adaptive_smc import experiments as ex

res = ex.dscaling(ex.make_config(model="product-gaussian", kind="dscaling", d_grid=(4, 16, 64),
                                 replicates=500, seed=9))
print("  d     N      MSE      d*MSE   move rate")
for i, d in enumerate(res.d):
    print(f"{d:3d}  {res.N[i]:4d}  {res.mse[i]:.5f}  {res.d_mse[i]:.4f}  {res.acceptance[i]:.3f}")
