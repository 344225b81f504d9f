"""Exact flow, adaptation derivative and variance decomposition on a small finite model.

    python3 demos/oracle_tour.py
"""
import numpy as np

from adaptive_smc import models, oracle

fm = models.build_three_state_drift()
phi = np.array([0.0, 1.0, 3.0])
flow = oracle.exact_flow(fm, 3)
for n in range(4):
    xb = flow.xi_bar[n]
    print(f"n={n}  eta {np.round(flow.eta[n], 4)}  gamma(1) {flow.gamma_mass[n]:.4f}  "
          f"xi_bar {None if xb is None else np.round(xb, 4)}")

print("\n        adaptive   frozen   (N * asymptotic variance of gamma_n^N(phi))")
for n in range(4):
    a = oracle.asymp_var_unnormalized(fm, n, phi, flow)[0, 0]
    f = oracle.asymp_var_unnormalized(fm, n, phi, flow, zero_derivative=True)[0, 0]
    print(f"n={n}  {a:9.4f}  {f:8.4f}")
print(f"\nderivative size at n=1: {oracle.stability_check(fm, 1, phi, flow):.3e}")
print("recursion vs direct, n=3:", oracle.asymp_var_normalized(fm, 3, phi, flow)[0, 0],
      oracle.asymp_var_normalized(fm, 3, phi, flow, method="direct")[0, 0])
