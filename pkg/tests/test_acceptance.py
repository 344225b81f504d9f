"""Acceptance suite: each test runs one criterion at its stated protocol and
tolerance and records a single PASS/FAIL line.

Run directly (``python3 tests/test_acceptance.py``) or through pytest, where
the lines are repeated in the terminal summary.
"""
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_smc import experiments as ex
from adaptive_smc import models, oracle
from adaptive_smc.cli import execute
from adaptive_smc.core import run_adaptive
from adaptive_smc.tempering import ess, solve_next_beta, tempered_run

try:
    from conftest import record_criterion
except ImportError:  # direct execution from another directory
    def record_criterion(line):
        print(line)

pytestmark = pytest.mark.slow

PHI3 = (0.0, 1.0, 3.0)


def report(number, ok, detail):
    record_criterion(f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")
    return ok


def within(est, se, target, n_se, rel=None):
    ok = abs(est - target) <= n_se * se
    if rel is not None:
        ok = ok or abs(est - target) <= rel * abs(target)
    return ok


def random_finite_model(rng, m=3, d=1):
    a, b = rng.normal(size=m), rng.normal(size=m)
    C, D = rng.normal(size=(m, m)), rng.normal(size=(m, m))
    s = rng.normal(size=(m, d))
    eta0 = rng.dirichlet(np.ones(m))

    def G(n, xi):
        return np.exp(0.5 * a + 0.3 * b * xi.sum())

    def M(n, xi):
        z = C + D * xi.sum() * 0.5
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    return oracle.FiniteModel(eta0, G, M, lambda n: s), rng.normal(size=m)


# 1 ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def three_state_samples():
    cfg = ex.make_config(model="three-state-drift", particles=1000, replicates=2000, seed=101,
                         phi=PHI3, horizon=5)
    t0 = time.time()
    summary = ex.replicate(cfg)
    return summary, time.time() - t0


def test_criterion_1_unnormalized_clt_matches_oracle(three_state_samples):
    s, elapsed = three_state_samples
    ok = elapsed < 120
    worst = 0.0
    for n in range(6):
        est, se, orc = s.scaled_var_unnormalized[n], s.N * s.var_unnormalized_se[n], s.oracle_unnormalized[n]
        good = abs(est - orc) <= 4 * se and abs(est - orc) <= 0.15 * orc
        ok &= good
        worst = max(worst, abs(est - orc) / orc)
    assert report(1, ok, f"max rel dev {worst:.3f} over n=0..5 (limit 4 SE and 0.15), "
                         f"{elapsed:.1f}s (limit 120s)")


# 2 ---------------------------------------------------------------------------


def test_criterion_2_normalized_clt_and_recursion(three_state_samples):
    s, _ = three_state_samples
    ok = True
    worst = 0.0
    for n in range(6):
        est, se, orc = s.scaled_var_normalized[n], s.N * s.var_normalized_se[n], s.oracle_normalized[n]
        ok &= abs(est - orc) <= 4 * se and abs(est - orc) <= 0.15 * orc
        worst = max(worst, abs(est - orc) / orc)
    rng = np.random.default_rng(7)
    gap = 0.0
    for _ in range(50):
        fm, phi = random_finite_model(rng)
        for n in range(5):
            a = oracle.asymp_var_normalized(fm, n, phi, method="recursion")
            b = oracle.asymp_var_normalized(fm, n, phi, method="direct")
            gap = max(gap, float(np.max(np.abs(a - b))))
    ok &= gap < 1e-10
    assert report(2, ok, f"max rel dev {worst:.3f} (limit 4 SE and 0.15); recursion vs direct "
                         f"max gap {gap:.2e} on 50 random models (limit 1e-10)")


# 3 ---------------------------------------------------------------------------


def test_criterion_3_stability_under_invariance():
    grid = np.linspace(-1.5, 1.5, 7)
    cfg = ex.make_config(model="sequential-bayes-grid", particles=2000, replicates=2000, seed=303,
                         phi=tuple(grid), horizon=5)
    res = ex.stability_compare(cfg)
    lo, hi = res.ci
    covers = bool(np.all((lo <= 1.0) & (hi >= 1.0)))
    stab = float(np.nanmax(res.stability))
    _, fm = models.build_sequential_bayes_grid(observation_count=5)
    zero_gap = max(float(np.max(np.abs(oracle.asymp_var_unnormalized(fm, n, grid)
                                       - oracle.asymp_var_unnormalized(fm, n, grid, zero_derivative=True))))
                   for n in range(6))
    bad = ex.make_config(model="violating-two-state", particles=2000, replicates=2000, seed=304,
                         phi=(0.0, 1.0), horizon=1)
    vres = ex.stability_compare(bad)
    vlo, vhi = vres.ci
    excludes = bool(vlo[1] > 1.0 or vhi[1] < 1.0)
    ok = covers and stab < 1e-6 and zero_gap < 1e-8 and excludes
    intervals = " ".join(f"[{a:.3f},{b:.3f}]" for a, b in zip(lo, hi))
    assert report(3, ok, f"stable intervals {intervals}; stability_check max {stab:.1e}; zeroed-derivative "
                         f"gap {zero_gap:.1e}; violating n=1 ratio {vres.ratio[1]:.3f} "
                         f"CI [{vlo[1]:.3f},{vhi[1]:.3f}] (oracle {vres.oracle_adaptive[1] / vres.oracle_perfect[1]:.2f})")


# 4 ---------------------------------------------------------------------------


def test_criterion_4_linear_variance_growth():
    t0 = time.time()
    cfg = ex.make_config(model="homogeneous", particles=500, replicates=500, seed=404, horizon=20)
    res = ex.variance_growth(cfg)
    elapsed = time.time() - t0
    rel = abs(res.slope - res.oracle_increment) / res.oracle_increment
    ok = res.r2 > 0.9 and rel <= 0.20 and elapsed < 300
    assert report(4, ok, f"R^2 {res.r2:.3f} (limit >0.9); slope {res.slope:.4f} vs oracle increment "
                         f"{res.oracle_increment:.4f}, rel dev {rel:.3f} (limit 0.20); {elapsed:.1f}s")


# 5 ---------------------------------------------------------------------------

_ESS_FAILURES = []


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=40),
       st.floats(0.0, 1.0), st.lists(st.floats(1e-3, 0.5), min_size=1, max_size=8))
def _ess_monotone(values, start, gaps):
    # grid spacing >= 1e-3: below that 1 - ESS ~ lam^2 Var(V) underflows double precision
    v = np.asarray(values)
    if np.ptp(v) < 1e-3:
        return
    lams = start + np.concatenate([[0.0], np.cumsum(gaps)])
    e = [ess(v, lam) for lam in lams]
    if not all(a > b for a, b in zip(e, e[1:])):
        _ESS_FAILURES.append((values, lams))


def test_criterion_5_ess_and_ladder():
    _ess_monotone()
    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(1000):
        v = rng.normal(size=rng.integers(2, 200))
        alpha = rng.uniform(0.05, 0.95)
        b = solve_next_beta(v, 0.0, 1e6, alpha)
        if b < 1e6:
            worst = max(worst, abs(ess(v, b) - alpha))
    tm = models.build_two_state_tempering()
    prob = models.finite_tempering_problem(tm)
    Ns = np.array([100, 1000, 10000])
    rmse = []
    for k, N in enumerate(Ns):
        seeds = ex.replicate_seeds(5000 + k, 500)
        b1 = np.array([tempered_run(prob, int(N), s, horizon=1).ladder[1] for s in seeds])
        rmse.append(np.sqrt(np.mean((b1 - np.log(3)) ** 2)))
    slope = np.polyfit(np.log(Ns), np.log(rmse), 1)[0]
    ok = not _ESS_FAILURES and worst < 1e-8 and abs(slope + 0.5) <= 0.15
    assert report(5, ok, f"ESS monotonicity failures {len(_ESS_FAILURES)} / 1000 clouds; max |ESS-alpha| "
                         f"{worst:.1e} (limit 1e-8); beta_1 RMSE slope {slope:.3f} (target -0.5 +/- 0.15)")


# 6 ---------------------------------------------------------------------------


def test_criterion_6_gaussian_normalizing_constant():
    t0 = time.time()
    prob = models.build_gaussian_tempering()
    z = np.array([np.exp(tempered_run(prob, 20000, s).log_normalizing_constant)
                  for s in ex.replicate_seeds(606, 20)])
    elapsed = time.time() - t0
    mean, se = z.mean(), z.std(ddof=1) / np.sqrt(len(z))
    target = 2 ** -0.5
    ok = abs(mean - target) <= 3 * se and elapsed < 120
    assert report(6, ok, f"mean Z {mean:.5f} +/- {se:.5f} vs {target:.5f} "
                         f"({abs(mean - target) / se:.2f} SE, limit 3); R=20, {elapsed:.1f}s (limit 120s)")


# 7 ---------------------------------------------------------------------------


def test_criterion_7_tempering_clt():
    cfg = ex.make_config(model="two-state-tempering", particles=5000, replicates=5000, seed=707,
                         horizon=1, phi=(0.0, 1.0))
    rep = ex.tempering_report(cfg)
    C = rep.oracle_cov[1]
    pairs = [("var beta", rep.beta_nvar[1], rep.beta_nvar_se[1], C[0, 0]),
             ("cov", rep.cross_ncov[1], rep.cross_ncov_se[1], C[0, 1]),
             ("var gamma", rep.gamma_nvar[1], rep.gamma_nvar_se[1], C[1, 1])]
    ok = True
    parts = []
    for name, est, se, orc in pairs:
        good = within(est, se, orc, 4, rel=0.25)
        ok &= good
        parts.append(f"{name} {est:.4f} vs {orc:.4f}")
    assert report(7, ok, "; ".join(parts) + " (limit 25% or 4 SE)")


# 8 ---------------------------------------------------------------------------


def test_criterion_8_dimension_scaling():
    t0 = time.time()
    prop = ex.dscaling(ex.make_config(model="product-gaussian", replicates=2000, seed=808,
                                      d_grid=(4, 16, 64), n_factor=8))
    fixed = ex.dscaling(ex.make_config(model="product-gaussian", replicates=2000, seed=809,
                                       d_grid=(4, 16, 64), fixed_particles=4096))
    elapsed = time.time() - t0
    dm = prop.d_mse
    flat = dm.max() / dm.min() < 2.0
    slope = fixed.excess_slope()
    sloped = bool(np.isfinite(slope) and abs(slope - 1.0) <= 0.3)
    ok = flat and sloped and elapsed < 600
    excess = " ".join(f"{e:.2e}+/-{s:.1e}" for e, s in zip(fixed.excess, fixed.excess_se))
    assert report(8, ok, f"d*MSE at N=8d {np.round(dm, 4).tolist()} ratio {dm.max() / dm.min():.2f} "
                         f"(limit <2); fixed N=4096 excess MSE {excess}, slope {slope:.2f} "
                         f"(target 1.0 +/- 0.3); {elapsed:.0f}s (limit 600s)")


# 9 ---------------------------------------------------------------------------


def test_criterion_9_conservation_and_determinism():
    unit = models.finite_to_adaptive(models.build_unit_potential(), 6)
    exact = all(np.all(run_adaptive(unit, N, s).weight_products == 1.0)
                for N in (1, 7, 100) for s in range(20))
    cfg = dict(model="three-state-drift", particles=200, replicates=40, seed=909, phi=PHI3, horizon=3)
    texts = []
    for threads in (1, 3, 8):
        header, rows = execute(ex.make_config(kind="run", threads=threads, **cfg))
        texts.append(ex.format_csv(header, rows))
    tcfg = dict(model="two-state-tempering", particles=300, replicates=30, seed=910, horizon=2)
    for threads in (1, 4):
        header, rows = execute(ex.make_config(kind="tempering", threads=threads, **tcfg))
        texts.append(ex.format_csv(header, rows))
    identical = texts[0] == texts[1] == texts[2] and texts[3] == texts[4]
    ok = exact and identical
    assert report(9, ok, f"unit-potential weight products exactly 1: {exact}; CSV byte-identical across "
                         f"thread counts: {identical}")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
