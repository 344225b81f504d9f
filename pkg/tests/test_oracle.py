import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_smc import models, oracle
from adaptive_smc.oracle import FiniteModel, OracleModelError, TemperingFiniteModel


def random_model(seed, m=3, d=1, invariant=False):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=m), rng.normal(size=m)
    C, D = rng.normal(size=(m, m)), rng.normal(size=(m, m))
    s = rng.normal(size=(m, d))

    def G(n, xi):
        return np.exp(0.5 * a + 0.3 * b * xi.sum())

    def M(n, xi):
        z = C + 0.5 * D * xi.sum()
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    return FiniteModel(rng.dirichlet(np.ones(m)), G, M, lambda n: s), rng.normal(size=m)


def non_adaptive_variance(eta0, Gs, Ms, phi):
    """Independent sum over p of gamma_p(1)^2 Var_{eta_p}(Q_{p,n} phi) by explicit products."""
    n = len(Ms)
    etas, gammas = [eta0], [1.0]
    for G, M in zip(Gs, Ms):
        w = etas[-1] * G
        gammas.append(gammas[-1] * w.sum())
        etas.append(w @ M / w.sum())
    total = 0.0
    for p in range(n + 1):
        f = phi.copy()
        for q in range(n, p, -1):
            f = Gs[q - 1] * (Ms[q - 1] @ f)
        mean = etas[p] @ f
        total += gammas[p] ** 2 * (etas[p] @ (f - mean) ** 2)
    return total


def test_two_state_flow():
    f = oracle.exact_flow(models.build_two_state(), 1)
    np.testing.assert_allclose(f.eta[1], [1 / 3, 2 / 3], atol=1e-15)
    assert f.gamma_mass[1] == pytest.approx(1.5, abs=1e-15)


def test_uniform_fixed_point():
    fm = models.build_unit_potential(5)
    f = oracle.exact_flow(fm, 6)
    for n in range(7):
        np.testing.assert_allclose(f.eta[n], np.full(5, 0.2), atol=1e-15)
        assert f.gamma_mass[n] == 1.0


def test_horizon_zero():
    fm = models.build_three_state_drift()
    f = oracle.exact_flow(fm, 0)
    assert len(f.eta) == 1 and np.array_equal(f.eta[0], fm.eta0) and f.gamma_mass[0] == 1.0


def test_statistic_outside_domain_is_error():
    fm = FiniteModel(np.array([0.5, 0.5]), lambda n, xi: np.ones(2), lambda n, xi: np.eye(2),
                     lambda n: np.array([[0.0], [4.0]]), lambda n: (np.array([0.0]), np.array([1.0])))
    with pytest.raises(OracleModelError):
        oracle.exact_flow(fm, 1)


@pytest.mark.parametrize("kw", [dict(eta0=np.array([0.5, 0.6])),
                                dict(kernel_fn=lambda n, xi: np.array([[0.5, 0.4], [0.0, 1.0]])),
                                dict(potential_fn=lambda n, xi: np.array([1.0, 0.0]))])
def test_model_validation(kw):
    base = dict(eta0=np.array([0.5, 0.5]), potential_fn=lambda n, xi: np.ones(2),
                kernel_fn=lambda n, xi: np.eye(2), statistic_matrix=lambda n: np.zeros((2, 0)))
    base.update(kw)
    with pytest.raises(OracleModelError):
        oracle.exact_flow(FiniteModel(**base), 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_flow_conservation(seed):
    fm, _ = random_model(seed)
    f = oracle.exact_flow(fm, 6)
    prod = 1.0
    for n in range(7):
        assert abs(f.eta[n].sum() - 1.0) < 1e-12
        assert abs(f.gamma_mass[n] - prod) < 1e-12 * max(1.0, prod)
        if n < 6:
            prod *= f.eta[n] @ f.potentials[n + 1]


def test_L_constant_statistic_is_Q():
    fm = models.build_two_state()
    f = oracle.exact_flow(fm, 1)
    phi = np.array([0.3, -1.0])
    np.testing.assert_array_equal(oracle.semigroup_L(fm, 1, phi, f)[:, 0], f.Q[1] @ phi)


def test_L_xi_free_model_is_Q():
    fm = FiniteModel(np.array([0.2, 0.8]), lambda n, xi: np.array([1.0, 2.0]),
                     lambda n, xi: np.array([[0.7, 0.3], [0.4, 0.6]]), lambda n: np.array([[0.0], [1.0]]))
    f = oracle.exact_flow(fm, 1)
    phi = np.array([1.0, 5.0])
    np.testing.assert_allclose(oracle.semigroup_L(fm, 1, phi, f)[:, 0], f.Q[1] @ phi, atol=1e-9)


def exp_potential_model():
    K = np.array([[0.6, 0.4], [0.1, 0.9]])
    return FiniteModel(np.array([0.5, 0.5]), lambda n, xi: np.array([np.exp(xi[0]), 1.0]),
                       lambda n, xi: K, lambda n: np.array([[0.0], [1.0]]),
                       potential_grad=lambda n, xi: np.array([[np.exp(xi[0]), 0.0]]),
                       kernel_grad=lambda n, xi: np.zeros((1, 2, 2))), K


def test_finite_difference_matches_analytic():
    fm, K = exp_potential_model()
    xi = np.array([0.5])
    phi = np.array([[1.0, 0.0], [2.0, 1.0]])
    fd = oracle.dQ_phi(fm, 1, xi, phi)[0]
    analytic = np.diag([np.exp(0.5), 0.0]) @ K @ phi
    np.testing.assert_allclose(fd, analytic, atol=1e-6)
    np.testing.assert_allclose(oracle.dQ_phi(fm, 1, xi, phi, analytic=True)[0], analytic, atol=1e-14)


def test_fd_step_shrinks_near_boundary_then_errors():
    fm = FiniteModel(np.array([1.0 - 1e-7, 1e-7]), lambda n, xi: np.ones(2),
                     lambda n, xi: np.tile([1 - xi[0], xi[0]], (2, 1)), lambda n: np.array([[0.0], [1.0]]),
                     lambda n: (np.array([0.0]), np.array([1.0])))
    oracle.semigroup_L(fm, 1, np.array([0.0, 1.0]))  # step shrinks to fit
    edge = FiniteModel(np.array([1.0, 0.0]), fm.potential_fn, fm.kernel_fn, fm.statistic_matrix,
                       fm.statistic_domain)
    with pytest.raises(OracleModelError):
        oracle.semigroup_L(edge, 1, np.array([0.0, 1.0]))


def test_L_compose_identity():
    fm = models.build_three_state_drift()
    phi = np.array([1.0, 2.0, 4.0])
    np.testing.assert_array_equal(oracle.semigroup_L_compose(fm, 3, 3, phi)[:, 0], phi)


def test_unnormalized_n0():
    fm = models.build_three_state_drift()
    phi = np.array([1.0, 2.0, 4.0])
    expected = fm.eta0 @ phi**2 - (fm.eta0 @ phi) ** 2
    assert oracle.asymp_var_unnormalized(fm, 0, phi)[0, 0] == pytest.approx(expected, abs=1e-15)


def test_unnormalized_matches_independent_non_adaptive_calculator():
    fm = models.build_two_state(potential=(0.7, 1.9))
    rng = np.random.default_rng(3)
    Ks = [rng.dirichlet(np.ones(3), size=3) for _ in range(4)]
    Gs = [rng.uniform(0.5, 2.0, size=3) for _ in range(4)]
    fm = FiniteModel(np.array([0.2, 0.5, 0.3]), lambda n, xi: Gs[n], lambda n, xi: Ks[n - 1],
                     lambda n: np.zeros((3, 0)))
    phi = np.array([1.0, -2.0, 0.5])
    for n in range(5):
        ours = oracle.asymp_var_unnormalized(fm, n, phi)[0, 0]
        assert ours == pytest.approx(non_adaptive_variance(fm.eta0, Gs[:n], Ks[:n], phi), rel=1e-12)
    const = oracle.asymp_var_unnormalized(fm, 4, np.full(3, 2.0))[0, 0]
    assert const == pytest.approx(non_adaptive_variance(fm.eta0, Gs[:4], Ks[:4], np.full(3, 2.0)), rel=1e-12)


@pytest.mark.parametrize("n", [0, 1, 4, 9])
def test_unnormalized_uniform_identity(n):
    fm = FiniteModel(np.array([0.5, 0.5]), lambda k, xi: np.ones(2), lambda k, xi: np.eye(2),
                     lambda k: np.zeros((2, 0)))
    assert oracle.asymp_var_unnormalized(fm, n, np.array([0.0, 1.0]))[0, 0] == pytest.approx(0.25 * (n + 1))


def test_normalized_base_and_constant():
    fm = models.build_three_state_drift()
    phi = np.array([1.0, 2.0, 4.0])
    assert oracle.asymp_var_normalized(fm, 0, phi)[0, 0] == pytest.approx(
        oracle.covariance(fm.eta0, phi)[0, 0])
    for n in range(5):
        assert np.allclose(oracle.asymp_var_normalized(fm, n, np.full(3, 7.0)), 0.0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 2))
def test_normalized_recursion_equals_direct(seed, d):
    fm, phi = random_model(seed, d=d)
    for n in range(5):
        a = oracle.asymp_var_normalized(fm, n, phi, method="recursion")
        b = oracle.asymp_var_normalized(fm, n, phi, method="direct")
        assert np.max(np.abs(a - b)) < 1e-10


def test_vector_test_function_covariance():
    fm = models.build_three_state_drift()
    phi = np.column_stack([[1.0, 2.0, 4.0], [0.0, 1.0, 0.0]])
    full = oracle.asymp_var_unnormalized(fm, 3, phi)
    assert full.shape == (2, 2) and np.allclose(full, full.T)
    assert full[0, 0] == pytest.approx(oracle.asymp_var_unnormalized(fm, 3, phi[:, 0])[0, 0])


def test_nc_unit_identity_zero():
    fm = FiniteModel(np.array([0.3, 0.7]), lambda n, xi: np.ones(2), lambda n, xi: np.eye(2),
                     lambda n: np.zeros((2, 0)))
    assert oracle.nc_relative_variance(fm, 5) == 0.0


def test_nc_homogeneous_exactly_linear():
    fm = models.build_homogeneous()
    eta, g = fm.eta0, fm.G(0, None)
    increment = (eta @ g**2 - (eta @ g) ** 2) / (eta @ g) ** 2
    vals = np.array([oracle.nc_relative_variance(fm, n) for n in range(12)])
    np.testing.assert_allclose(vals, increment * np.arange(12), rtol=1e-9, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_nc_equals_unnormalized_at_one(seed):
    fm, _ = random_model(seed)
    f = oracle.exact_flow(fm, 5)
    for n in range(6):
        lhs = oracle.nc_relative_variance(fm, n, f)
        rhs = oracle.asymp_var_unnormalized(fm, n, np.ones(3), f)[0, 0] / f.gamma_mass[n] ** 2
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))


def test_stability_invariant_kernels():
    _, fm = models.build_sequential_bayes_grid()
    for n in range(1, 6):
        assert oracle.stability_check(fm, n, np.linspace(-1, 2, 7)) < 1e-6


def test_stability_violated():
    fm = models.build_violating_two_state()
    assert oracle.stability_check(fm, 1, np.array([0.0, 1.0])) > 1e-2
    # analytic: d/dxi of eta0 (M_xi phi) = 1 for phi = indicator of state 1
    assert oracle.stability_check(fm, 1, np.array([0.0, 1.0])) == pytest.approx(1.0, abs=1e-8)


def test_violating_variances():
    fm = models.build_violating_two_state()
    phi = np.array([0.0, 1.0])
    assert oracle.asymp_var_unnormalized(fm, 1, phi)[0, 0] == pytest.approx(0.5, abs=1e-9)
    assert oracle.asymp_var_unnormalized(fm, 1, phi, zero_derivative=True)[0, 0] == pytest.approx(0.25)


def test_stability_check_on_constant_statistic_returns_derivative():
    fm = models.build_two_state()
    assert oracle.stability_check(fm, 1, np.array([0.0, 1.0])) == 0.0


def test_telescoping_under_stability():
    for fm in (models.build_sequential_bayes_grid()[1], models.build_homogeneous()):
        f = oracle.exact_flow(fm, 4)
        rng = np.random.default_rng(0)
        for p in range(1, 5):
            phi = rng.normal(size=fm.m)
            lhs = f.eta[p - 1] @ oracle.semigroup_L(fm, p, phi, f)[:, 0] / (f.eta[p - 1] @ f.potentials[p])
            assert abs(lhs - f.eta[p] @ phi) < 1e-8


def test_zeroed_derivative_equals_full_under_stability():
    for fm in (models.build_sequential_bayes_grid()[1], models.build_homogeneous()):
        phi = np.arange(fm.m, dtype=float) ** 2
        for n in range(5):
            full = oracle.asymp_var_unnormalized(fm, n, phi)[0, 0]
            zero = oracle.asymp_var_unnormalized(fm, n, phi, zero_derivative=True)[0, 0]
            assert abs(full - zero) < 1e-8


@pytest.mark.parametrize("build", [models.build_three_state_drift, models.build_violating_two_state])
def test_richardson_step_sensitivity(build):
    fm = build()
    phi = np.arange(fm.m, dtype=float) + 1.0
    for n in (1, 2):
        base = oracle.asymp_var_unnormalized(fm, n, phi)[0, 0]
        for scale in (0.5, 2.0):
            other = oracle.asymp_var_unnormalized(fm, n, phi, step_scale=scale)[0, 0]
            assert abs(other - base) < 1e-4 * abs(base)


# tempering --------------------------------------------------------------------


def test_ladder_constant_V():
    tm = TemperingFiniteModel(np.full(3, 2.0), np.ones(3), lambda xi, b: np.eye(3), 0.0, 4.0, 0.5)
    np.testing.assert_array_equal(oracle.limit_ladder(tm, 1), [0.0, 4.0])


def test_ladder_two_state_ln3():
    assert oracle.limit_ladder(models.build_two_state_tempering(), 1)[1] == pytest.approx(np.log(3), abs=1e-9)


def test_ladder_increment_shrinks_with_alpha():
    tm = models.build_two_state_tempering()
    hi = oracle.limit_ladder(tm, 1, alpha=0.999)[1]
    lo = oracle.limit_ladder(tm, 1, alpha=0.9)[1]
    assert 0 < hi < lo


def test_ladder_rejects_non_invariant_kernel():
    tm = TemperingFiniteModel(np.array([0.0, 1.0]), np.ones(2), lambda xi, b: np.array([[0.0, 1.0], [0.0, 1.0]]),
                              0.0, 10.0, 0.8)
    with pytest.raises(OracleModelError, match="generation 1"):
        oracle.limit_ladder(tm, 2)


def test_tempering_cov_base_case():
    tm = models.build_two_state_tempering()
    phi = np.array([0.0, 1.0])
    C = oracle.tempering_clt_cov(tm, 0, phi)
    assert np.all(C[0] == 0) and np.all(C[:, 0] == 0)
    assert C[1, 1] == pytest.approx(0.25)


def test_tempering_A_structure():
    tm = models.build_two_state_tempering()
    phi = np.column_stack([[0.0, 1.0], [2.0, -1.0]])
    ladder = oracle.limit_ladder(tm, 3)
    for n in (1, 2):
        A = oracle.tempering_A(tm, n, phi, ladder)
        assert A.shape == (3, 5)
        assert A[0, 0] == 1.0
        np.testing.assert_array_equal(A[1:, 3:], np.eye(2))


def test_tempering_literal_entries_differ_only_past_first_rung():
    tm = models.build_two_state_tempering()
    phi = np.array([0.0, 1.0])
    ladder = oracle.limit_ladder(tm, 2)
    np.testing.assert_allclose(oracle.tempering_clt_cov(tm, 1, phi, ladder),
                               oracle.tempering_clt_cov(tm, 1, phi, ladder, literal_entries=True))
    gamma1 = np.exp(tm.log_Z_ratio(ladder[1]))
    A = oracle.tempering_A(tm, 2, phi, ladder)
    L = oracle.tempering_A(tm, 2, phi, ladder, literal_entries=True)
    assert A[1, 0] == pytest.approx(gamma1 * L[1, 0])


def test_tempering_frozen_ladder_reduces_to_non_adaptive():
    tm = models.build_two_state_tempering(beta_star=0.3)
    phi = np.array([1.0, 3.0])
    ladder = oracle.limit_ladder(tm, 4)
    assert np.all(ladder[1:] == 0.3)
    # cross-check: a fixed-temperature finite model with G_0 = exp(-0.3 V), G_n = 1 afterwards
    G = [np.exp(-0.3 * tm.V)] + [np.ones(2)] * 3
    fm = FiniteModel(tm.tempered(0.0), lambda n, xi: G[n],
                     lambda n, xi: tm.kernel(np.array([tm.tempered(0.3) @ tm.stat[:, 0] if n > 1
                                                       else tm.tempered(0.0) @ tm.stat[:, 0]]), 0.3),
                     lambda n: tm.stat)
    for n in range(2, 5):
        C = oracle.tempering_clt_cov(tm, n, phi, ladder)
        ref = oracle.asymp_var_unnormalized(fm, n, phi, zero_derivative=True)[0, 0]
        assert C[1, 1] == pytest.approx(ref, rel=1e-6)
        assert C[0, 0] == pytest.approx(oracle.tempering_clt_cov(tm, 1, phi, ladder)[0, 0], abs=1e-12)


def test_tempering_degenerate_profile_error():
    tm = TemperingFiniteModel(np.array([0.0, 1e-9]), np.ones(2), lambda xi, b: np.eye(2), 0.0, 1e12, 0.5)
    with pytest.raises(OracleModelError, match="degenerate"):
        oracle.tempering_clt_cov(tm, 1, np.array([0.0, 1.0]), ladder=np.array([0.0, 1e6]))


def test_tempering_log_z_ratio():
    tm = models.build_two_state_tempering()
    assert tm.log_Z_ratio(np.log(3)) == pytest.approx(np.log((1 + 1 / 3) / 2))
