"""Catalog of concrete problems: finite-state chains with exact twins, the
product-Gaussian model with coordinate-adapted kernels and tempered targets.

Finite-state particles are integer labels; the matching :class:`FiniteModel`
or :class:`TemperingFiniteModel` describes exactly the same dynamics so the
oracle can be compared with simulation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import softmax

from .adaptation import (KernelSpec, grid_rwm_matrix, pcn_coordinate_kernel, rwm_scaled_kernel,
                         sample_rows)
from .core import AdaptiveModel, ConfigurationError
from .oracle import FiniteModel, OracleModelError, TemperingFiniteModel, exact_flow
from .tempering import TemperingProblem


def sample_labels(probs, N: int, rng) -> np.ndarray:
    """N i.i.d. labels from a probability vector by inverse CDF (one uniform each)."""
    cdf = np.cumsum(probs)
    idx = np.searchsorted(cdf, rng.random(N) * cdf[-1], side="right")
    return np.minimum(idx, len(cdf) - 1)


def finite_to_adaptive(fm: FiniteModel, horizon: int) -> AdaptiveModel:
    """Particle version of a finite model; perfect mode uses the exact statistic means."""
    flow = exact_flow(fm, horizon)
    lo_hi = fm.domain

    def potential(n, xi, x):
        return fm.G(n, xi)[x]

    def log_potential(n, xi, x):
        return np.log(fm.G(n, xi))[x]

    def kernel(n, xi, x, rng):
        return sample_rows(fm.M(n, xi), x, rng)

    return AdaptiveModel(
        horizon=horizon,
        init_sampler=lambda N, rng: sample_labels(fm.eta0, N, rng),
        potential=potential,
        kernel_sampler=kernel,
        statistic=lambda n, x: fm.stat(n)[x],
        statistic_domain=lo_hi,
        exact_statistic_mean=lambda n: flow.xi_bar[n],
        log_potential=log_potential,
        name=fm.name,
    )


def _constant_stat(m):
    return lambda n: np.zeros((m, 0))


def build_two_state(potential=(1.0, 2.0), eta0=(0.5, 0.5)) -> FiniteModel:
    """Two states, fixed potential, identity kernel, no adaptation."""
    g = np.asarray(potential, float)
    return FiniteModel(np.asarray(eta0, float), lambda n, xi: g, lambda n, xi: np.eye(2),
                       _constant_stat(2), name="two-state")


def build_unit_potential(m: int = 4, stay: float = 0.5) -> FiniteModel:
    """G = 1 with a lazy cyclic walk (doubly stochastic) and uniform start."""
    K = stay * np.eye(m) + (1 - stay) * np.roll(np.eye(m), 1, axis=1)
    return FiniteModel(np.full(m, 1.0 / m), lambda n, xi: np.ones(m), lambda n, xi: K,
                       _constant_stat(m), name="unit-potential")


def build_three_state_drift(eta0=(0.5, 0.3, 0.2), mix: float = 0.5, tilt: float = 0.8,
                            width: float = 1.0) -> FiniteModel:
    """Three states whose potential and kernel both follow the adapted mean state.

    G_xi(x) = exp(-(s_x - xi)^2 / (2 width^2)) and
    M_xi = (1 - mix) I + mix 1 softmax(tilt xi s)^T with s = (0, 1, 2).
    Neither is invariant, so adaptation inflates the variance.
    """
    s = np.arange(3.0)

    def G(n, xi):
        return np.exp(-0.5 * ((s - xi[0]) / width) ** 2)

    def M(n, xi):
        return (1 - mix) * np.eye(3) + mix * np.outer(np.ones(3), softmax(tilt * xi[0] * s))

    return FiniteModel(np.asarray(eta0, float), G, M, lambda n: s[:, None],
                       lambda n: (np.array([0.0]), np.array([2.0])), name="three-state-drift")


def build_violating_two_state() -> FiniteModel:
    """G = 1 and M_xi rows (1 - xi, xi) with xi the mass of state 1.

    The kernel is not invariant away from xi = 1/2, so the practical algorithm
    doubles the first-generation variance of the state-1 indicator.
    """
    def M(n, xi):
        return np.tile([1.0 - xi[0], xi[0]], (2, 1))

    return FiniteModel(np.array([0.5, 0.5]), lambda n, xi: np.ones(2), M,
                       lambda n: np.array([[0.0], [1.0]]),
                       lambda n: (np.array([0.0]), np.array([1.0])), name="violating-two-state")


def build_homogeneous(eta=(0.1, 0.2, 0.3, 0.4), potential=(1.0, 0.6, 1.4, 0.8),
                      strength: float = 0.08) -> FiniteModel:
    """Every generation has the same target eta, potential G and adapted kernel.

    M_xi = 1 eta^T + c(xi) B where B has zero row sums and annihilates the
    reweighted law eta G / eta(G), so eta_{n-1} Q_{n,xi} / eta_{n-1}(G) = eta for
    every xi. c(xi) = strength * tanh(xi - eta(s)) with xi the mean state s, so
    the exact parameter gives the independent kernel 1 eta^T and the relative
    normalising-constant variance grows by exactly Var_eta(G) / eta(G)^2 per step.
    """
    eta = np.asarray(eta, float)
    g = np.asarray(potential, float)
    m = eta.size
    nu = eta * g / (eta @ g)
    B0 = np.roll(np.eye(m), 1, axis=1) - np.eye(m)
    B = B0 - np.outer(np.ones(m), nu @ B0)
    s = np.arange(float(m))
    centre = eta @ s

    def M(n, xi):
        return np.outer(np.ones(m), eta) + strength * np.tanh(xi[0] - centre) * B

    if np.any(np.outer(np.ones(m), eta) - strength * np.abs(B) < 0):
        raise OracleModelError("strength too large: kernel has negative entries")
    return FiniteModel(eta, lambda n, xi: g, M, lambda n: s[:, None],
                       lambda n: (np.array([0.0]), np.array([m - 1.0])), name="homogeneous")


def default_likelihood(grid, n_obs: int, seed: int = 2024, truth: float = 0.5,
                       noise_sd: float = 1.0) -> np.ndarray:
    """Gaussian-observation likelihood table (n_obs, m) for a location parameter."""
    rng = np.random.default_rng(seed)
    y = truth + noise_sd * rng.standard_normal(n_obs)
    return np.exp(-0.5 * ((y[:, None] - np.asarray(grid)[None, :]) / noise_sd) ** 2)


def build_sequential_bayes_grid(grid_size: int = 7, observation_count: int = 5, likelihood=None,
                                prior=None, grid=None, step_factor: float = 1.0):
    """Sequential posterior over a parameter restricted to a grid.

    Row k of ``likelihood`` is the likelihood of observation k + 1 on the grid;
    it serves as G_k. eta_n is the posterior after n observations and M_n is a
    grid random walk reversible for eta_n whose step is ``step_factor`` times
    the adapted posterior standard deviation. The statistic is (theta, theta^2).
    Returns ``(AdaptiveModel, FiniteModel)``.
    """
    m = int(grid_size)
    if m < 1:
        raise ConfigurationError("grid_size must be positive")
    grid = np.linspace(-1.5, 1.5, m) if grid is None else np.asarray(grid, float)
    if grid.shape != (m,):
        raise ConfigurationError("grid must have grid_size points")
    L = default_likelihood(grid, observation_count) if likelihood is None else np.asarray(likelihood, float)
    if L.shape != (observation_count, m):
        raise ConfigurationError(f"likelihood table must be {observation_count} x {m}")
    if np.any(L <= 0) or not np.all(np.isfinite(L)):
        raise OracleModelError("likelihood entries must be strictly positive")
    prior = np.full(m, 1.0 / m) if prior is None else np.asarray(prior, float)
    posts = [prior / prior.sum()]
    for k in range(observation_count):
        w = posts[-1] * L[k]
        posts.append(w / w.sum())
    spacing = float(np.median(np.diff(grid))) if m > 1 else 1.0
    stat = np.column_stack([grid, grid**2])

    def M(n, xi):
        sd = np.sqrt(max(xi[1] - xi[0] ** 2, 0.0))
        return grid_rwm_matrix(posts[n], step_factor * sd / spacing)

    def G(n, xi):
        return L[n]

    fm = FiniteModel(posts[0], G, M, lambda n: stat,
                     lambda n: (np.array([-np.inf, 0.0]), np.array([np.inf, np.inf])),
                     name="sequential-bayes-grid")
    return finite_to_adaptive(fm, observation_count), fm


def build_product_gaussian(d: int, total_dim: Optional[int] = None, rho: float = 0.5,
                           sigma2=1.0, horizon: int = 1) -> AdaptiveModel:
    """Product Gaussian target with unit potentials and coordinate-adapted proposals.

    The first d coordinates of the autoregressive proposal use the particle
    second moments; the rest use the target variances. Particles start from
    the target itself.
    """
    if d < 0:
        raise ConfigurationError("d must be non-negative")
    D = d + 1 if total_dim is None else int(total_dim)
    if D < d + 1:
        raise ConfigurationError("total_dim must be at least d + 1")
    var = np.broadcast_to(np.asarray(sigma2, float), (D,)).copy()
    if np.any(var <= 0):
        raise ConfigurationError("target variances must be positive")
    spec = KernelSpec(kind="pcn-coordinate", rho=rho)

    def kernel(n, xi, x, rng):
        return pcn_coordinate_kernel(spec, xi, var, None, x, rng)

    return AdaptiveModel(
        horizon=horizon,
        init_sampler=lambda N, rng: np.sqrt(var) * rng.standard_normal((N, D)),
        potential=lambda n, xi, x: np.ones(len(x)),
        kernel_sampler=kernel,
        statistic=lambda n, x: x[:, :d] ** 2,
        statistic_domain=lambda n: (np.zeros(d), np.full(d, np.inf)),
        exact_statistic_mean=lambda n: var[:d].copy(),
        log_potential=lambda n, xi, x: np.zeros(len(x)),
        name=f"product-gaussian-d{d}",
    )


def positive_half(x):
    """Indicator that the coordinate after the adapted block is positive."""
    return (x[:, -1] > 0).astype(float)


def build_gaussian_tempering(beta0: float = 0.0, beta_star: float = 1.0, alpha: float = 0.5,
                             scale: float = 2.4, n_moves: int = 1) -> TemperingProblem:
    """V(x) = x^2 / 2 against a standard normal base; Z(beta) / Z(0) = (1 + beta)^(-1/2)."""
    spec = KernelSpec(scale=scale)

    def kernel(xi, beta, x, rng):
        return rwm_scaled_kernel(spec, xi, lambda y: -0.5 * (1 + beta) * y**2, x, rng)

    def init(N, rng):
        return rng.standard_normal(N) / np.sqrt(1 + beta0)

    return TemperingProblem(lambda x: 0.5 * x**2, beta0, beta_star, alpha, kernel, init,
                            statistic=lambda x: x**2, n_moves=n_moves, name="gaussian-tempering")


def gaussian_log_z_ratio(beta, beta0: float = 0.0) -> float:
    return float(-0.5 * np.log1p(beta) + 0.5 * np.log1p(beta0))


def double_well(x, separation: float):
    """Symmetric double well; equals x^2 / 2 when ``separation`` is 0."""
    a = 0.5 * separation
    return -np.logaddexp(-0.5 * (x - a) ** 2, -0.5 * (x + a) ** 2) + np.log(2.0)


def build_tempered_bimodal(separation: float = 4.0, beta0: float = 0.0, beta_star: float = 1.0,
                           alpha: float = 0.5, base_sd: float = 3.0, grid_size: int = 200,
                           scale: float = 2.4, step_factor: float = 1.0):
    """Tempered double well against a wide Gaussian base, with a grid twin.

    Returns ``(TemperingProblem, TemperingFiniteModel)``. Both kernels are
    random-walk Metropolis moves scaled by the adapted second moment.
    """
    if separation < 0:
        raise ConfigurationError("separation must be non-negative")
    spec = KernelSpec(scale=scale)

    def V(x):
        return double_well(x, separation)

    def kernel(xi, beta, x, rng):
        return rwm_scaled_kernel(spec, xi, lambda y: -beta * V(y) - 0.5 * (y / base_sd) ** 2, x, rng)

    def init(N, rng):
        # exp(-beta0 V) <= 1, so rejection from the base is exact
        out = np.empty(0)
        while out.size < N:
            y = base_sd * rng.standard_normal(N)
            keep = rng.random(N) < np.exp(-beta0 * V(y))
            out = np.concatenate([out, y[keep]])
        return out[:N]

    problem = TemperingProblem(V, beta0, beta_star, alpha, kernel, init, statistic=lambda x: x**2,
                               name="tempered-bimodal")
    half = max(0.5 * separation + 5.0, 5.0 * base_sd)
    grid = np.linspace(-half, half, grid_size)
    spacing = grid[1] - grid[0]
    base = np.exp(-0.5 * (grid / base_sd) ** 2)
    base = base / base.sum()
    Vg = V(grid)

    def grid_kernel(xi, beta):
        w = np.exp(-beta * (Vg - Vg.min())) * base
        return grid_rwm_matrix(w, step_factor * scale * np.sqrt(max(xi[0], 1e-8)) / spacing)

    twin = TemperingFiniteModel(Vg, base, grid_kernel, beta0, beta_star, alpha,
                                statistic_matrix=grid**2, name="tempered-bimodal-grid")
    return problem, twin


def build_two_state_tempering(V=(0.0, 1.0), beta0: float = 0.0, beta_star: float = 10.0,
                              alpha: float = 0.8, base=(0.5, 0.5)) -> TemperingFiniteModel:
    """Two-state bridge; the kernel mixes towards the tempered law at an adapted rate.

    M_{xi,beta} = (1 - lam) I + lam 1 pi_beta^T with lam = 0.25 + 0.5 xi and xi
    the mass of state 1.
    """
    V = np.asarray(V, float)
    base = np.asarray(base, float)
    holder = {}

    def kernel(xi, beta):
        pi = holder["model"].tempered(beta)
        lam = 0.25 + 0.5 * float(np.clip(xi[0], 0.0, 1.0))
        return (1 - lam) * np.eye(2) + lam * np.outer(np.ones(2), pi)

    tm = TemperingFiniteModel(V, base, kernel, beta0, beta_star, alpha,
                              statistic_matrix=np.array([0.0, 1.0]), name="two-state-tempering")
    holder["model"] = tm
    return tm


def finite_tempering_problem(tm: TemperingFiniteModel, extra_generations: int = 3) -> TemperingProblem:
    """Particle version of a finite tempering model (particles are state labels)."""
    stat = tm.stat

    def kernel(xi, beta, x, rng):
        return sample_rows(tm.kernel(xi, beta), x, rng)

    return TemperingProblem(
        lambda x: tm.V[x], tm.beta0, tm.beta_star, tm.alpha, kernel,
        lambda N, rng: sample_labels(tm.tempered(tm.beta0), N, rng),
        statistic=(lambda x: stat[x]) if stat.shape[1] else None,
        extra_generations=extra_generations, name=tm.name)


@dataclass(frozen=True)
class ModelCatalogEntry:
    name: str
    builder: Callable[..., dict]
    exact: bool
    kind: str  # "adaptive" or "tempering"


def _adaptive_entry(build_finite, horizon_default):
    def builder(horizon: int = horizon_default, **params):
        fm = build_finite(**params)
        return {"model": finite_to_adaptive(fm, horizon), "finite": fm}
    return builder


def _seq_bayes(horizon: int = 5, **params):
    model, fm = build_sequential_bayes_grid(observation_count=horizon, **params)
    return {"model": model, "finite": fm}


def _product_gaussian(d: int = 4, horizon: int = 1, **params):
    return {"model": build_product_gaussian(d, horizon=horizon, **params), "finite": None}


def _gaussian_tempering(**params):
    return {"problem": build_gaussian_tempering(**params), "finite": None}


def _bimodal(**params):
    problem, twin = build_tempered_bimodal(**params)
    return {"problem": problem, "finite": twin}


def _two_state_tempering(**params):
    tm = build_two_state_tempering(**params)
    return {"problem": finite_tempering_problem(tm), "finite": tm}


CATALOG = {
    "two-state": ModelCatalogEntry("two-state", _adaptive_entry(build_two_state, 1), True, "adaptive"),
    "unit-potential": ModelCatalogEntry("unit-potential", _adaptive_entry(build_unit_potential, 5), True,
                                        "adaptive"),
    "three-state-drift": ModelCatalogEntry("three-state-drift",
                                           _adaptive_entry(build_three_state_drift, 5), True, "adaptive"),
    "violating-two-state": ModelCatalogEntry("violating-two-state",
                                             _adaptive_entry(build_violating_two_state, 3), True, "adaptive"),
    "homogeneous": ModelCatalogEntry("homogeneous", _adaptive_entry(build_homogeneous, 20), True, "adaptive"),
    "sequential-bayes-grid": ModelCatalogEntry("sequential-bayes-grid", _seq_bayes, True, "adaptive"),
    "product-gaussian": ModelCatalogEntry("product-gaussian", _product_gaussian, False, "adaptive"),
    "gaussian-tempering": ModelCatalogEntry("gaussian-tempering", _gaussian_tempering, False, "tempering"),
    "tempered-bimodal": ModelCatalogEntry("tempered-bimodal", _bimodal, True, "tempering"),
    "two-state-tempering": ModelCatalogEntry("two-state-tempering", _two_state_tempering, True, "tempering"),
}


def build(name: str, **params) -> dict:
    """Build a catalog model; returns a dict with ``model`` or ``problem`` and ``finite``."""
    if name not in CATALOG:
        raise ConfigurationError(f"unknown model {name!r}; choose from {sorted(CATALOG)}")
    try:
        return CATALOG[name].builder(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {name}: {exc}") from exc
