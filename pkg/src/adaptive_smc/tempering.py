"""Adaptive tempering: ESS functional, next-temperature bisection and the tempered SMC driver."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .core import (ConfigurationError, ParticleCloud, RunRecord, SMCError, init_cloud,
                   make_rng, resample_from_log_weights)

BETA_TOL = 1e-10
MAX_BISECTION_ITER = 100


def ess(values_V, lam: float, weights=None) -> float:
    """Normalised effective sample size eta(w)^2 / eta(w^2) for w = exp(-lam * V).

    ``weights`` is the probability vector of ``eta`` (uniform when omitted,
    i.e. the empirical measure of the values).
    """
    v = np.asarray(values_V, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("ESS of an empty measure")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite potential values")
    if lam == 0.0:
        return 1.0
    if weights is None:
        log_p = np.full(v.size, -np.log(v.size))
    else:
        p = np.asarray(weights, dtype=float).ravel()
        with np.errstate(divide="ignore"):
            log_p = np.log(p / p.sum())
    log_w = -lam * (v - v.min())
    out = np.exp(2.0 * logsumexp(log_w + log_p) - logsumexp(2.0 * log_w + log_p))
    return float(min(out, 1.0))


def solve_next_beta(values_V, beta_current: float, beta_star: float, alpha: float,
                    weights=None, tol: float = BETA_TOL, max_iter: int = MAX_BISECTION_ITER) -> float:
    """Smallest beta in (beta_current, beta_star] with ESS equal to alpha.

    Returns ``beta_star`` when the ESS at ``beta_star`` is still >= alpha (no
    root in the interval). Bisection is valid because the ESS is continuous
    and decreasing in the temperature increment.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    if beta_current > beta_star:
        raise ConfigurationError("current temperature exceeds beta_star")
    gap = beta_star - beta_current
    if gap == 0.0 or ess(values_V, gap, weights) >= alpha:
        return float(beta_star)
    lo, hi = 0.0, gap
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if ess(values_V, mid, weights) >= alpha:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    # refine on the final bracket with a secant step; keeps |ESS - alpha| tiny
    e_lo, e_hi = ess(values_V, lo, weights), ess(values_V, hi, weights)
    lam = lo if e_lo == e_hi else lo + (e_lo - alpha) * (hi - lo) / (e_lo - e_hi)
    return float(beta_current + min(max(lam, lo), hi))


@dataclass(frozen=True)
class TemperingProblem:
    """Tempered bridge exp(-beta V) m from beta0 to beta_star.

    ``init_sampler`` draws from the beta0 law; ``kernel(xi, beta, x, rng)``
    must leave the beta-tempered law invariant.
    """

    potential_V: Callable[[np.ndarray], np.ndarray]
    beta0: float
    beta_star: float
    alpha: float
    kernel: Callable
    init_sampler: Callable[[int, np.random.Generator], np.ndarray]
    statistic: Optional[Callable[[np.ndarray], np.ndarray]] = None
    extra_generations: int = 3
    max_generations: int = 1000
    n_moves: int = 1
    name: str = "tempering"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.beta0 > self.beta_star:
            raise ConfigurationError("beta0 must not exceed beta_star")
        if self.n_moves < 1:
            raise ConfigurationError("n_moves must be at least 1")


@dataclass
class TemperingState:
    beta_current: float
    cloud: ParticleCloud

    @property
    def generation(self) -> int:
        return self.cloud.generation


@dataclass
class TemperedRun:
    record: RunRecord
    ladder: np.ndarray
    ess_values: np.ndarray  # ESS achieved at each step, nan at generation 0
    capped_at: Optional[int]  # first generation with beta == beta_star

    @property
    def log_normalizing_constant(self) -> float:
        """log of the estimate of Z(beta_final) / Z(beta0)."""
        return float(self.record.log_weight_products[-1])


def _potential_values(problem, x, generation):
    v = np.asarray(problem.potential_V(x), dtype=float)
    if not np.all(np.isfinite(v)):
        raise SMCError(f"non-finite potential V at generation {generation}")
    return v


def next_beta(state: TemperingState, problem: TemperingProblem) -> float:
    v = _potential_values(problem, state.cloud.particles, state.generation)
    return solve_next_beta(v, state.beta_current, problem.beta_star, problem.alpha)


def _statistic_mean(problem, x):
    if problem.statistic is None:
        return np.zeros(0)
    s = np.asarray(problem.statistic(x), dtype=float)
    xi = (s[:, None] if s.ndim == 1 else s).mean(axis=0)
    if not np.all(np.isfinite(xi)):
        raise SMCError("non-finite summary statistic")
    return xi


def tempered_run(problem: TemperingProblem, N: int, seed: int,
                 horizon: Optional[int] = None) -> TemperedRun:
    """Adaptive tempered SMC.

    With ``horizon=None`` the run continues ``problem.extra_generations``
    generations past the first time beta reaches beta_star; an integer
    horizon fixes the generation count instead (frozen at beta_star once
    reached).
    """
    if N < 2:
        raise ConfigurationError("tempered runs need N >= 2")
    rng = make_rng(seed)
    state = TemperingState(float(problem.beta0), init_cloud(problem, N, rng))
    clouds, params = [state.cloud], [None]
    ladder, ess_vals, log_z = [state.beta_current], [np.nan], [0.0]
    capped_at = 0 if state.beta_current >= problem.beta_star else None
    limit = horizon if horizon is not None else problem.max_generations
    n = 0
    while n < limit:
        if horizon is None and capped_at is not None and n >= capped_at + problem.extra_generations:
            break
        x = state.cloud.particles
        v = _potential_values(problem, x, n)
        beta_next = solve_next_beta(v, state.beta_current, problem.beta_star, problem.alpha)
        delta = beta_next - state.beta_current
        xi = _statistic_mean(problem, x)
        idx, log_mean_w = resample_from_log_weights(-delta * v, N, rng)
        moved = x[idx]
        for _ in range(problem.n_moves):
            moved = np.asarray(problem.kernel(xi, beta_next, moved, rng))
        n += 1
        state = TemperingState(beta_next, ParticleCloud(n, moved, idx, xi))
        clouds.append(state.cloud)
        params.append(xi)
        ladder.append(beta_next)
        ess_vals.append(ess(v, delta))
        log_z.append(log_z[-1] + log_mean_w)
        if capped_at is None and beta_next >= problem.beta_star:
            capped_at = n
    if horizon is None and capped_at is None:
        raise SMCError(f"beta_star not reached within {problem.max_generations} generations")
    log_z = np.array(log_z)
    record = RunRecord(clouds, np.exp(log_z), params, int(seed), log_z)
    return TemperedRun(record, np.array(ladder), np.array(ess_vals), capped_at)

