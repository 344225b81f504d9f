"""Particle clouds, multinomial resampling and the adaptive SMC drivers.

A model is described by an :class:`AdaptiveModel` whose callables act on the
whole particle array at once: ``particles`` is a numpy array whose leading
axis indexes the N particles (shape ``(N,)`` for finite-state labels, ``(N, D)``
for real vectors).

Random numbers are consumed in a fixed order at every generation: first the
``N`` uniforms of the multinomial resampling, then whatever the mutation
kernel draws (particle-major).  Together with :func:`make_rng` this makes a
run a pure function of ``(model, N, seed)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "SMCError",
    "ConfigurationError",
    "ParticleCloud",
    "AdaptiveModel",
    "RunRecord",
    "make_rng",
    "init_cloud",
    "multinomial_resample",
    "resample_from_log_weights",
    "smc_step",
    "run_adaptive",
    "run_perfect",
    "estimate_normalized",
    "estimate_unnormalized",
]


class SMCError(RuntimeError):
    """A run had to abort (non-finite weight or statistic, collapsed potential)."""


class ConfigurationError(ValueError):
    """Invalid model or run configuration."""


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream for a 64-bit unsigned seed."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ConfigurationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class ParticleCloud:
    generation: int
    particles: np.ndarray
    parent_index: np.ndarray
    adapted_param: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.particles)
        if n < 1:
            raise ConfigurationError("a particle cloud needs at least one particle")
        if self.parent_index.shape != (n,):
            raise ConfigurationError("parent_index must have one entry per particle")
        if n and (self.parent_index.min() < 0 or self.parent_index.max() >= n):
            raise ConfigurationError("parent_index entries must lie in [0, N)")

    @property
    def size(self) -> int:
        return len(self.particles)


@dataclass(frozen=True)
class AdaptiveModel:
    """Parametric Feynman-Kac model with adapted potentials and kernels.

    ``potential(n, xi, x)`` is G_{n,xi} evaluated on generation-n particles,
    ``kernel_sampler(n, xi, x, rng)`` moves generation n-1 particles to
    generation n, and ``statistic(n, x)`` is the summary statistic whose
    particle mean over generation n-1 supplies ``xi`` for step n. Statistics
    return arrays of shape ``(N, d)``.
    """

    horizon: int
    init_sampler: Callable[[int, np.random.Generator], np.ndarray]
    potential: Callable[[int, np.ndarray, np.ndarray], np.ndarray]
    kernel_sampler: Callable[[int, np.ndarray, np.ndarray, np.random.Generator], np.ndarray]
    statistic: Callable[[int, np.ndarray], np.ndarray]
    statistic_domain: Callable[[int], tuple]
    exact_statistic_mean: Optional[Callable[[int], np.ndarray]] = None
    log_potential: Optional[Callable[[int, np.ndarray, np.ndarray], np.ndarray]] = None
    name: str = "model"

    def log_weights(self, n: int, xi: np.ndarray, x: np.ndarray) -> np.ndarray:
        if self.log_potential is not None:
            return np.asarray(self.log_potential(n, xi, x), dtype=float)
        g = np.asarray(self.potential(n, xi, x), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(g > 0, np.log(np.where(g > 0, g, 1.0)), -np.inf)


@dataclass
class RunRecord:
    clouds: list
    weight_products: np.ndarray
    adapted_params: list
    seed: int
    log_weight_products: np.ndarray = field(default=None)

    @property
    def n_generations(self) -> int:
        return len(self.clouds) - 1


def init_cloud(model: AdaptiveModel, N: int, rng: np.random.Generator) -> ParticleCloud:
    if N < 1:
        raise ConfigurationError(f"N must be >= 1, got {N}")
    particles = np.asarray(model.init_sampler(N, rng))
    if len(particles) != N:
        raise SMCError(f"init_sampler returned {len(particles)} particles, expected {N}")
    return ParticleCloud(0, particles, np.arange(N), None)


def multinomial_resample(weights, N_out: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``N_out`` ancestor indices i.i.d. with probabilities proportional to ``weights``.

    Each draw is a uniform mapped through the cumulative weights by binary search.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-d array")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be strictly positive and finite")
    cdf = np.cumsum(w)
    u = rng.random(N_out) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, w.size - 1)


def resample_from_log_weights(log_w: np.ndarray, N_out: int, rng: np.random.Generator):
    """Resample from log-weights after a max-shift; returns (indices, mean weight).

    The mean weight is ``mean(exp(log_w))`` computed without overflow.
    """
    shift = log_w.max()
    w = np.exp(log_w - shift)
    # underflowed entries are legitimate tiny weights, not collapsed potentials
    w = np.maximum(w, np.finfo(float).tiny)
    idx = multinomial_resample(w, N_out, rng)
    return idx, shift + np.log(np.mean(np.exp(log_w - shift)))


def _statistic_mean(model: AdaptiveModel, n: int, x: np.ndarray) -> np.ndarray:
    s = np.asarray(model.statistic(n, x), dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    xi = s.mean(axis=0)
    if not np.all(np.isfinite(xi)):
        raise SMCError(f"non-finite summary statistic at generation {n}")
    return xi


def _step(model, cloud, rng, xi):
    n = cloud.generation + 1
    x = cloud.particles
    log_w = model.log_weights(n - 1, xi, x)
    if log_w.shape != (cloud.size,) or not np.all(np.isfinite(log_w)):
        raise SMCError(f"non-finite or non-positive potential at generation {n - 1}")
    idx, log_mean_w = resample_from_log_weights(log_w, cloud.size, rng)
    moved = np.asarray(model.kernel_sampler(n, xi, x[idx], rng))
    return ParticleCloud(n, moved, idx, xi), log_mean_w


def smc_step(model: AdaptiveModel, cloud: ParticleCloud, rng: np.random.Generator,
             xi: Optional[np.ndarray] = None) -> ParticleCloud:
    """One draw of the practical transition for every particle.

    ``xi`` defaults to the particle mean of ``statistic(n, .)`` over the input
    cloud; passing it explicitly gives the perfect-algorithm step.
    """
    if cloud.generation >= model.horizon:
        raise ConfigurationError(
            f"cloud is at generation {cloud.generation}, model horizon is {model.horizon}")
    if xi is None:
        xi = _statistic_mean(model, cloud.generation + 1, cloud.particles)
    return _step(model, cloud, rng, np.asarray(xi, dtype=float))[0]


def _run(model, N, seed, perfect):
    rng = make_rng(seed)
    cloud = init_cloud(model, N, rng)
    clouds = [cloud]
    params = [None]
    log_z = np.zeros(model.horizon + 1)
    for n in range(1, model.horizon + 1):
        if perfect:
            xi = np.atleast_1d(np.asarray(model.exact_statistic_mean(n), dtype=float))
        else:
            xi = _statistic_mean(model, n, cloud.particles)
        cloud, log_mean_w = _step(model, cloud, rng, xi)
        log_z[n] = log_z[n - 1] + log_mean_w
        clouds.append(cloud)
        params.append(xi)
    weights = np.exp(log_z)
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        raise SMCError("weight products left the positive finite range")
    return RunRecord(clouds, weights, params, int(seed), log_z)


def run_adaptive(model: AdaptiveModel, N: int, seed: int) -> RunRecord:
    """Practical algorithm: the kernel parameter is the particle estimate."""
    return _run(model, N, seed, perfect=False)


def run_perfect(model: AdaptiveModel, N: int, seed: int) -> RunRecord:
    """Perfect algorithm: the kernel parameter is the exact statistic mean."""
    if model.exact_statistic_mean is None:
        raise ConfigurationError("perfect mode needs model.exact_statistic_mean")
    return _run(model, N, seed, perfect=True)


def _evaluate(test_function, x):
    vals = np.asarray(test_function(x), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("test function returned non-finite values")
    return vals


def estimate_normalized(cloud: ParticleCloud, test_function) -> np.ndarray:
    return np.atleast_1d(_evaluate(test_function, cloud.particles).mean(axis=0))


def estimate_unnormalized(record: RunRecord, n: int, test_function) -> np.ndarray:
    return record.weight_products[n] * estimate_normalized(record.clouds[n], test_function)


def batch_estimates(record: RunRecord, test_functions: Sequence) -> np.ndarray:
    """Unnormalized estimates of each test function at every generation, shape (n+1, r)."""
    return np.array([
        np.concatenate([estimate_unnormalized(record, n, f) for f in test_functions])
        for n in range(len(record.clouds))
    ])
