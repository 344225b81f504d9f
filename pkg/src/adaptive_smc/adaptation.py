"""Summary statistics and parametric Metropolis kernel families.

Kernels here take the adapted parameter ``xi`` explicitly so the same code
serves the practical algorithm (``xi`` estimated from particles) and the
perfect one (``xi`` exact).  All acceptance ratios are computed in log space
and one uniform is drawn per particle whether or not the proposal is
certain to be accepted; this keeps adaptive and perfect runs sharing a seed
aligned draw for draw.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ConfigurationError, ParticleCloud, SMCError

DEFAULT_FLOOR = 1e-8

STATISTIC_KINDS = ("raw-moments", "mean-and-covariance", "squared-coordinates", "constant")
KERNEL_KINDS = ("rwm-scaled", "pcn-coordinate", "identity", "custom-finite")


@dataclass(frozen=True)
class StatisticSpec:
    kind: str
    dimension: int
    coordinate_window: Optional[Sequence[int]] = None
    value: Optional[Sequence[float]] = None  # for kind == "constant"

    def __post_init__(self):
        if self.kind not in STATISTIC_KINDS:
            raise ConfigurationError(f"unknown statistic kind {self.kind!r}")
        if self.dimension < 0:
            raise ConfigurationError("statistic dimension must be non-negative")
        w = self.window
        expected = {
            "raw-moments": 2 * len(w),
            "mean-and-covariance": len(w) + len(w) ** 2,
            "squared-coordinates": self.dimension,
            "constant": len(np.atleast_1d(self.value)) if self.value is not None else 0,
        }[self.kind]
        if self.kind == "squared-coordinates" and self.coordinate_window is not None:
            if list(self.coordinate_window) != list(range(self.dimension)):
                raise ConfigurationError("squared-coordinates uses exactly the first d coordinates")
        if self.kind == "constant" and self.value is None:
            raise ConfigurationError("constant statistic needs a value")
        if expected != self.dimension:
            raise ConfigurationError(
                f"{self.kind} statistic over window {list(w)} has dimension {expected}, "
                f"declared {self.dimension}")

    @property
    def window(self) -> list:
        if self.coordinate_window is not None:
            return list(self.coordinate_window)
        if self.kind == "squared-coordinates":
            return list(range(self.dimension))
        return [0] if self.kind != "constant" else []


def _as_matrix(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def statistic_values(spec: StatisticSpec, x) -> np.ndarray:
    """Per-particle statistic values, shape (N, d).

    Not defined for ``mean-and-covariance``, whose covariance part is not a
    plain particle average.
    """
    n = len(x)
    if spec.kind == "constant":
        return np.broadcast_to(np.atleast_1d(np.asarray(spec.value, float)), (n, spec.dimension)).copy()
    xm = _as_matrix(x)[:, spec.window]
    if spec.kind == "squared-coordinates":
        return xm**2
    if spec.kind == "raw-moments":
        return np.hstack([xm, xm**2])
    raise ConfigurationError("mean-and-covariance has no per-particle form; use eval_statistic")


def eval_statistic(spec: StatisticSpec, cloud) -> np.ndarray:
    """Particle average of the statistic over a cloud (or a bare particle array).

    The covariance of ``mean-and-covariance`` uses the 1/(N-1) normalisation.
    """
    x = cloud.particles if isinstance(cloud, ParticleCloud) else np.asarray(cloud)
    if len(x) == 0:
        raise ValueError("empty cloud")
    if spec.kind == "mean-and-covariance":
        if len(x) < 2:
            raise ValueError("sample covariance is undefined for a single particle")
        xm = _as_matrix(x)[:, spec.window]
        mean = xm.mean(axis=0)
        cov = np.atleast_2d(np.cov(xm, rowvar=False, ddof=1))
        return np.concatenate([mean, cov.ravel()])
    return statistic_values(spec, x).mean(axis=0)


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rwm-scaled"
    rho: float = 0.5
    floor: float = DEFAULT_FLOOR
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ConfigurationError(f"unknown kernel kind {self.kind!r}")
        if not 0.0 < self.rho < 1.0:
            raise ConfigurationError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.floor > 0.0:
            raise ConfigurationError("variance floor must be positive")
        if not self.scale > 0.0:
            raise ConfigurationError("proposal scale must be positive")


def clamp_variances(spec: KernelSpec, variances) -> np.ndarray:
    v = np.asarray(variances, dtype=float)
    if not np.all(np.isfinite(v)):
        raise SMCError("non-finite adapted variance")
    return np.maximum(v, spec.floor)


def rwm_sigma(spec: KernelSpec, xi) -> np.ndarray:
    """Proposal standard deviation: square root of the floored adapted second moments."""
    return spec.scale * np.sqrt(clamp_variances(spec, xi))


def rwm_proposal_logdensity(spec: KernelSpec, xi, u) -> np.ndarray:
    """Log density of the increment ``u`` (shape (N, D) or (D,)) under the Gaussian proposal."""
    sigma = rwm_sigma(spec, xi)
    u = np.atleast_2d(np.asarray(u, float))
    return (-0.5 * (u / sigma) ** 2 - np.log(sigma) - 0.5 * np.log(2 * np.pi)).sum(axis=1)


def rwm_scaled_kernel(spec: KernelSpec, xi, target_logdensity, x, rng,
                      return_acceptance: bool = False):
    """One random-walk Metropolis move per particle with xi-scaled Gaussian steps.

    ``target_logdensity`` maps an (N, D) array (or (N,) for scalar states) to N
    log densities, up to a constant.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    xm = _as_matrix(x)
    sigma = rwm_sigma(spec, xi)
    if sigma.size not in (1, xm.shape[1]):
        raise ConfigurationError(f"xi has {sigma.size} entries for a {xm.shape[1]}-d state")
    lp_x = np.asarray(target_logdensity(x), float)
    if not np.all(np.isfinite(lp_x)):
        raise SMCError("non-finite target log-density at the current point")
    prop = xm + sigma * rng.standard_normal(xm.shape)
    u = rng.random(len(xm))
    prop_arg = prop[:, 0] if scalar else prop
    lp_y = np.asarray(target_logdensity(prop_arg), float)
    log_ratio = np.where(np.isnan(lp_y), -np.inf, lp_y - lp_x)
    accept = np.log(u) < log_ratio
    out = np.where(accept[:, None], prop, xm)
    out = out[:, 0] if scalar else out
    if return_acceptance:
        return out, np.exp(np.minimum(log_ratio, 0.0))
    return out


def pcn_log_acceptance(spec: KernelSpec, proposal_variances, target_variances, x, prop,
                       target_logratio=None) -> np.ndarray:
    """Log Metropolis-Hastings ratio of the autoregressive proposal.

    The proposal ``rho*x + sqrt(1-rho^2)*N(0, v)`` is reversible for N(0, v), so
    against a target ``N(0, sigma^2) * exp(target_logratio)`` the ratio is
    ``0.5 * sum_j (1/v_j - 1/sigma_j^2) (prop_j^2 - x_j^2)`` plus the change in
    ``target_logratio``.
    """
    coef = 1.0 / np.asarray(proposal_variances) - 1.0 / np.asarray(target_variances)
    log_r = 0.5 * ((prop**2 - x**2) * coef).sum(axis=1)
    if target_logratio is not None:
        log_r = log_r + np.asarray(target_logratio(prop)) - np.asarray(target_logratio(x))
    return log_r


def pcn_coordinate_kernel(spec: KernelSpec, xi, prior_variances, target_logratio, x, rng,
                          return_acceptance: bool = False):
    """Autoregressive proposal whose first ``len(xi)`` coordinates use adapted variances.

    Coordinates beyond ``len(xi)`` use ``prior_variances``. The target is the
    product Gaussian with variances ``prior_variances`` tilted by
    ``target_logratio`` (``None`` for the untilted product Gaussian).
    """
    x = _as_matrix(x)
    sigma2 = np.asarray(prior_variances, dtype=float)
    if sigma2.shape != (x.shape[1],):
        raise ConfigurationError("prior_variances must give one variance per coordinate")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    d = xi.size
    if d > x.shape[1]:
        raise ConfigurationError(f"{d} adapted variances for a {x.shape[1]}-d state")
    v = sigma2.copy()
    v[:d] = clamp_variances(spec, xi)
    rho = spec.rho
    prop = rho * x + np.sqrt(1.0 - rho**2) * np.sqrt(v) * rng.standard_normal(x.shape)
    u = rng.random(len(x))
    log_r = pcn_log_acceptance(spec, v, sigma2, x, prop, target_logratio)
    accept = np.log(u) < log_r
    out = np.where(accept[:, None], prop, x)
    if return_acceptance:
        return out, np.exp(np.minimum(log_r, 0.0))
    return out


def grid_rwm_matrix(target_weights, step_scale: float, max_jump: Optional[int] = None,
                    floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Metropolis random walk on grid indices, reversible for ``target_weights``.

    Jumps of size k != 0 are proposed with probability proportional to
    ``exp(-k^2 / (2 s^2))`` with ``s = max(step_scale, sqrt(floor))``; proposals
    off the grid are rejected. The matrix is smooth in ``step_scale``.
    """
    w = np.asarray(target_weights, dtype=float)
    m = w.size
    if m == 1:
        return np.ones((1, 1))
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ConfigurationError("grid target weights must be positive and finite")
    K = m - 1 if max_jump is None else min(max_jump, m - 1)
    s = max(float(step_scale), np.sqrt(floor))
    ks = np.arange(1, K + 1)
    q = np.exp(-0.5 * (ks / s) ** 2)
    q = q / (2.0 * q.sum())
    M = np.zeros((m, m))
    idx = np.arange(m)
    for k, qk in zip(ks, q):
        for sign in (1, -1):
            src = idx[(idx + sign * k >= 0) & (idx + sign * k < m)]
            dst = src + sign * k
            M[src, dst] = qk * np.minimum(1.0, w[dst] / w[src])
    M[idx, idx] = 1.0 - M.sum(axis=1)
    return M


def sample_rows(matrix: np.ndarray, x, rng) -> np.ndarray:
    """Move finite-state labels ``x`` one step through a row-stochastic matrix."""
    x = np.asarray(x, dtype=np.intp)
    cdf = np.cumsum(matrix, axis=1)
    u = rng.random(len(x))
    nxt = (u[:, None] >= cdf[x]).sum(axis=1)
    return np.minimum(nxt, matrix.shape[1] - 1)
