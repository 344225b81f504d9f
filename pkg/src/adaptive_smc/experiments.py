"""Replicated experiments: CLT checks, variance growth, stability comparison,
dimension scaling and tempering reports.

Replicate i of an experiment with master seed s runs on ``make_rng(s ^ i)``.
Each replicate is a pure function of (config, i), so results are merged in
index order and do not depend on the number of worker threads.
"""
from __future__ import annotations

import csv
import io
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import yaml

from . import oracle
from .core import ConfigurationError, SMCError, run_adaptive, run_perfect
from .models import CATALOG, build, positive_half
from .tempering import tempered_run

ABORT_FRACTION = 0.01
EXPERIMENT_KINDS = ("run", "variance-growth", "stability-compare", "dscaling", "tempering", "oracle")
MODES = ("adaptive", "perfect", "both")


class AbortThresholdExceeded(RuntimeError):
    """More than the tolerated fraction of replicates aborted."""


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    kind: str = "run"
    params: dict = field(default_factory=dict)
    particles: tuple = (1000,)
    replicates: int = 100
    seed: int = 0
    mode: str = "adaptive"
    alpha: Optional[float] = None
    threads: Optional[int] = None
    horizon: Optional[int] = None
    phi: Optional[tuple] = None  # test-function values on a finite state space
    d_grid: tuple = (4, 16, 64)
    n_factor: int = 8
    fixed_particles: Optional[int] = None
    out: Optional[str] = None

    def __post_init__(self):
        if self.model not in CATALOG:
            raise ConfigurationError(f"unknown model {self.model!r}; choose from {sorted(CATALOG)}")
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        object.__setattr__(self, "particles", tuple(int(n) for n in np.atleast_1d(self.particles)))
        if not self.particles or min(self.particles) < 1:
            raise ConfigurationError("particle counts must be positive")
        if any(b <= a for a, b in zip(self.particles, self.particles[1:])):
            raise ConfigurationError("particle grid must be strictly increasing")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be positive")
        if self.kind in ("variance-growth", "stability-compare", "dscaling", "tempering") and self.replicates < 2:
            raise ConfigurationError("variance estimates need at least 2 replicates")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.threads is not None and self.threads < 1:
            raise ConfigurationError("threads must be positive")

    @property
    def N(self) -> int:
        return self.particles[0]

    def model_params(self) -> dict:
        params = dict(self.params)
        entry = CATALOG[self.model]
        if self.horizon is not None and entry.kind == "adaptive":
            params["horizon"] = self.horizon
        if self.alpha is not None and entry.kind == "tempering":
            params["alpha"] = self.alpha
        return params


def load_config(path: str, **overrides) -> ExperimentConfig:
    """Read a YAML key-value file; non-None ``overrides`` take precedence."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("config file must be a mapping of keys to values")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return make_config(**data)


def make_config(**kw) -> ExperimentConfig:
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(kw) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    if "model" not in kw:
        raise ConfigurationError("config needs a model name")
    for key in ("particles", "d_grid", "phi"):
        if key in kw and kw[key] is not None:
            kw[key] = tuple(np.atleast_1d(kw[key]).tolist())
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from exc


def replicate_seeds(master: int, R: int) -> list:
    return [int(master) ^ i for i in range(R)]


def run_replicates(fn: Callable[[int], np.ndarray], seeds: Sequence[int], threads: Optional[int] = None,
                   abort_fraction: float = ABORT_FRACTION):
    """Apply ``fn`` to every seed; returns (stacked results of survivors, abort count).

    A replicate raising :class:`SMCError` counts as aborted. More than
    ``abort_fraction`` aborts raises :class:`AbortThresholdExceeded`.
    """
    def safe(seed):
        try:
            return fn(seed)
        except SMCError:
            return None

    if threads is None or threads == 1:
        results = [safe(s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(safe, seeds))
    kept = [r for r in results if r is not None]
    aborted = len(results) - len(kept)
    if aborted > abort_fraction * len(results):
        raise AbortThresholdExceeded(f"{aborted} of {len(results)} replicates aborted")
    if not kept:
        raise AbortThresholdExceeded("every replicate aborted")
    return np.array(kept), aborted


# jackknife helpers ----------------------------------------------------------


def jackknife(values: np.ndarray, stat: Callable[[np.ndarray], np.ndarray]):
    """Statistic over replicates (axis 0) with its leave-one-out standard error."""
    values = np.asarray(values)
    R = len(values)
    full = np.asarray(stat(values))
    if R < 2:
        return full, np.full_like(full, np.nan, dtype=float)
    loo = np.array([stat(np.delete(values, i, axis=0)) for i in range(R)])
    se = np.sqrt((R - 1) / R * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return full, se


def _loo_variances(x: np.ndarray) -> np.ndarray:
    """Leave-one-out unbiased variances along axis 0, vectorised."""
    R = len(x)
    s1, s2 = x.sum(axis=0), (x**2).sum(axis=0)
    m1 = (s1 - x) / (R - 1)
    return ((s2 - x**2) - (R - 1) * m1**2) / (R - 2)


def jackknife_variance(x):
    """Unbiased variance along axis 0 and its jackknife standard error."""
    x = np.asarray(x, dtype=float)
    R = len(x)
    var = x.var(axis=0, ddof=1) if R > 1 else np.full(x.shape[1:], np.nan)
    if R < 3:
        return var, np.full_like(var, np.nan)
    loo = _loo_variances(x)
    se = np.sqrt((R - 1) / R * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return var, se


def jackknife_cov(x):
    """Covariance matrix of the (R, k) sample and elementwise jackknife standard errors."""
    x = np.asarray(x, dtype=float)
    return jackknife(x, lambda v: np.atleast_2d(np.cov(v, rowvar=False, ddof=1)))


def jackknife_ratio_of_variances(a, b):
    """Var(a) / Var(b) along axis 0 for paired samples, with jackknife standard error."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    R = len(a)
    ratio = a.var(axis=0, ddof=1) / b.var(axis=0, ddof=1)
    loo = _loo_variances(a) / _loo_variances(b)
    se = np.sqrt((R - 1) / R * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return ratio, se


def jackknife_mean(x):
    x = np.asarray(x, dtype=float)
    return x.mean(axis=0), x.std(axis=0, ddof=1) / np.sqrt(len(x))


# summaries ------------------------------------------------------------------


@dataclass
class ReplicationSummary:
    """Cross-replicate statistics of per-generation estimators (rows are generations)."""

    N: int
    replicates: int
    aborted: int
    mean_unnormalized: np.ndarray
    var_unnormalized: np.ndarray
    var_unnormalized_se: np.ndarray
    mean_normalized: np.ndarray
    var_normalized: np.ndarray
    var_normalized_se: np.ndarray
    oracle_unnormalized: Optional[np.ndarray] = None
    oracle_normalized: Optional[np.ndarray] = None
    samples_unnormalized: Optional[np.ndarray] = None
    samples_normalized: Optional[np.ndarray] = None

    @property
    def scaled_var_unnormalized(self):
        return self.N * self.var_unnormalized

    @property
    def scaled_var_normalized(self):
        return self.N * self.var_normalized


def _finite_phi(config, fm):
    if config.phi is not None:
        phi = np.asarray(config.phi, dtype=float)
        if phi.shape != (fm.m,):
            raise ConfigurationError(f"phi needs {fm.m} values, got {phi.size}")
        return phi
    phi = np.zeros(fm.m)
    phi[-1] = 1.0
    return phi


def _built(config):
    return build(config.model, **config.model_params())


def _adaptive_model(config, built):
    if "model" not in built:
        raise ConfigurationError(f"{config.model} is a tempering problem; use the tempering experiment")
    return built["model"]


def _test_function(config, built):
    fm = built.get("finite")
    if isinstance(fm, oracle.FiniteModel):
        phi = _finite_phi(config, fm)
        return (lambda x: phi[x]), phi
    if config.model == "product-gaussian":
        return positive_half, None
    return (lambda x: np.ones(len(x))), None


def _estimates(record, f):
    """(unnormalized, normalized) estimates at every generation."""
    eta = np.array([f(c.particles).mean() for c in record.clouds])
    return np.concatenate([record.weight_products * eta, eta])


def replicate(config: ExperimentConfig, perfect: bool = False, N: Optional[int] = None,
              keep_samples: bool = False, seeds: Optional[Sequence[int]] = None) -> ReplicationSummary:
    """R independent runs of an adaptive model summarised per generation.

    ``seeds`` replaces the per-replicate seeds derived from the master seed.
    """
    built = _built(config)
    model = _adaptive_model(config, built)
    f, phi = _test_function(config, built)
    N = config.N if N is None else N
    runner = run_perfect if perfect else run_adaptive
    samples, aborted = run_replicates(lambda s: _estimates(runner(model, N, s), f),
                                      seeds or replicate_seeds(config.seed, config.replicates), config.threads)
    H = model.horizon + 1
    un, no = samples[:, :H], samples[:, H:]
    vu, vu_se = jackknife_variance(un)
    vn, vn_se = jackknife_variance(no)
    summary = ReplicationSummary(N, len(samples), aborted, un.mean(axis=0), vu, vu_se,
                                 no.mean(axis=0), vn, vn_se)
    fm = built.get("finite")
    if phi is not None and isinstance(fm, oracle.FiniteModel):
        flow = oracle.exact_flow(fm, model.horizon)
        summary.oracle_unnormalized = np.array([
            oracle.asymp_var_unnormalized(fm, n, phi, flow, zero_derivative=perfect)[0, 0] for n in range(H)])
        summary.oracle_normalized = np.array([
            oracle.asymp_var_normalized(fm, n, phi, flow, zero_derivative=perfect)[0, 0] for n in range(H)])
    if keep_samples:
        summary.samples_unnormalized, summary.samples_normalized = un, no
    return summary


def summary_rows(summary: ReplicationSummary, mode: str):
    H = len(summary.mean_unnormalized)
    ou = summary.oracle_unnormalized if summary.oracle_unnormalized is not None else np.full(H, np.nan)
    on = summary.oracle_normalized if summary.oracle_normalized is not None else np.full(H, np.nan)
    N = summary.N
    return [[n, mode, N, summary.replicates, summary.aborted,
             summary.mean_unnormalized[n], N * summary.var_unnormalized[n], N * summary.var_unnormalized_se[n],
             ou[n], summary.mean_normalized[n], N * summary.var_normalized[n],
             N * summary.var_normalized_se[n], on[n]] for n in range(H)]


RUN_COLUMNS = ["generation", "mode", "N", "replicates", "aborted", "mean_gamma", "nvar_gamma",
               "nvar_gamma_se", "oracle_gamma", "mean_eta", "nvar_eta", "nvar_eta_se", "oracle_eta"]


def run_experiment(config: ExperimentConfig):
    modes = ("adaptive", "perfect") if config.mode == "both" else (config.mode,)
    rows = []
    for N in config.particles:
        for mode in modes:
            rows += summary_rows(replicate(config, perfect=mode == "perfect", N=N), mode)
    return RUN_COLUMNS, rows


def linear_fit(x, y):
    """Least-squares slope, intercept and R^2."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid**2).sum() / ss_tot if ss_tot > 0 else float("nan")
    return float(slope), float(intercept), float(r2)


@dataclass
class GrowthResult:
    n: np.ndarray
    scaled_var: np.ndarray
    scaled_var_se: np.ndarray
    oracle: Optional[np.ndarray]
    slope: float
    intercept: float
    r2: float
    oracle_increment: Optional[float]


def variance_growth(config: ExperimentConfig) -> GrowthResult:
    """N * Var(gamma_n^N(1) / gamma_n(1)) per generation with a linear fit over n >= 1."""
    built = _built(config)
    model, fm = _adaptive_model(config, built), built.get("finite")
    N = config.N
    seeds = replicate_seeds(config.seed, config.replicates)
    samples, _ = run_replicates(lambda s: run_adaptive(model, N, s).weight_products, seeds, config.threads)
    if isinstance(fm, oracle.FiniteModel):
        flow = oracle.exact_flow(fm, model.horizon)
        norm = flow.gamma_mass
        orc = np.array([oracle.nc_relative_variance(fm, n, flow) for n in range(model.horizon + 1)])
        increment = float(orc[1] - orc[0])
    else:
        norm = samples.mean(axis=0)
        orc, increment = None, None
    var, se = jackknife_variance(samples / norm)
    n = np.arange(model.horizon + 1)
    if model.horizon >= 2:
        slope, intercept, r2 = linear_fit(n[1:], N * var[1:])
    else:
        slope = intercept = r2 = float("nan")
    return GrowthResult(n, N * var, N * se, orc, slope, intercept, r2, increment)


def growth_table(res: GrowthResult):
    orc = res.oracle if res.oracle is not None else np.full(len(res.n), np.nan)
    rows = [[int(k), res.scaled_var[k], res.scaled_var_se[k], orc[k], res.slope, res.r2]
            for k in range(len(res.n))]
    return ["generation", "nvar_rel_gamma1", "nvar_rel_gamma1_se", "oracle", "fit_slope", "fit_r2"], rows


@dataclass
class StabilityResult:
    n: np.ndarray
    var_adaptive: np.ndarray
    var_adaptive_se: np.ndarray
    var_perfect: np.ndarray
    var_perfect_se: np.ndarray
    ratio: np.ndarray
    ratio_se: np.ndarray
    oracle_adaptive: Optional[np.ndarray]
    oracle_perfect: Optional[np.ndarray]
    stability: Optional[np.ndarray]

    @property
    def ci(self):
        return self.ratio - 1.96 * self.ratio_se, self.ratio + 1.96 * self.ratio_se


def stability_compare(config: ExperimentConfig, normalized: bool = False) -> StabilityResult:
    """Paired adaptive and perfect runs on shared seeds; per-generation variance ratio."""
    built = _built(config)
    model = _adaptive_model(config, built)
    if model.exact_statistic_mean is None:
        raise ConfigurationError("stability comparison needs exact statistic means")
    f, phi = _test_function(config, built)
    N = config.N
    col = slice(model.horizon + 1, None) if normalized else slice(0, model.horizon + 1)

    def pair(seed):
        a = _estimates(run_adaptive(model, N, seed), f)[col]
        p = _estimates(run_perfect(model, N, seed), f)[col]
        return np.stack([a, p])

    samples, _ = run_replicates(pair, replicate_seeds(config.seed, config.replicates), config.threads)
    a, p = samples[:, 0], samples[:, 1]
    va, va_se = jackknife_variance(a)
    vp, vp_se = jackknife_variance(p)
    n = np.arange(model.horizon + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio, ratio_se = jackknife_ratio_of_variances(a, p)
    fm = built.get("finite")
    oa = op = stab = None
    if phi is not None and isinstance(fm, oracle.FiniteModel):
        flow = oracle.exact_flow(fm, model.horizon)
        fn = oracle.asymp_var_normalized if normalized else oracle.asymp_var_unnormalized
        oa = np.array([fn(fm, k, phi, flow)[0, 0] for k in n])
        op = np.array([fn(fm, k, phi, flow, zero_derivative=True)[0, 0] for k in n])
        stab = np.array([np.nan] + [oracle.stability_check(fm, k, phi, flow) for k in n[1:]])
    return StabilityResult(n, N * va, N * va_se, N * vp, N * vp_se, ratio, ratio_se, oa, op, stab)


def stability_table(res: StabilityResult):
    lo, hi = res.ci
    nan = np.full(len(res.n), np.nan)
    oa = res.oracle_adaptive if res.oracle_adaptive is not None else nan
    op = res.oracle_perfect if res.oracle_perfect is not None else nan
    st = res.stability if res.stability is not None else nan
    rows = [[int(k), res.var_adaptive[k], res.var_adaptive_se[k], res.var_perfect[k], res.var_perfect_se[k],
             res.ratio[k], res.ratio_se[k], lo[k], hi[k], oa[k], op[k], st[k]] for k in range(len(res.n))]
    return ["generation", "nvar_adaptive", "nvar_adaptive_se", "nvar_perfect", "nvar_perfect_se", "ratio",
            "ratio_se", "ratio_ci_low", "ratio_ci_high", "oracle_adaptive", "oracle_perfect",
            "stability_check"], rows


@dataclass
class DScalingResult:
    d: np.ndarray
    N: np.ndarray
    mse: np.ndarray
    mse_se: np.ndarray
    mse_control: np.ndarray  # same seeds, exact adapted parameter (behaves as d = 0)
    excess: np.ndarray
    excess_se: np.ndarray
    mse_d0: np.ndarray  # literal d = 0 runs at the same N
    mse_d0_se: np.ndarray
    acceptance: np.ndarray

    @property
    def d_mse(self):
        return self.d * self.mse

    def excess_slope(self) -> float:
        if np.any(self.excess <= 0):
            return float("nan")
        return float(np.polyfit(np.log(self.d), np.log(self.excess), 1)[0])


def _pg_errors(d, N, seed, horizon):
    from .models import build_product_gaussian
    model = build_product_gaussian(d, horizon=horizon)
    a = run_adaptive(model, N, seed)
    p = run_perfect(model, N, seed)
    ea = positive_half(a.clouds[-1].particles).mean() - 0.5
    ep = positive_half(p.clouds[-1].particles).mean() - 0.5
    # share of particles whose position changed under the adapted move
    moved = np.mean(np.any(a.clouds[-1].particles != a.clouds[-2].particles[a.clouds[-1].parent_index], axis=1))
    return np.array([ea**2, ep**2, moved])


def dscaling(config: ExperimentConfig) -> DScalingResult:
    """MSE of eta_n^N(phi) for the product-Gaussian model over a grid of adapted dimensions.

    N is ``n_factor * d`` unless ``fixed_particles`` is set. The control uses the
    same seeds with the exact adapted parameter, which always accepts and so
    reproduces a d = 0 run draw for draw in the measured coordinate's law.
    """
    horizon = config.horizon or 1
    ds = np.asarray(config.d_grid, dtype=int)
    if np.any(ds < 1) or np.any(np.diff(ds) <= 0):
        raise ConfigurationError("d_grid must be strictly increasing positive integers")
    seeds = replicate_seeds(config.seed, config.replicates)
    out = {k: [] for k in ("N", "mse", "mse_se", "ctrl", "exc", "exc_se", "d0", "d0_se", "acc")}
    for d in ds:
        N = config.fixed_particles or config.n_factor * int(d)
        err, _ = run_replicates(lambda s: _pg_errors(int(d), N, s, horizon), seeds, config.threads)
        base, _ = run_replicates(lambda s: _pg_errors(0, N, s, horizon)[:1], seeds, config.threads)
        m, se = jackknife_mean(err[:, 0])
        ex, ex_se = jackknife_mean(err[:, 0] - err[:, 1])
        b, b_se = jackknife_mean(base[:, 0])
        for k, v in zip(out, (N, m, se, err[:, 1].mean(), ex, ex_se, b, b_se, err[:, 2].mean())):
            out[k].append(v)
    a = {k: np.array(v) for k, v in out.items()}
    return DScalingResult(ds, a["N"], a["mse"], a["mse_se"], a["ctrl"], a["exc"], a["exc_se"], a["d0"],
                          a["d0_se"], a["acc"])


def dscaling_table(res: DScalingResult):
    rows = [[int(res.d[i]), int(res.N[i]), res.mse[i], res.mse_se[i], res.d_mse[i], res.d[i] * res.mse_se[i],
             res.mse_control[i], res.excess[i], res.excess_se[i], res.mse_d0[i], res.mse_d0_se[i],
             res.acceptance[i]] for i in range(len(res.d))]
    return ["d", "N", "mse", "mse_se", "d_mse", "d_mse_se", "mse_control", "excess_mse", "excess_mse_se",
            "mse_d0", "mse_d0_se", "move_rate"], rows


@dataclass
class TemperingReport:
    rung: np.ndarray
    beta_mean: np.ndarray
    beta_nvar: np.ndarray
    beta_nvar_se: np.ndarray
    gamma_mean: np.ndarray
    gamma_nvar: np.ndarray
    gamma_nvar_se: np.ndarray
    cross_ncov: np.ndarray
    cross_ncov_se: np.ndarray
    oracle_beta: Optional[np.ndarray]
    oracle_cov: Optional[np.ndarray]  # (rungs, 2, 2)
    max_ess_error: float
    log_z_mean: float
    log_z_se: float


def tempering_report(config: ExperimentConfig, literal_entries: bool = False) -> TemperingReport:
    """Joint spread of (beta_n^N, gamma_n^N(phi)) per rung against the exact recursion."""
    built = _built(config)
    if "problem" not in built:
        raise ConfigurationError(f"{config.model} is not a tempering problem")
    problem, tm = built["problem"], built.get("finite")
    horizon = config.horizon or 1
    N = config.N
    phi = _finite_phi(config, tm) if isinstance(tm, oracle.TemperingFiniteModel) and tm.m <= 16 else None
    f = (lambda x: phi[x]) if phi is not None else (lambda x: np.ones(len(x)))

    def one(seed):
        r = tempered_run(problem, N, seed, horizon=horizon)
        g = r.record.weight_products * np.array([f(c.particles).mean() for c in r.record.clouds])
        dev = 0.0
        for n in range(1, horizon + 1):
            if r.ladder[n] < problem.beta_star:
                dev = max(dev, abs(r.ess_values[n] - problem.alpha))
        return np.concatenate([r.ladder, g, [dev, r.log_normalizing_constant]])

    s, _ = run_replicates(one, replicate_seeds(config.seed, config.replicates), config.threads)
    H = horizon + 1
    betas, gammas = s[:, :H], s[:, H:2 * H]
    bv, bv_se = jackknife_variance(betas)
    gv, gv_se = jackknife_variance(gammas)
    cross, cross_se = jackknife(np.stack([betas, gammas], axis=2),
                                lambda v: ((v[:, :, 0] - v[:, :, 0].mean(0)) * (v[:, :, 1] - v[:, :, 1].mean(0))
                                           ).sum(0) / (len(v) - 1))
    ob = oc = None
    if isinstance(tm, oracle.TemperingFiniteModel):
        ob = oracle.limit_ladder(tm, horizon)
        if phi is not None:
            oc = np.array([oracle.tempering_clt_cov(tm, n, phi, ob, literal_entries=literal_entries)
                           for n in range(H)])
    lz, lz_se = jackknife_mean(s[:, -1])
    return TemperingReport(np.arange(H), betas.mean(0), N * bv, N * bv_se, gammas.mean(0), N * gv, N * gv_se,
                           N * cross, N * cross_se, ob, oc, float(s[:, -2].max()), float(lz), float(lz_se))


def tempering_table(rep: TemperingReport):
    H = len(rep.rung)
    ob = rep.oracle_beta if rep.oracle_beta is not None else np.full(H, np.nan)
    oc = rep.oracle_cov if rep.oracle_cov is not None else np.full((H, 2, 2), np.nan)
    rows = [[int(n), rep.beta_mean[n], rep.beta_nvar[n], rep.beta_nvar_se[n], ob[n], oc[n, 0, 0],
             rep.gamma_mean[n], rep.gamma_nvar[n], rep.gamma_nvar_se[n], oc[n, 1, 1], rep.cross_ncov[n],
             rep.cross_ncov_se[n], oc[n, 0, 1], rep.max_ess_error] for n in range(H)]
    return ["rung", "beta_mean", "nvar_beta", "nvar_beta_se", "oracle_beta", "oracle_nvar_beta", "gamma_mean",
            "nvar_gamma", "nvar_gamma_se", "oracle_nvar_gamma", "ncov_beta_gamma", "ncov_beta_gamma_se",
            "oracle_ncov_beta_gamma", "max_ess_error"], rows


def oracle_table(config: ExperimentConfig):
    """Exact flow and asymptotic variances of a finite catalog model."""
    built = _built(config)
    fm = built.get("finite")
    if isinstance(fm, oracle.TemperingFiniteModel):
        horizon = config.horizon or 1
        phi = _finite_phi(config, fm)
        ladder = oracle.limit_ladder(fm, horizon)
        rows = []
        for n in range(horizon + 1):
            C = oracle.tempering_clt_cov(fm, n, phi, ladder)
            rows.append([n, ladder[n], fm.log_Z_ratio(ladder[n]), C[0, 0], C[0, 1], C[1, 1]])
        return ["rung", "beta", "log_z_ratio", "nvar_beta", "ncov_beta_gamma", "nvar_gamma"], rows
    if not isinstance(fm, oracle.FiniteModel):
        raise oracle.OracleModelError(f"{config.model} has no finite-state twin")
    horizon = built["model"].horizon
    phi = _finite_phi(config, fm)
    flow = oracle.exact_flow(fm, horizon)
    rows = []
    for n in range(horizon + 1):
        xb = flow.xi_bar[n]
        rows.append([n, flow.gamma_mass[n], float(flow.eta[n] @ phi),
                     " ".join(f"{v:.17g}" for v in (xb if xb is not None else [])),
                     oracle.asymp_var_unnormalized(fm, n, phi, flow)[0, 0],
                     oracle.asymp_var_normalized(fm, n, phi, flow)[0, 0],
                     oracle.nc_relative_variance(fm, n, flow),
                     oracle.stability_check(fm, n, phi, flow) if n else float("nan")])
    return ["generation", "gamma_mass", "eta_phi", "xi_bar", "avar_gamma", "avar_eta", "nc_rel_var",
            "stability_check"], rows


# CSV ------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def format_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path: Optional[str], header, rows) -> str:
    """Write to ``path`` (stdout when None or '-'); returns the text."""
    text = format_csv(header, rows)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        d = os.path.dirname(os.path.abspath(path))
        os.makedirs(d, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)
    return text


def auto_threads() -> int:
    return max(1, min(8, os.cpu_count() or 1))



