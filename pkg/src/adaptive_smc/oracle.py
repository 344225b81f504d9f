"""Exact limiting quantities on finite state spaces.

Everything here is dense linear algebra on probability vectors and m x m
kernels.  A test function is an ``(m,)`` or ``(m, r)`` array of its values
on the states; results for vector test functions are r x r matrices.

Derivatives in the adapted parameter and in the temperatures are central
finite differences on the exact quantities unless a model supplies
analytic hooks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .tempering import solve_next_beta

ROW_TOL = 1e-12
INVARIANCE_TOL = 1e-10
FD_REL_STEP = 1e-5
FD_MIN_STEP = 1e-9
TEMPERATURE_FD_STEP = 1e-5
DEGENERATE_ESS_SLOPE = 1e-8


class OracleModelError(ValueError):
    """The finite model violates a structural requirement of the exact computation."""


def _as_columns(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    return phi[:, None] if phi.ndim == 1 else phi


def covariance(eta, phi) -> np.ndarray:
    """Covariance matrix of the (m, r) test function ``phi`` under ``eta``."""
    phi = _as_columns(phi)
    centred = phi - eta @ phi
    return (centred * eta[:, None]).T @ centred


@dataclass(frozen=True)
class FiniteModel:
    """Finite-state adaptive Feynman-Kac model.

    ``potential_fn(n, xi)`` gives G_{n,xi} on the states, ``kernel_fn(n, xi)``
    the row-stochastic M_{n,xi} used between generations n-1 and n, and
    ``statistic_matrix(n)`` the (m, d) values of the statistic whose mean
    under eta_{n-1} parametrises step n. The optional ``*_grad`` hooks return
    analytic xi-derivatives, shaped (d, m) and (d, m, m).
    """

    eta0: np.ndarray
    potential_fn: Callable[[int, np.ndarray], np.ndarray]
    kernel_fn: Callable[[int, np.ndarray], np.ndarray]
    statistic_matrix: Callable[[int], np.ndarray]
    statistic_domain: Optional[Callable[[int], tuple]] = None
    potential_grad: Optional[Callable] = None
    kernel_grad: Optional[Callable] = None
    name: str = "finite"

    def __post_init__(self):
        eta0 = np.asarray(self.eta0, dtype=float)
        object.__setattr__(self, "eta0", eta0)
        if eta0.ndim != 1 or np.any(eta0 < 0) or abs(eta0.sum() - 1.0) > ROW_TOL:
            raise OracleModelError("eta0 must be a probability vector")

    @property
    def m(self) -> int:
        return self.eta0.size

    def stat(self, n: int) -> np.ndarray:
        s = np.asarray(self.statistic_matrix(n), dtype=float)
        return s[:, None] if s.ndim == 1 else s

    def G(self, n: int, xi) -> np.ndarray:
        g = np.asarray(self.potential_fn(n, np.asarray(xi, float)), dtype=float)
        if g.shape != (self.m,) or np.any(g <= 0) or not np.all(np.isfinite(g)):
            raise OracleModelError(f"potential at generation {n} must be positive and finite")
        return g

    def M(self, n: int, xi) -> np.ndarray:
        K = np.asarray(self.kernel_fn(n, np.asarray(xi, float)), dtype=float)
        if K.shape != (self.m, self.m) or np.any(K < -ROW_TOL):
            raise OracleModelError(f"kernel at generation {n} must be a non-negative m x m matrix")
        if np.max(np.abs(K.sum(axis=1) - 1.0)) > ROW_TOL:
            raise OracleModelError(f"kernel rows at generation {n} do not sum to 1")
        return K

    def Q(self, n: int, xi) -> np.ndarray:
        """Q_{n,xi} = diag(G_{n-1,xi}) M_{n,xi}."""
        return self.G(n - 1, xi)[:, None] * self.M(n, xi)

    def domain(self, n: int):
        d = self.stat(n).shape[1]
        if self.statistic_domain is None:
            return np.full(d, -np.inf), np.full(d, np.inf)
        lo, hi = self.statistic_domain(n)
        return np.broadcast_to(np.asarray(lo, float), (d,)), np.broadcast_to(np.asarray(hi, float), (d,))


@dataclass
class FlowResult:
    eta: list
    gamma_mass: np.ndarray
    xi_bar: list  # xi_bar[n] = eta_{n-1}(xi_n); None at n = 0
    potentials: list = field(default_factory=list)  # G_{n-1} evaluated at xi_bar[n]
    Q: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.eta) - 1


def exact_flow(model: FiniteModel, horizon: int) -> FlowResult:
    eta = [model.eta0]
    gamma = [1.0]
    xi_bar, pots, Qs = [None], [None], [None]
    for n in range(1, horizon + 1):
        xb = eta[-1] @ model.stat(n)
        lo, hi = model.domain(n)
        if np.any(xb < lo) or np.any(xb > hi):
            raise OracleModelError(f"exact statistic mean at generation {n} leaves its domain")
        Q = model.Q(n, xb)
        G = Q.sum(axis=1)
        mass = eta[-1] @ G
        eta.append((eta[-1] @ Q) / mass)
        gamma.append(gamma[-1] * mass)
        xi_bar.append(xb)
        pots.append(G)
        Qs.append(Q)
    return FlowResult(eta, np.array(gamma), xi_bar, pots, Qs)


def _flow(model, n, flow):
    if flow is None or flow.horizon < n:
        return exact_flow(model, n)
    return flow


def _fd_steps(model, p, xb, step_scale):
    lo, hi = model.domain(p)
    h = np.maximum(FD_REL_STEP, FD_REL_STEP * np.abs(xb)) * step_scale
    for j in range(xb.size):
        while xb[j] - h[j] < lo[j] or xb[j] + h[j] > hi[j]:
            h[j] *= 0.5
            if h[j] < FD_MIN_STEP:
                raise OracleModelError(
                    f"statistic mean at generation {p} too close to its domain boundary "
                    "for a finite-difference derivative")
    return h


def dQ_phi(model: FiniteModel, p: int, xi_bar, phi, step_scale: float = 1.0,
           analytic: bool = False) -> np.ndarray:
    """Derivative of x -> Q_{p,xi} phi(x) in each coordinate of xi, shape (d, m, r)."""
    phi = _as_columns(phi)
    xb = np.asarray(xi_bar, dtype=float)
    if analytic:
        if model.potential_grad is None or model.kernel_grad is None:
            raise OracleModelError("analytic derivatives requested but the model has no hooks")
        G, M = model.G(p - 1, xb), model.M(p, xb)
        dG = np.asarray(model.potential_grad(p - 1, xb))
        dM = np.asarray(model.kernel_grad(p, xb))
        return np.stack([dG[j][:, None] * (M @ phi) + G[:, None] * (dM[j] @ phi)
                         for j in range(xb.size)])
    h = _fd_steps(model, p, xb, step_scale)
    out = []
    for j in range(xb.size):
        e = np.zeros_like(xb)
        e[j] = h[j]
        out.append((model.Q(p, xb + e) @ phi - model.Q(p, xb - e) @ phi) / (2 * h[j]))
    return np.stack(out) if out else np.zeros((0, model.m, phi.shape[1]))


def adaptation_gradient(model: FiniteModel, p: int, phi, flow: Optional[FlowResult] = None,
                        step_scale: float = 1.0, analytic: bool = False) -> np.ndarray:
    """eta_{p-1}[d_xi Q_p phi] as an (r, d) matrix."""
    flow = _flow(model, p, flow)
    dq = dQ_phi(model, p, flow.xi_bar[p], phi, step_scale, analytic)
    return np.einsum("m,dmr->rd", flow.eta[p - 1], dq)


def semigroup_L(model: FiniteModel, p: int, phi, flow: Optional[FlowResult] = None,
                zero_derivative: bool = False, step_scale: float = 1.0) -> np.ndarray:
    """Apply the adapted backward operator at generation p to ``phi`` (values on generation p)."""
    if p < 1:
        raise ValueError("the backward operator is defined for p >= 1")
    flow = _flow(model, p, flow)
    phi = _as_columns(phi)
    out = flow.Q[p] @ phi
    if not zero_derivative:
        D = adaptation_gradient(model, p, phi, flow, step_scale)
        if D.size:
            out = out + (model.stat(p) - flow.xi_bar[p]) @ D.T
    return out


def semigroup_L_compose(model: FiniteModel, p: int, n: int, phi, flow=None, **kw) -> np.ndarray:
    """L_{p+1} o ... o L_n applied to ``phi``; the identity when p == n."""
    flow = _flow(model, n, flow)
    out = _as_columns(phi)
    for q in range(n, p, -1):
        out = semigroup_L(model, q, out, flow, **kw)
    return out


def asymp_var_unnormalized(model: FiniteModel, n: int, phi, flow=None,
                           zero_derivative: bool = False, step_scale: float = 1.0) -> np.ndarray:
    """Asymptotic covariance of sqrt(N) (gamma_n^N - gamma_n)(phi)."""
    flow = _flow(model, n, flow)
    psi = _as_columns(phi)
    total = flow.gamma_mass[n] ** 2 * covariance(flow.eta[n], psi)
    for p in range(n, 0, -1):
        psi = semigroup_L(model, p, psi, flow, zero_derivative, step_scale)
        total = total + flow.gamma_mass[p - 1] ** 2 * covariance(flow.eta[p - 1], psi)
    return total


def asymp_var_normalized(model: FiniteModel, n: int, phi, flow=None, method: str = "recursion",
                         zero_derivative: bool = False) -> np.ndarray:
    """Asymptotic covariance of sqrt(N) (eta_n^N - eta_n)(phi).

    ``method="recursion"`` peels one generation at a time; ``"direct"`` sums
    the weighted covariances of the propagated centred test function.
    """
    flow = _flow(model, n, flow)
    phi = _as_columns(phi)
    if method == "recursion":
        return _normalized_recursion(model, n, phi, flow, zero_derivative)
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    psi = phi - flow.eta[n] @ phi
    gn = flow.gamma_mass[n]
    total = covariance(flow.eta[n], psi)
    for p in range(n, 0, -1):
        psi = semigroup_L(model, p, psi, flow, zero_derivative)
        total = total + (flow.gamma_mass[p - 1] / gn) ** 2 * covariance(flow.eta[p - 1], psi)
    return total


def _normalized_recursion(model, n, phi, flow, zero_derivative):
    base = covariance(flow.eta[n], phi)
    if n == 0:
        return base
    centred = phi - flow.eta[n] @ phi
    psi = semigroup_L(model, n, centred, flow, zero_derivative)
    mass = flow.eta[n - 1] @ flow.potentials[n]
    return base + _normalized_recursion(model, n - 1, psi, flow, zero_derivative) / mass**2


def nc_relative_variance(model: FiniteModel, n: int, flow=None, zero_derivative: bool = False) -> float:
    """Asymptotic variance of sqrt(N) (gamma_n^N(1) / gamma_n(1) - 1)."""
    flow = _flow(model, n, flow)
    masses = [flow.eta[k] @ flow.potentials[k + 1] for k in range(n)]
    psi = np.ones((model.m, 1))
    total = 0.0
    for p in range(n, -1, -1):
        total += covariance(flow.eta[p], psi)[0, 0] / np.prod(masses[p:n]) ** 2
        if p:
            psi = semigroup_L(model, p, psi, flow, zero_derivative)
    return float(total)


def stability_check(model: FiniteModel, n: int, phi, flow=None, step_scale: float = 1.0) -> float:
    """Sup-norm of eta_{n-1}[d_xi Q_n phi]; zero when adaptation costs nothing asymptotically."""
    D = adaptation_gradient(model, n, phi, flow, step_scale)
    return float(np.max(np.abs(D))) if D.size else 0.0


# ---------------------------------------------------------------------------
# tempering


@dataclass(frozen=True)
class TemperingFiniteModel:
    """Finite-state tempered bridge exp(-beta V) * base_measure.

    ``kernel_fn(xi, beta)`` must be a row-stochastic matrix leaving the
    beta-tempered law invariant for every xi.
    """

    V: np.ndarray
    base_measure: np.ndarray
    kernel_fn: Callable[[np.ndarray, float], np.ndarray]
    beta0: float
    beta_star: float
    alpha: float
    statistic_matrix: Optional[np.ndarray] = None
    name: str = "tempering-finite"

    def __post_init__(self):
        V = np.asarray(self.V, dtype=float)
        base = np.asarray(self.base_measure, dtype=float)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "base_measure", base)
        if V.shape != base.shape or V.ndim != 1:
            raise OracleModelError("V and base_measure must be vectors of equal length")
        if np.any(base <= 0) or not np.all(np.isfinite(V)):
            raise OracleModelError("base measure must be positive and V finite")
        if not 0.0 < self.alpha < 1.0:
            raise OracleModelError("alpha must lie in (0, 1)")
        if self.beta0 > self.beta_star:
            raise OracleModelError("beta0 must not exceed beta_star")

    @property
    def m(self) -> int:
        return self.V.size

    @property
    def stat(self) -> np.ndarray:
        if self.statistic_matrix is None:
            return np.zeros((self.m, 0))
        s = np.asarray(self.statistic_matrix, float)
        return s[:, None] if s.ndim == 1 else s

    def unnormalized(self, beta: float) -> np.ndarray:
        return np.exp(-beta * (self.V - self.V.min())) * self.base_measure

    def tempered(self, beta: float) -> np.ndarray:
        w = self.unnormalized(beta)
        return w / w.sum()

    def log_Z_ratio(self, beta: float) -> float:
        """log Z(beta) / Z(beta0)."""
        return float(np.log(self.unnormalized(beta).sum()) - np.log(self.unnormalized(self.beta0).sum())
                     - (beta - self.beta0) * self.V.min())

    def kernel(self, xi, beta: float) -> np.ndarray:
        K = np.asarray(self.kernel_fn(np.asarray(xi, float), float(beta)), dtype=float)
        if K.shape != (self.m, self.m) or np.max(np.abs(K.sum(axis=1) - 1.0)) > ROW_TOL:
            raise OracleModelError("tempering kernel must be a row-stochastic m x m matrix")
        return K


def limit_ladder(model: TemperingFiniteModel, horizon: int, alpha: Optional[float] = None,
                 beta0: Optional[float] = None, beta_star: Optional[float] = None) -> np.ndarray:
    """Limiting temperature ladder beta_0..beta_horizon driven by the exact ESS.

    Each kernel is checked to preserve its tempered law to 1e-10, which is
    what lets the marginal flow ignore the kernels.
    """
    alpha = model.alpha if alpha is None else alpha
    beta = model.beta0 if beta0 is None else beta0
    beta_star = model.beta_star if beta_star is None else beta_star
    ladder = [float(beta)]
    for n in range(1, horizon + 1):
        eta = model.tempered(beta)
        nxt = solve_next_beta(model.V, beta, beta_star, alpha, weights=eta)
        target = model.tempered(nxt)
        K = model.kernel(eta @ model.stat, nxt)
        if np.max(np.abs(target @ K - target)) > INVARIANCE_TOL:
            raise OracleModelError(f"kernel at generation {n} does not preserve its tempered law")
        beta = nxt
        ladder.append(beta)
    return np.array(ladder)


def tempering_gamma(model: TemperingFiniteModel, beta: float, phi) -> np.ndarray:
    """Limit of gamma_n(phi) when the ladder sits at ``beta``."""
    return np.exp(model.log_Z_ratio(beta)) * (model.tempered(beta) @ _as_columns(phi))


def _ess_ratio(eta, V, delta):
    g = np.exp(-delta * V)
    return (eta @ g) ** 2 / (eta @ g**2)


def tempering_clt_cov(model: TemperingFiniteModel, n: int, phi, ladder=None,
                      literal_entries: bool = False, fd_step: float = TEMPERATURE_FD_STEP) -> np.ndarray:
    """Joint asymptotic covariance of sqrt(N) (beta_n^N - beta_n, (gamma_n^N - gamma_n)(phi)).

    Returned as a (1 + r) x (1 + r) matrix with the temperature first.
    ``literal_entries=True`` drops the gamma_{n-1}(1) factor from the
    temperature-sensitivity column of the gamma rows, as the entry list is
    printed in the source; the default keeps the factor the linearisation
    produces.
    """
    if ladder is None:
        ladder = limit_ladder(model, n)
    ladder = np.asarray(ladder, dtype=float)
    if ladder.size < n + 1:
        raise ValueError("ladder shorter than the requested generation")
    return _tempering_sigma(model, n, _as_columns(phi), ladder, literal_entries, fd_step)


def _tempering_step(model, n, psi, ladder, literal, h):
    """Linearisation at generation n >= 1: returns (A_n, extended test function, fresh term)."""
    k = psi.shape[1]
    beta_n, b_prev = ladder[n], ladder[n - 1]
    eta = model.tempered(b_prev)
    gamma_prev = np.exp(model.log_Z_ratio(b_prev))
    delta = beta_n - b_prev
    xi = eta @ model.stat

    def Qpsi(b1, b2):
        return np.exp(-(b2 - b1) * model.V)[:, None] * (model.kernel(xi, b2) @ psi)

    G = np.exp(-delta * model.V)
    eg, eg2 = eta @ G, eta @ G**2
    ext = np.hstack([(G - eg)[:, None], (G**2 - eg2)[:, None], Qpsi(b_prev, beta_n)])

    # temperature row: coefficients on (beta_{n-1} error, X_G, X_{G^2}); zero once capped
    row = np.zeros(3)
    if beta_n < model.beta_star:
        slope = (_ess_ratio(eta, model.V, delta + h) - _ess_ratio(eta, model.V, delta - h)) / (2 * h)
        if abs(slope) < DEGENERATE_ESS_SLOPE:
            raise OracleModelError(
                f"degenerate ESS profile at generation {n}: V is nearly constant under eta")
        row[0] = 1.0
        row[1] = -2.0 / gamma_prev * eg / eg2 / slope
        row[2] = 1.0 / gamma_prev * eg**2 / eg2**2 / slope
    d_b1 = eta @ ((Qpsi(b_prev + h, beta_n) - Qpsi(b_prev - h, beta_n)) / (2 * h))
    d_b2 = eta @ ((Qpsi(b_prev, beta_n + h) - Qpsi(b_prev, beta_n - h)) / (2 * h))

    A = np.zeros((k + 1, k + 3))
    A[0, :3] = row
    A[1:, 0] = (1.0 if literal else gamma_prev) * (d_b1 + d_b2 * row[0])
    A[1:, 1] = gamma_prev * d_b2 * row[1]
    A[1:, 2] = gamma_prev * d_b2 * row[2]
    A[1:, 3:] = np.eye(k)
    return A, ext


def _fresh_term(model, beta, psi):
    k = psi.shape[1]
    out = np.zeros((k + 1, k + 1))
    out[1:, 1:] = np.exp(2 * model.log_Z_ratio(beta)) * covariance(model.tempered(beta), psi)
    return out


def _tempering_sigma(model, n, psi, ladder, literal, h):
    fresh = _fresh_term(model, ladder[n], psi)
    if n == 0:
        return fresh
    A, ext = _tempering_step(model, n, psi, ladder, literal, h)
    return A @ _tempering_sigma(model, n - 1, ext, ladder, literal, h) @ A.T + fresh


def tempering_A(model: TemperingFiniteModel, n: int, phi, ladder=None, literal_entries: bool = False,
                fd_step: float = TEMPERATURE_FD_STEP) -> np.ndarray:
    """The (1 + r) x (r + 3) linearisation matrix used at generation n >= 1."""
    if n < 1:
        raise ValueError("the linearisation matrix is defined for n >= 1")
    if ladder is None:
        ladder = limit_ladder(model, n)
    return _tempering_step(model, n, _as_columns(phi), np.asarray(ladder, float), literal_entries, fd_step)[0]
