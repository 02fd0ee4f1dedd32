"""Demand systems with analytic first and second price derivatives.

Every family is evaluated in relative form: ``log q``, the semi-elasticity
matrix ``eta[j, k] = q_{j,k} / q_j`` and ``hess_rel[j, k, l] = q_{j,kl} / q_j``.
Absolute arrays are rebuilt from these, so ratio-based quantities
(diversion, curvature, normalized FOC terms) stay finite deep in the tails
where the levels themselves underflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import ClassVar, Union

import numpy as np
from scipy.special import gammaln, logsumexp, roots_genlaguerre, roots_hermite

from .exceptions import (
    DimensionMismatch,
    NonPositivePrice,
    OutOfDomain,
    QuadratureUnderflow,
    SingularOwnSlope,
    UnsupportedDemand,
    ZeroDenominator,
)

_LOG_UNDERFLOW = np.log(1e-300)


def _vec(x, name):
    a = np.atleast_1d(np.asarray(x, dtype=float))
    if a.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(a)):
        raise OutOfDomain(f"{name} must be finite")
    return a


def _mat(x, name, n):
    a = np.asarray(x, dtype=float)
    if a.shape != (n, n):
        raise DimensionMismatch(f"{name} must have shape ({n}, {n}), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise OutOfDomain(f"{name} must be finite")
    return a


# ---------------------------------------------------------------------------
# specifications


@dataclass(frozen=True)
class Logit:
    """Multinomial logit with an outside good: q = M exp(delta - alpha p) / (1 + sum)."""

    alpha: float
    delta: np.ndarray
    scale_M: float = 1.0
    family: ClassVar[str] = "logit"

    def __post_init__(self):
        object.__setattr__(self, "delta", _vec(self.delta, "delta"))
        if not self.alpha > 0:
            raise OutOfDomain("alpha must be positive")
        if not self.scale_M > 0:
            raise OutOfDomain("scale_M must be positive")

    @property
    def n_products(self):
        return self.delta.size


@dataclass(frozen=True)
class NestedLogit:
    """One-level nested logit; ``sigma_nest`` in [0, 1) is the nesting parameter."""

    alpha: float
    sigma_nest: float
    nest_of: np.ndarray
    delta: np.ndarray
    scale_M: float = 1.0
    family: ClassVar[str] = "nested_logit"

    def __post_init__(self):
        object.__setattr__(self, "delta", _vec(self.delta, "delta"))
        nest = np.asarray(self.nest_of, dtype=int)
        if nest.shape != self.delta.shape:
            raise DimensionMismatch("nest_of must have one entry per product")
        object.__setattr__(self, "nest_of", nest)
        if not self.alpha > 0:
            raise OutOfDomain("alpha must be positive")
        if not 0.0 <= self.sigma_nest < 1.0:
            raise OutOfDomain("sigma_nest must lie in [0, 1)")
        if not self.scale_M > 0:
            raise OutOfDomain("scale_M must be positive")

    @property
    def n_products(self):
        return self.delta.size


@dataclass(frozen=True)
class CES:
    """CES demand with an outside option: q_j = (B / p_j) x_j / (1 + sum x), x_j = e^delta_j p_j^(1 - sigma)."""

    sigma_ces: float
    delta: np.ndarray
    budget_B: float = 1.0
    family: ClassVar[str] = "ces"

    def __post_init__(self):
        object.__setattr__(self, "delta", _vec(self.delta, "delta"))
        if not self.sigma_ces > 1:
            raise OutOfDomain("sigma_ces must exceed 1")
        if not self.budget_B > 0:
            raise OutOfDomain("budget_B must be positive")

    @property
    def n_products(self):
        return self.delta.size


@dataclass(frozen=True)
class LogNormal:
    """Log-normal price coefficient, log(alpha) ~ N(mu, sigma_ln^2)."""

    mu: float
    sigma_ln: float
    kind: ClassVar[str] = "lognormal"

    def __post_init__(self):
        if not self.sigma_ln >= 0:
            raise OutOfDomain("sigma_ln must be non-negative")

    def mean(self):
        return float(np.exp(self.mu + 0.5 * self.sigma_ln**2))


@dataclass(frozen=True)
class GammaMixing:
    """Gamma price coefficient with shape ``shape_r`` and rate ``rate_beta``."""

    shape_r: float
    rate_beta: float
    kind: ClassVar[str] = "gamma"

    def __post_init__(self):
        if not (self.shape_r > 0 and self.rate_beta > 0):
            raise OutOfDomain("gamma mixing needs positive shape and rate")

    def mean(self):
        return self.shape_r / self.rate_beta


@dataclass(frozen=True)
class MixedLogit:
    """Logit with a random price coefficient integrated by Gaussian quadrature."""

    mixing: Union[LogNormal, GammaMixing]
    delta: np.ndarray
    scale_M: float = 1.0
    quad_nodes: int = 64
    family: ClassVar[str] = "mixed_logit"

    def __post_init__(self):
        object.__setattr__(self, "delta", _vec(self.delta, "delta"))
        if not isinstance(self.mixing, (LogNormal, GammaMixing)):
            raise UnsupportedDemand("mixing must be LogNormal or GammaMixing")
        if int(self.quad_nodes) < 1:
            raise OutOfDomain("quad_nodes must be positive")
        object.__setattr__(self, "quad_nodes", int(self.quad_nodes))
        if not self.scale_M > 0:
            raise OutOfDomain("scale_M must be positive")

    @property
    def n_products(self):
        return self.delta.size


@dataclass(frozen=True)
class Linear:
    """Linear demand q = gamma_vec - beta_mat @ p."""

    gamma_vec: np.ndarray
    beta_mat: np.ndarray
    family: ClassVar[str] = "linear"

    def __post_init__(self):
        g = _vec(self.gamma_vec, "gamma_vec")
        object.__setattr__(self, "gamma_vec", g)
        object.__setattr__(self, "beta_mat", _mat(self.beta_mat, "beta_mat", g.size))

    @property
    def n_products(self):
        return self.gamma_vec.size


@dataclass(frozen=True)
class Aids:
    """Linear-approximate AIDS with a Stone price index; q_j = (B / p_j) w_j."""

    alpha_vec: np.ndarray
    gamma_mat: np.ndarray
    beta_vec: np.ndarray
    stone_weights: np.ndarray
    budget_B: float = 1.0
    family: ClassVar[str] = "aids"

    def __post_init__(self):
        a = _vec(self.alpha_vec, "alpha_vec")
        n = a.size
        object.__setattr__(self, "alpha_vec", a)
        object.__setattr__(self, "gamma_mat", _mat(self.gamma_mat, "gamma_mat", n))
        for name in ("beta_vec", "stone_weights"):
            v = _vec(getattr(self, name), name)
            if v.size != n:
                raise DimensionMismatch(f"{name} must have {n} entries")
            object.__setattr__(self, name, v)
        w = self.stone_weights
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise OutOfDomain("stone_weights must be non-negative and sum to one")
        if not self.budget_B > 0:
            raise OutOfDomain("budget_B must be positive")

    @property
    def n_products(self):
        return self.alpha_vec.size


DemandSpec = Union[Logit, NestedLogit, CES, MixedLogit, Linear, Aids]
LOGIT_FAMILY = ("logit", "nested_logit", "mixed_logit")


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class DemandEval:
    """Demand level and derivatives at a price vector.

    ``jac[j, k] = dq_j/dp_k`` and ``hess[j, k, l] = d2q_j/dp_k dp_l``.
    """

    q: np.ndarray
    jac: np.ndarray
    hess: np.ndarray
    log_q: np.ndarray
    eta: np.ndarray
    hess_rel: np.ndarray
    max_log_contrib: np.ndarray = field(default=None, repr=False)


@dataclass
class DerivedDemand:
    shares: np.ndarray
    eta: np.ndarray
    eps_own: np.ndarray
    diversion: np.ndarray
    delta_ratio: np.ndarray


def _check_prices(spec, p):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size != spec.n_products:
        raise DimensionMismatch(f"expected {spec.n_products} prices, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise OutOfDomain("prices must be finite")
    if np.any(p <= 0):
        raise NonPositivePrice("prices must be strictly positive")
    return p


def _log_shares(v):
    """Log logit shares with an outside good of utility zero; v is (..., J)."""
    zero = np.zeros(v.shape[:-1] + (1,))
    lse = logsumexp(np.concatenate([zero, v], axis=-1), axis=-1)
    return v - lse[..., None]


@lru_cache(maxsize=32)
def _hermite(n):
    x, w = roots_hermite(n)
    return x, w


@lru_cache(maxsize=32)
def _genlaguerre(n, a):
    u, w = roots_genlaguerre(n, a)
    return u, w


def _logit_mixture(alpha, logw, rows, delta, p):
    """Mixture of conditional logits over price-coefficient nodes.

    ``alpha`` and ``logw`` are (R, N) node sets; product j integrates over
    node set ``rows[j]``.  Returns (log_q, eta, hess_rel, max_log_contrib).
    """
    n_prod = p.size
    eye = np.eye(n_prod)
    logs = _log_shares(delta[None, None, :] - alpha[:, :, None] * p[None, None, :])
    s = np.exp(logs)
    idx = np.arange(n_prod)
    with np.errstate(invalid="ignore"):
        lc = logw[rows] + logs[rows, :, idx]  # (J, N)
    lc = np.where(np.isnan(lc), -np.inf, lc)
    log_q = logsumexp(lc, axis=1)
    with np.errstate(invalid="ignore", over="ignore"):
        pi = np.exp(lc - log_q[:, None])
    pi = np.nan_to_num(pi)
    a = alpha[rows]
    sr = s[rows]  # (J, N, J)
    A = eye[:, None, :] - sr
    eta = -np.einsum("ji,jik->jk", pi * a, A)
    outer = A[:, :, :, None] * A[:, :, None, :]
    cross = sr[:, :, :, None] * (eye[None, None] - sr[:, :, None, :])
    hess_rel = np.einsum("ji,jikl->jkl", pi * a**2, outer - cross)
    return log_q, eta, hess_rel, lc.max(axis=1)


def _eval_logit(spec, p):
    alpha = np.array([[spec.alpha]])
    logw = np.array([[np.log(spec.scale_M)]])
    rows = np.zeros(p.size, dtype=int)
    return _logit_mixture(alpha, logw, rows, spec.delta, p)


def _eval_mixed(spec, p):
    n = spec.quad_nodes
    mix = spec.mixing
    if isinstance(mix, LogNormal):
        x, w = _hermite(n)
        alpha = np.exp(mix.mu + np.sqrt(2.0) * mix.sigma_ln * x)[None, :]
        with np.errstate(divide="ignore"):
            logw = (np.log(w) - 0.5 * np.log(np.pi) + np.log(spec.scale_M))[None, :]
        rows = np.zeros(p.size, dtype=int)
    else:
        # generalized Gauss-Laguerre, tilted per product by exp(-p_j alpha) so
        # the nodes follow the integrand as prices grow
        r, beta = mix.shape_r, mix.rate_beta
        u, w = _genlaguerre(n, r - 1.0)
        scale = beta + p  # (J,)
        alpha = u[None, :] / scale[:, None]
        with np.errstate(divide="ignore"):
            logw = (
                np.log(w)[None, :]
                - gammaln(r)
                + r * np.log(beta / scale)[:, None]
                + p[:, None] * alpha
                + np.log(spec.scale_M)
            )
        rows = np.arange(p.size)
    return _logit_mixture(alpha, logw, rows, spec.delta, p)


def _eval_nested(spec, p):
    sig, a = spec.sigma_nest, spec.alpha
    nest = spec.nest_of
    n_prod = p.size
    t = (spec.delta - a * p) / (1.0 - sig)
    groups = np.unique(nest)
    log_d = np.empty(n_prod)
    log_iv = []
    for g in groups:
        m = nest == g
        ld = logsumexp(t[m])
        log_d[m] = ld
        log_iv.append((1.0 - sig) * ld)
    lse = logsumexp(np.concatenate([[0.0], log_iv]))
    log_cond = t - log_d
    log_q = log_cond + (1.0 - sig) * log_d - lse
    s = np.exp(log_q)
    sc = np.exp(log_cond)
    same = (nest[:, None] == nest[None, :]).astype(float)
    eye = np.eye(n_prod)
    eta = -a * (eye / (1.0 - sig) - sig / (1.0 - sig) * sc[None, :] * same - s[None, :])
    # d s_{k|g} / d p_l and d s_k / d p_l
    dcond = sc[:, None] * (-a) * (eye - sc[None, :] * same) / (1.0 - sig)
    dshare = s[:, None] * eta
    deta = a * (sig / (1.0 - sig) * same[:, :, None] * dcond[None, :, :] + dshare[None, :, :])
    hess_rel = deta + eta[:, :, None] * eta[:, None, :]
    log_q = log_q + np.log(spec.scale_M)
    return log_q, eta, hess_rel, log_q


def _eval_ces(spec, p):
    sig = spec.sigma_ces
    n_prod = p.size
    log_x = spec.delta + (1.0 - sig) * np.log(p)
    log_b = log_x - logsumexp(np.concatenate([[0.0], log_x]))
    b = np.exp(log_b)
    log_q = np.log(spec.budget_B) - np.log(p) + log_b
    eye = np.eye(n_prod)
    eta = -sig * eye / p[:, None] + (sig - 1.0) * (b / p)[None, :]
    deta = (
        sig * eye[:, :, None] * eye[:, None, :] / (p**2)[:, None, None]
        + (sig - 1.0)
        * (
            (sig - 1.0) * (b / p)[:, None] * (b[None, :] - eye) / p[None, :]
            - (b / p**2)[:, None] * eye
        )[None, :, :]
    )
    hess_rel = deta + eta[:, :, None] * eta[:, None, :]
    return log_q, eta, hess_rel, log_q


def _eval_linear(spec, p):
    q = spec.gamma_vec - spec.beta_mat @ p
    if np.any(q <= 0):
        raise OutOfDomain("linear demand is non-positive at these prices")
    n_prod = p.size
    eta = -spec.beta_mat / q[:, None]
    log_q = np.log(q)
    return log_q, eta, np.zeros((n_prod, n_prod, n_prod)), log_q


def aids_budget_shares(spec, p):
    """AIDS budget shares w_j at prices p."""
    p = _check_prices(spec, p)
    lp = np.log(p)
    return (
        spec.alpha_vec
        + spec.gamma_mat @ lp
        + spec.beta_vec * (np.log(spec.budget_B) - spec.stone_weights @ lp)
    )


def aids_share_slopes(spec):
    """A_jk = gamma_jk - beta_j omega_k, so dw_j/dp_k = A_jk / p_k."""
    return spec.gamma_mat - np.outer(spec.beta_vec, spec.stone_weights)


def _eval_aids(spec, p):
    w = aids_budget_shares(spec, p)
    if np.any(w <= 0):
        raise OutOfDomain("AIDS budget share is non-positive at these prices")
    A = aids_share_slopes(spec)
    n_prod = p.size
    eye = np.eye(n_prod)
    eta = A / (w[:, None] * p[None, :]) - eye / p[:, None]
    wj = w[:, None, None]
    pj = p[:, None, None]
    pk = p[None, :, None]
    pl = p[None, None, :]
    e_kl = eye[None, :, :]
    e_jl = eye[:, None, :]
    e_jk = eye[:, :, None]
    hess_rel = (
        -A[:, :, None] * e_kl / (wj * pk**2)
        - A[:, :, None] * e_jl / (wj * pk * pj)
        - A[:, None, :] * e_jk / (wj * pl * pj)
        + 2.0 * e_jk * e_jl / pj**2
    )
    log_q = np.log(spec.budget_B) + np.log(w) - np.log(p)
    return log_q, eta, hess_rel, log_q


_EVALUATORS = {
    "logit": _eval_logit,
    "nested_logit": _eval_nested,
    "ces": _eval_ces,
    "mixed_logit": _eval_mixed,
    "linear": _eval_linear,
    "aids": _eval_aids,
}


def eval_relative(spec, p):
    """Return (log_q, eta, hess_rel) without forming levels.

    Safe in the tails, where ``q`` itself may underflow.
    """
    p = _check_prices(spec, p)
    fn = _EVALUATORS.get(getattr(spec, "family", None))
    if fn is None:
        raise UnsupportedDemand(f"unknown demand family {type(spec).__name__}")
    log_q, eta, hess_rel, _ = fn(spec, p)
    return log_q, eta, hess_rel


def eval_demand(spec, p):
    """Evaluate demand, Jacobian and Hessian tensor at prices ``p``."""
    p = _check_prices(spec, p)
    fn = _EVALUATORS.get(getattr(spec, "family", None))
    if fn is None:
        raise UnsupportedDemand(f"unknown demand family {type(spec).__name__}")
    log_q, eta, hess_rel, max_lc = fn(spec, p)
    if spec.family == "mixed_logit":
        if np.any(max_lc - np.log(spec.scale_M) < _LOG_UNDERFLOW):
            raise QuadratureUnderflow("every quadrature node contributes less than 1e-300")
    if not (np.all(np.isfinite(eta)) and np.all(np.isfinite(hess_rel))):
        raise OutOfDomain("demand derivatives are not finite at these prices")
    q = np.exp(log_q)
    jac = q[:, None] * eta
    if spec.family == "linear":
        # levels are exact for affine demand; skip the log round trip
        q = spec.gamma_vec - spec.beta_mat @ p
        jac = -spec.beta_mat.copy()
    return DemandEval(
        q=q,
        jac=jac,
        hess=q[:, None, None] * hess_rel,
        log_q=log_q,
        eta=eta,
        hess_rel=hess_rel,
        max_log_contrib=max_lc,
    )


def shares_of(spec, p, ev):
    """Quantity shares (logit family), expenditure shares (CES, AIDS) or inside shares (linear)."""
    if spec.family in LOGIT_FAMILY:
        return np.exp(ev.log_q - np.log(spec.scale_M))
    if spec.family in ("ces", "aids"):
        return np.exp(ev.log_q + np.log(p) - np.log(spec.budget_B))
    return ev.q / ev.q.sum()


def diversion_matrix(log_q, eta):
    """D[j, l] = -q_{l,j} / q_{j,j}, with D[j, j] = -1."""
    own = np.diag(eta)
    if np.any(own == 0) or not np.all(np.isfinite(own)):
        raise SingularOwnSlope("own-price slope is zero")
    ratio = np.exp(log_q[None, :] - log_q[:, None])  # q_l / q_j
    return -ratio * eta.T / own[:, None]


def derived_demand(spec, ev, p):
    """Shares, semi-elasticities, own elasticities, diversion ratios and delta ratios."""
    p = _check_prices(spec, p)
    D = diversion_matrix(ev.log_q, ev.eta)
    own = np.diag(ev.eta)
    return DerivedDemand(
        shares=shares_of(spec, p, ev),
        eta=ev.eta.copy(),
        eps_own=p * own,
        diversion=D,
        delta_ratio=-ev.eta / own[:, None],
    )


def curvature_index(ev, j, k, l):
    """kappa^j_kl = q_j q_{j,kl} / (q_{j,k} q_{j,l})."""
    den = ev.eta[j, k] * ev.eta[j, l]
    if den == 0:
        raise ZeroDenominator(f"q_{{{j},{k}}} q_{{{j},{l}}} is zero")
    return ev.hess_rel[j, k, l] / den


def fd_derivative_audit(spec, p, h=1e-6):
    """Max normwise relative error of analytic jac/hess against central differences."""
    p = _check_prices(spec, p)
    ev = eval_demand(spec, p)
    n = p.size
    jac_fd = np.empty((n, n))
    hess_fd = np.empty((n, n, n))
    for k in range(n):
        step = h * max(1.0, abs(p[k]))
        up, dn = p.copy(), p.copy()
        up[k] += step
        dn[k] -= step
        eu, ed = eval_demand(spec, up), eval_demand(spec, dn)
        jac_fd[:, k] = (eu.q - ed.q) / (2 * step)
        hess_fd[:, :, k] = (eu.jac - ed.jac) / (2 * step)

    def rel(fd, an):
        scale = np.max(np.abs(an))
        if scale == 0:
            return float(np.max(np.abs(fd)))
        return float(np.max(np.abs(fd - an)) / scale)

    return {"jac": rel(jac_fd, ev.jac), "hess": rel(hess_fd, ev.hess)}
