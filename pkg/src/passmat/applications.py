"""Percentage pass-through, first-order consumer surplus and merger analysis."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .asymptotics import thin_tail_diag_approx
from .core import pricing_terms
from .equilibrium import solve_bertrand
from .exceptions import (
    DimensionMismatch,
    InvalidPartition,
    NonPositivePriceOrCost,
    NumericalError,
    SingularLambdaPre,
)
from .market import normalize_partition, ownership_matrix
from .passthrough import solve_jacobian

log = logging.getLogger(__name__)

METHODS = ("PreJacobian", "JaffeWeyl", "ThinTailDiag")


@dataclass
class PercentageReport:
    psi_tau: np.ndarray
    limit_form: Optional[np.ndarray]
    deviation: Optional[float]


@dataclass(frozen=True)
class MergerScenario:
    pre_partition: tuple
    post_partition: tuple
    omega_pre: np.ndarray
    omega_post: np.ndarray
    affected: tuple


@dataclass
class MergerReport:
    upp: np.ndarray
    pseudo_tax: np.ndarray
    dp_pretax: np.ndarray
    dp_jw: np.ndarray
    slope_diff: np.ndarray
    dp_true: Optional[np.ndarray]
    dp_thin_tail: np.ndarray
    errors_vs_true: dict = field(default_factory=dict)
    p_post: Optional[np.ndarray] = None
    converged: bool = True


def percentage_passthrough(psi, p, c, family=None):
    """Psi^tau = diag(1/p) Psi diag(c) with the small-share benchmark when known."""
    psi = np.asarray(psi, dtype=float)
    p = np.asarray(p, dtype=float)
    c = np.asarray(c, dtype=float)
    n = p.size
    if psi.shape != (n, n) or c.shape != (n,):
        raise DimensionMismatch("psi, p and c must agree")
    if np.any(p <= 0) or np.any(c <= 0):
        raise NonPositivePriceOrCost("prices and costs must be positive")
    psi_tau = psi * (c[None, :] / p[:, None])
    limit = None
    if family in ("logit", "mixed_logit", "nested_logit"):
        limit = np.diag(c / p)  # diag(1 - m), m the relative margin
    elif family == "ces":
        limit = np.eye(n)
    dev = None if limit is None else float(np.linalg.norm(psi_tau - limit, np.inf))
    return PercentageReport(psi_tau, limit, dev)


def consumer_surplus_delta(revenues, psi_tau, dtau, limit_form=None):
    """dCS = -R^T Psi^tau dtau; with a limit form also returns its reduced value."""
    r = np.asarray(revenues, dtype=float)
    psi_tau = np.asarray(psi_tau, dtype=float)
    dtau = np.asarray(dtau, dtype=float)
    n = r.size
    if psi_tau.shape != (n, n) or dtau.shape != (n,):
        raise DimensionMismatch("revenues, psi_tau and dtau must agree")
    full = float(-r @ psi_tau @ dtau)
    if limit_form is None:
        return full
    return full, float(-r @ np.asarray(limit_form) @ dtau)


# ---------------------------------------------------------------------------
# mergers


def merger_scenario(pre_partition, post_partition, n_products):
    """Validate that post coarsens pre and derive ownership matrices."""
    pre = normalize_partition(pre_partition, n_products)
    post = normalize_partition(post_partition, n_products)
    owner = {}
    for f, members in enumerate(post):
        for j in members:
            owner[j] = f
    for members in pre:
        if len({owner[j] for j in members}) != 1:
            raise InvalidPartition("post-merger partition must combine whole pre-merger firms")
    o_pre = ownership_matrix(pre, n_products)
    o_post = ownership_matrix(post, n_products)
    affected = tuple(int(j) for j in np.flatnonzero(np.any(o_pre != o_post, axis=1)))
    return MergerScenario(pre, post, o_pre, o_post, affected)


def _check_p0(market, p0):
    t = pricing_terms(market.demand, market.cost, market.omega, p0)
    res = float(np.max(np.abs(t.f)))
    if res > 1e-8:
        log.warning("p0 is not a pre-merger equilibrium (residual %.2e)", res)
    return t


def upp_vector(market, p0, scen, check_sum=True):
    """g = (Lambda_pre - Lambda_post) m at p0, cross-checked against the summation form."""
    p0 = np.asarray(p0, dtype=float)
    pre = pricing_terms(market.demand, market.cost, scen.omega_pre, p0)
    lam_post = -scen.omega_post * pre.diversion
    g = (pre.lam - lam_post) @ pre.margin
    if check_sum:
        delta = scen.omega_post - scen.omega_pre
        n = p0.size
        g_sum = np.array(
            [sum(delta[j, l] * pre.margin[l] * pre.diversion[j, l] for l in range(n) if l != j) for j in range(n)]
        )
        gap = float(np.max(np.abs(g - g_sum))) if n else 0.0
        if gap > 1e-12 * max(1.0, float(np.max(np.abs(g)))):
            raise NumericalError(f"UPP matrix and summation forms disagree by {gap:.2e}")
    return g


def pseudo_tax(market, p0, scen):
    """Solve Lambda_pre t = g."""
    p0 = np.asarray(p0, dtype=float)
    lam_pre = pricing_terms(market.demand, market.cost, scen.omega_pre, p0).lam
    g = upp_vector(market, p0, scen)
    if np.linalg.cond(lam_pre) > 1e12:
        raise SingularLambdaPre("pre-merger Lambda is singular")
    return np.linalg.solve(lam_pre, g)


def upp_function(market, scen):
    """p -> g(p) = f(p; Omega_post) - f(p; Omega_pre)."""

    def g(p):
        a = pricing_terms(market.demand, market.cost, scen.omega_post, p).f
        b = pricing_terms(market.demand, market.cost, scen.omega_pre, p).f
        return a - b

    return g


def slope_difference(market, p0, scen):
    """C(p0; Omega_post) - C(p0; Omega_pre), and the check J_post - J_pre equals it."""
    pre = pricing_terms(market.demand, market.cost, scen.omega_pre, p0)
    post = pricing_terms(market.demand, market.cost, scen.omega_post, p0)
    diff = post.c_mat - pre.c_mat
    gap = float(np.max(np.abs((post.j_f - pre.j_f) - diff)))
    if gap > 1e-9:
        raise NumericalError(f"J_f difference departs from C difference by {gap:.2e}")
    return diff, pre, post


def merger_price_effects(market, p0, scen, method="PreJacobian"):
    """First-order merger price effect by one of PreJacobian, JaffeWeyl or ThinTailDiag."""
    p0 = np.asarray(p0, dtype=float)
    g = upp_vector(market, p0, scen)
    if method == "PreJacobian":
        j = pricing_terms(market.demand, market.cost, scen.omega_pre, p0).j_f
        return -solve_jacobian(j, g)[0]
    if method == "JaffeWeyl":
        j = pricing_terms(market.demand, market.cost, scen.omega_post, p0).j_f
        return -solve_jacobian(j, g)[0]
    if method == "ThinTailDiag":
        t = pseudo_tax(market, p0, scen)
        return thin_tail_diag_approx(market, p0).matrix @ t
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def resolve_post_merger(market, scen, p0, tol=1e-10):
    """Re-solve Bertrand under Omega_post starting from p0."""
    res = solve_bertrand(market.with_firms(scen.post_partition), p0=p0, tol=tol)
    return res.p_star, res.p_star - np.asarray(p0, dtype=float)


def merger_report(market, p0, scen, tol=1e-10):
    """All first-order approximations plus the re-solved truth."""
    from .exceptions import NoConvergence

    p0 = np.asarray(p0, dtype=float)
    _check_p0(market.with_firms(scen.pre_partition), p0)
    g = upp_vector(market, p0, scen)
    t = pseudo_tax(market, p0, scen)
    diff, pre, post = slope_difference(market, p0, scen)
    dp_pre = -solve_jacobian(pre.j_f, g)[0]
    dp_jw = -solve_jacobian(post.j_f, g)[0]
    dp_tt = thin_tail_diag_approx(market, p0).matrix @ t
    p_post, dp_true, converged = None, None, True
    try:
        p_post, dp_true = resolve_post_merger(market, scen, p0, tol)
    except NoConvergence:
        converged = False
    errors = {}
    if dp_true is not None:
        for name, dp in (("PreJacobian", dp_pre), ("JaffeWeyl", dp_jw), ("ThinTailDiag", dp_tt)):
            errors[name] = float(np.max(np.abs(dp - dp_true)))
    return MergerReport(g, t, dp_pre, dp_jw, diff, dp_true, dp_tt, errors, p_post, converged)


def wedge_path(market, p0, scen, eps, tol=1e-12):
    """Exact and first-order responses when only the ownership wedge is scaled by eps.

    Uses ownership Omega_pre + eps (Omega_post - Omega_pre); f is linear in
    Omega so the perturbation is exactly eps g(p).  Returns dp_true and the
    PreJacobian and JaffeWeyl predictions (the latter with J_pre + eps dC).
    """
    p0 = np.asarray(p0, dtype=float)
    omega_eps = scen.omega_pre + eps * (scen.omega_post - scen.omega_pre)
    res = solve_bertrand(market, p0=p0, tol=tol, omega=omega_eps, check_soc=False)
    g = upp_vector(market, p0, scen)
    diff, pre, _ = slope_difference(market, p0, scen)
    dp_pre = -solve_jacobian(pre.j_f, eps * g)[0]
    dp_jw = -solve_jacobian(pre.j_f + eps * diff, eps * g)[0]
    return res.p_star - p0, dp_pre, dp_jw
