"""Bertrand-Nash equilibrium: FOC residuals, a Newton solver and second-order checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import foc_levels, pricing_terms, profit_hessian
from .demand import LOGIT_FAMILY, eval_demand
from .exceptions import DomainExhausted, InputError, NoConvergence, PassmatError

log = logging.getLogger(__name__)

SOC_SLACK = 1e-8
SOC_DIRECTIONS = 32
SOC_SEED = 7


@dataclass
class EquilibriumResult:
    p_star: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    soc_ok: bool


@dataclass
class SocReport:
    ok: bool
    max_eig: np.ndarray
    min_directional_margin: float


def foc_residual(market, p):
    """Unnormalized FOC F(p) = q + (Omega * J_q^T)(p - c)."""
    return foc_levels(market.demand, market.cost, market.omega, p)


def normalized_foc(market, p, omega=None):
    """f(p) = -F(p) / q_{j,j}, in price units."""
    omega = market.omega if omega is None else omega
    return pricing_terms(market.demand, market.cost, omega, p).f


def default_start(market):
    d, c = market.demand, market.cost
    n = market.n_products
    s_bar = 1.0 / (n + 1.0)
    if d.family in LOGIT_FAMILY:
        if d.family == "mixed_logit":
            alpha = d.mixing.mean()
        elif d.family == "nested_logit":
            alpha = d.alpha / (1.0 - d.sigma_nest)
        else:
            alpha = d.alpha
        return c + 1.0 / (alpha * (1.0 - s_bar))
    if d.family == "ces":
        return c * d.sigma_ces / (d.sigma_ces - 1.0) + (c == 0)
    p0 = 1.5 * c
    return np.where(p0 > 0, p0, 1.0)


def _terms(market, omega, p):
    try:
        return pricing_terms(market.demand, market.cost, omega, p)
    except InputError:
        return None
    except PassmatError:
        return None


def _fixed_point_step(market, omega, p, theta=0.5):
    ev = eval_demand(market.demand, p)
    delta = omega * ev.jac.T
    markup = -np.linalg.solve(delta, ev.q)
    return (1.0 - theta) * p + theta * (market.cost + markup)


def solve_bertrand(market, p0=None, tol=1e-10, max_iter=100, omega=None, check_soc=True):
    """Newton's method on the normalized FOC with step halving.

    Falls back to a damped markup fixed point when halving fails.
    """
    omega = market.omega if omega is None else np.asarray(omega, dtype=float)
    p = default_start(market) if p0 is None else np.asarray(p0, dtype=float).copy()
    t = _terms(market, omega, p)
    if t is None:
        raise DomainExhausted("starting prices are outside the demand domain")
    res = np.max(np.abs(t.f))
    it = 0
    while res > tol and it < max_iter:
        it += 1
        try:
            step = -np.linalg.solve(t.j_f, t.f)
        except np.linalg.LinAlgError:
            step = None
        accepted = False
        if step is not None and np.all(np.isfinite(step)):
            lam = 1.0
            for _ in range(21):
                trial = p + lam * step
                if np.all(trial > 0):
                    tt = _terms(market, omega, trial)
                    if tt is not None and np.all(np.isfinite(tt.f)):
                        r = np.max(np.abs(tt.f))
                        if r < res:
                            p, t, res, accepted = trial, tt, r, True
                            break
                lam *= 0.5
        if not accepted:
            log.debug("newton step rejected at iteration %d, using fixed point", it)
            try:
                trial = _fixed_point_step(market, omega, p)
            except (PassmatError, np.linalg.LinAlgError):
                raise DomainExhausted("no admissible step from current prices")
            tt = _terms(market, omega, trial) if np.all(trial > 0) else None
            if tt is None:
                raise DomainExhausted("no admissible step from current prices")
            p, t, res = trial, tt, np.max(np.abs(tt.f))
    converged = bool(res <= tol)
    soc_ok = False
    if converged and check_soc:
        soc_ok = soc_check(market, p, omega=omega).ok
    result = EquilibriumResult(p.copy(), float(res), it, converged, bool(soc_ok))
    if not converged:
        raise NoConvergence(
            f"residual {res:.3e} after {it} iterations", result
        )
    return result


def soc_check(market, p, omega=None, n_directions=SOC_DIRECTIONS, seed=SOC_SEED):
    """Per-firm profit Hessian must be negative semidefinite (slack 1e-8).

    Also reports the smallest directional margin 2R_f - kappa_f over random
    regular directions; it is positive whenever the Hessian is negative definite.
    """
    from .passthrough import directional_terms  # local import avoids a cycle

    omega = market.omega if omega is None else omega
    p = np.asarray(p, dtype=float)
    ev = eval_demand(market.demand, p)
    m = p - market.cost
    rng = np.random.default_rng(seed)
    max_eig = []
    min_margin = np.inf
    for f, idx in enumerate(market.firms):
        h = profit_hessian(ev, m, idx)
        max_eig.append(np.max(np.linalg.eigvalsh(0.5 * (h + h.T))))
        for _ in range(n_directions):
            v = rng.standard_normal(len(idx))
            v /= np.linalg.norm(v)
            dt = directional_terms(ev, m, idx, v, check=False)
            if dt is None:
                continue
            min_margin = min(min_margin, 2.0 * dt["r_f"] - dt["kappa_f"])
    max_eig = np.array(max_eig)
    scale = max(1.0, float(np.max(np.abs(ev.jac))))
    ok = bool(np.all(max_eig <= SOC_SLACK * scale))
    return SocReport(ok, max_eig, float(min_margin))
