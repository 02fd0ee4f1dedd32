"""Normalized first-order conditions and their analytic Jacobian.

All functions take an explicit ownership matrix so fractional (convexified)
ownership can be used for continuation paths.  Diagonal entries of omega
must be one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .demand import diversion_matrix, eval_demand
from .exceptions import DimensionMismatch, SingularOwnSlope


@dataclass
class PricingTerms:
    p: np.ndarray
    margin: np.ndarray
    ev: object
    diversion: np.ndarray  # D[j, l] = -q_{l,j} / q_{j,j}
    d_diversion: np.ndarray  # [j, l, k] = dD_{j->l} / dp_k
    lam: np.ndarray  # -omega * D
    f: np.ndarray  # normalized FOC
    k_mat: np.ndarray
    c_mat: np.ndarray
    j_f: np.ndarray


def _check(demand, cost, omega, p):
    n = demand.n_products
    p = np.asarray(p, dtype=float)
    cost = np.asarray(cost, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if p.shape != (n,) or cost.shape != (n,) or omega.shape != (n, n):
        raise DimensionMismatch("prices, costs and ownership must match the number of products")
    return p, cost, omega


def diversion_slopes(ev):
    """dD_{j->l}/dp_k from the quotient rule, in ratio form."""
    eta, hr = ev.eta, ev.hess_rel
    own = np.diag(eta)
    if np.any(own == 0):
        raise SingularOwnSlope("own-price slope is zero")
    ratio = np.exp(ev.log_q[None, :] - ev.log_q[:, None])  # q_l / q_j
    n = own.size
    h_own = hr[np.arange(n), np.arange(n), :]  # q_{j,jk} / q_j
    num = hr.transpose(1, 0, 2) * own[:, None, None] - eta.T[:, :, None] * h_own[:, None, :]
    return -ratio[:, :, None] * num / (own**2)[:, None, None]


def curvature_part(ev):
    """K: own curvature on the diagonal, delta_jk (1 - kappa^j_kj) off it."""
    eta, hr = ev.eta, ev.hess_rel
    own = np.diag(eta)
    n = own.size
    idx = np.arange(n)
    k = -eta / own[:, None] + hr[idx, :, idx] / (own**2)[:, None]
    k[idx, idx] = hr[idx, idx, idx] / own**2
    return k


def pricing_terms(demand, cost, omega, p, ev=None):
    p, cost, omega = _check(demand, cost, omega, p)
    if ev is None:
        ev = eval_demand(demand, p)
    m = p - cost
    D = diversion_matrix(ev.log_q, ev.eta)
    dD = diversion_slopes(ev)
    lam = -omega * D
    own = np.diag(ev.eta)
    f = -1.0 / own - lam @ m
    k_mat = curvature_part(ev)
    off = omega * D
    np.fill_diagonal(off, 0.0)
    c_mat = off + np.einsum("jl,l,jlk->jk", omega, m, dD)
    j_f = -2.0 * np.eye(p.size) + k_mat + c_mat
    return PricingTerms(p, m, ev, D, dD, lam, f, k_mat, c_mat, j_f)


def foc_levels(demand, cost, omega, p, ev=None):
    """F(p) = q + (omega * J_q^T)(p - c)."""
    p, cost, omega = _check(demand, cost, omega, p)
    if ev is None:
        ev = eval_demand(demand, p)
    return ev.q + (omega * ev.jac.T) @ (p - cost)


def profit_hessian(ev, margin, idx):
    """Hessian of a firm's profit in its own prices, holding rival prices fixed."""
    idx = np.asarray(idx)
    jq = ev.jac[np.ix_(idx, idx)]
    h = jq + jq.T
    h = h + np.einsum("l,lab->ab", margin[idx], ev.hess[np.ix_(idx, idx, idx)])
    return h
