"""Pass-through matrices, the FOC Jacobian decomposition and directional stability."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
import scipy.linalg as sla

from .core import pricing_terms, profit_hessian
from .demand import eval_demand
from .exceptions import (
    BoundInapplicable,
    DegenerateDenominator,
    IndexOutOfRange,
    InputError,
    RegularityViolation,
    SingularA,
    SingularBlock,
    SingularJacobian,
    ZeroWeight,
)

COND_LIMIT = 1e12
REGULARITY_TOL = 1e-10


@dataclass
class JacobianDecomposition:
    j_f: np.ndarray
    k_mat: np.ndarray
    c_mat: np.ndarray
    a_diag: np.ndarray
    b_off: np.ndarray
    gamma: np.ndarray
    spectral_radius: float
    inf_norm: float
    sigma_max: float = float("nan")
    reassembly_error: float = 0.0


@dataclass
class PassThroughReport:
    lam: np.ndarray
    psi_exact: np.ndarray
    psi_trunc: Dict[int, np.ndarray]
    frobenius_errors: Dict[int, float]
    diagnostics: dict = field(default_factory=dict)

    @property
    def neumann_divergent(self):
        return bool(self.diagnostics.get("neumann_divergent", False))


@dataclass
class DirectionalAnalysis:
    v: np.ndarray
    s_f: float
    m_j: np.ndarray
    m_f: float
    r_f: float
    kappa_j: np.ndarray
    kappa_f: float
    stability_margin: float
    phi_dd: float
    phi_dd_fd: float
    w_f: np.ndarray
    lambda_j: np.ndarray = None


@dataclass
class IdentityCheck:
    lhs: float
    rhs: float
    rel_error: float
    dp_f: np.ndarray
    v_hat: np.ndarray
    note: str = ""


def _omega(market, omega):
    return market.omega if omega is None else np.asarray(omega, dtype=float)


def lambda_matrix(market, p, omega=None):
    """Ownership-internalized diversion matrix Lambda = -Omega * D (unit diagonal)."""
    return pricing_terms(market.demand, market.cost, _omega(market, omega), p).lam


def spectral_radius(gamma):
    return float(np.max(np.abs(np.linalg.eigvals(gamma)))) if gamma.size else 0.0


def largest_singular_value(gamma, iters=500, tol=1e-12, seed=0):
    """Power iteration on Gamma^T Gamma; an upper bound on the spectral radius."""
    n = gamma.shape[0]
    if n == 0 or not np.any(gamma):
        return 0.0
    x = np.random.default_rng(seed).standard_normal(n)
    x /= np.linalg.norm(x)
    est = 0.0
    gtg = gamma.T @ gamma
    for _ in range(iters):
        y = gtg @ x
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        x = y / ny
        new = np.sqrt(ny)
        if abs(new - est) <= tol * max(new, 1.0):
            est = new
            break
        est = new
    return float(est)


def jacobian_decomposition(market, p, omega=None):
    """J_f = -2I + K + C with A = diag(J_f), B = offdiag(J_f), Gamma = -B A^-1."""
    t = pricing_terms(market.demand, market.cost, _omega(market, omega), p)
    a = np.diag(t.j_f).copy()
    if np.any(a == 0):
        raise SingularA("a diagonal entry of J_f is zero")
    b = t.j_f - np.diag(a)
    gamma = -b / a[None, :]
    reassembly = float(np.max(np.abs(t.j_f - (-2.0 * np.eye(a.size) + t.k_mat + t.c_mat))))
    return JacobianDecomposition(
        j_f=t.j_f,
        k_mat=t.k_mat,
        c_mat=t.c_mat,
        a_diag=a,
        b_off=b,
        gamma=gamma,
        spectral_radius=spectral_radius(gamma),
        inf_norm=float(np.linalg.norm(gamma, np.inf)) if a.size else 0.0,
        sigma_max=largest_singular_value(gamma),
        reassembly_error=reassembly,
    )


def solve_jacobian(j_f, rhs):
    """LU solve with a 1-norm condition estimate; SingularJacobian above 1e12."""
    try:
        with warnings.catch_warnings():
            # singularity is reported through the condition estimate below
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(j_f, check_finite=True)
    except (ValueError, sla.LinAlgError) as exc:
        raise SingularJacobian(str(exc))
    anorm = np.linalg.norm(j_f, 1)
    rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or rcond == 0 or 1.0 / rcond > COND_LIMIT:
        raise SingularJacobian(f"J_f condition estimate exceeds {COND_LIMIT:.0e}")
    return sla.lu_solve((lu, piv), rhs), 1.0 / rcond


def neumann_series(a_inv, gamma, lam, order):
    """-A^-1 (sum_{m<=K} Gamma^m) Lambda for K = order."""
    acc = lam.copy()
    term = lam.copy()
    for _ in range(order):
        term = gamma @ term
        acc = acc + term
    return -a_inv @ acc


def _report(terms, a_inv, gamma, orders, extra):
    psi, cond = solve_jacobian(terms.j_f, -terms.lam)
    trunc, errs = {}, {}
    norm = np.linalg.norm(psi)
    for k in sorted(set(int(o) for o in orders)):
        if k < 0:
            raise InputError("Neumann orders must be non-negative")
        trunc[k] = neumann_series(a_inv, gamma, terms.lam, k)
        errs[k] = float(np.linalg.norm(trunc[k] - psi) / norm)
    rho = spectral_radius(gamma)
    diag = {
        "spectral_radius": rho,
        "sigma_max": largest_singular_value(gamma),
        "gamma_inf_norm": float(np.linalg.norm(gamma, np.inf)),
        "condition": float(cond),
        "neumann_divergent": bool(rho >= 1.0),
    }
    diag.update(extra)
    return PassThroughReport(terms.lam, psi, trunc, errs, diag)


def exact_passthrough(market, p, orders=(0, 1, 2), omega=None):
    """Psi = -J_f^-1 Lambda plus product-level Neumann truncations."""
    t = pricing_terms(market.demand, market.cost, _omega(market, omega), p)
    a = np.diag(t.j_f).copy()
    if np.any(a == 0):
        raise SingularA("a diagonal entry of J_f is zero")
    gamma = -(t.j_f - np.diag(a)) / a[None, :]
    return _report(t, np.diag(1.0 / a), gamma, orders, {"leading": "diagonal"})


def block_neumann(market, p, orders=(0, 1, 2), omega=None):
    """Neumann series with the within-firm blocks of J_f as the leading term."""
    t = pricing_terms(market.demand, market.cost, _omega(market, omega), p)
    n = market.n_products
    a_blk = np.zeros((n, n))
    a_inv = np.zeros((n, n))
    for firm in market.firms:
        ix = np.ix_(firm, firm)
        a_blk[ix] = t.j_f[ix]
        try:
            a_inv[ix] = np.linalg.inv(t.j_f[ix])
        except np.linalg.LinAlgError:
            raise SingularBlock(f"within-firm block {firm} of J_f is singular")
        if not np.all(np.isfinite(a_inv[ix])):
            raise SingularBlock(f"within-firm block {firm} of J_f is singular")
    gamma = -(t.j_f - a_blk) @ a_inv
    return _report(t, a_inv, gamma, orders, {"leading": "block"})


def neumann_bound_audit(decomp, lam, order, psi=None):
    """Check ||Psi_K - Psi||_inf <= ||A^-1|| ||Gamma||^(K+1) / (1 - ||Gamma||) ||Lambda||."""
    g = decomp.inf_norm
    if g >= 1.0:
        raise BoundInapplicable(f"||Gamma||_inf = {g:.3f} >= 1")
    a_inv = np.diag(1.0 / decomp.a_diag)
    if psi is None:
        psi, _ = solve_jacobian(decomp.j_f, -lam)
    psi_k = neumann_series(a_inv, decomp.gamma, lam, order)
    actual = float(np.linalg.norm(psi_k - psi, np.inf))
    bound = float(
        np.linalg.norm(a_inv, np.inf) * g ** (order + 1) / (1.0 - g) * np.linalg.norm(lam, np.inf)
    )
    return {"order": int(order), "actual": actual, "bound": bound, "holds": actual <= bound * (1 + 1e-12) + 1e-15}


# ---------------------------------------------------------------------------
# directional analysis


def directional_terms(ev, margin, idx, v, check=True):
    """Directional slope, weights and curvatures of a firm's profit along v."""
    idx = np.asarray(idx)
    v = np.asarray(v, dtype=float)
    jq = ev.jac[np.ix_(idx, idx)]
    phi1 = jq @ v
    phi2 = np.einsum("a,jab,b->j", v, ev.hess[np.ix_(idx, idx, idx)], v)
    if np.any(np.abs(phi1) < REGULARITY_TOL):
        if check:
            raise RegularityViolation("direction is not regular: some phi'_j(0) vanishes")
        return None
    q = ev.q[idx]
    m = margin[idx]
    m_j = m * q * (phi1 / q) ** 2
    m_f = float(m_j.sum())
    s_f = float(-v @ (0.5 * (jq + jq.T)) @ v)
    if m_f == 0:
        if check:
            raise ZeroWeight("M_f(v) = 0")
        return None
    kappa_j = q * phi2 / phi1**2
    lam_j = m_j / m_f
    kappa_f = float(lam_j @ kappa_j)
    return {
        "phi1": phi1,
        "phi2": phi2,
        "m_j": m_j,
        "m_f": m_f,
        "s_f": s_f,
        "r_f": s_f / m_f,
        "lambda_j": lam_j,
        "kappa_j": kappa_j,
        "kappa_f": kappa_f,
    }


def _firm_index(market, firm):
    if not 0 <= int(firm) < len(market.firms):
        raise IndexOutOfRange(f"firm {firm} does not exist")
    return np.asarray(market.firms[int(firm)])


def firm_profit(market, firm, p):
    idx = _firm_index(market, firm)
    q = eval_demand(market.demand, p).q
    return float(((p - market.cost)[idx] * q[idx]).sum())


def _phi_dd_fd(market, firm, idx, p, v):
    """Five-point second difference of firm profit along p_f + t v."""
    vf = np.zeros(market.n_products)
    vf[idx] = v
    scale = np.linalg.norm(vf, np.inf)
    h = 1e-3 * max(1.0, float(np.min(p[idx]))) / scale
    vals = [firm_profit(market, firm, p + k * h * vf) for k in (-2, -1, 0, 1, 2)]
    return (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (12 * h * h)


def directional_analysis(market, firm, p, v):
    """Directional decomposition of the firm's profit curvature along v."""
    p = np.asarray(p, dtype=float)
    idx = _firm_index(market, firm)
    v = np.asarray(v, dtype=float)
    if v.shape != (idx.size,):
        raise InputError("direction must have one entry per product of the firm")
    ev = eval_demand(market.demand, p)
    m = p - market.cost
    d = directional_terms(ev, m, idx, v)
    h = profit_hessian(ev, m, idx)
    phi_dd = float(v @ h @ v)
    return DirectionalAnalysis(
        v=v,
        s_f=d["s_f"],
        m_j=d["m_j"],
        m_f=d["m_f"],
        r_f=d["r_f"],
        kappa_j=d["kappa_j"],
        kappa_f=d["kappa_f"],
        stability_margin=2.0 * d["r_f"] - d["kappa_f"],
        phi_dd=phi_dd,
        phi_dd_fd=float(_phi_dd_fd(market, firm, idx, p, v)),
        w_f=-np.diag(np.diag(ev.jac)[idx]),
        lambda_j=d["lambda_j"],
    )


def directional_identity_check(market, firm, p_star, dt):
    """Compare ||dp_f||_W with v^T W Lambda_f dt / (M_f (2R_f - kappa_f)).

    dp_f solves the firm's linearized system J_ff dp_f = -Lambda_f dt with
    rival prices held fixed.
    """
    p = np.asarray(p_star, dtype=float)
    idx = _firm_index(market, firm)
    dt = np.asarray(dt, dtype=float)
    if dt.size == market.n_products:
        dt = dt[idx]
    if dt.shape != (idx.size,):
        raise InputError("dt must have one entry per product (market or firm)")
    if np.linalg.norm(dt) > 1e-4 * np.linalg.norm(p) * (1 + 1e-12):
        raise InputError("tax shock must satisfy ||dt|| <= 1e-4 ||p||")
    if not np.any(dt):
        return IdentityCheck(0.0, 0.0, 0.0, np.zeros(idx.size), np.zeros(idx.size), "ZeroShock")
    t = pricing_terms(market.demand, market.cost, market.omega, p)
    ix = np.ix_(idx, idx)
    lam_f = t.lam[ix]
    dp = np.linalg.solve(t.j_f[ix], -lam_f @ dt)
    w = -np.diag(np.diag(t.ev.jac)[idx])
    norm_w = float(np.sqrt(dp @ w @ dp))
    v_hat = dp / norm_w
    d = directional_terms(t.ev, t.margin, idx, v_hat)
    den = d["m_f"] * (2.0 * d["r_f"] - d["kappa_f"])
    if abs(den) < 1e-14:
        raise DegenerateDenominator("M_f (2R_f - kappa_f) is numerically zero")
    rhs = float(v_hat @ w @ lam_f @ dt / den)
    return IdentityCheck(norm_w, rhs, abs(norm_w - rhs) / abs(norm_w), dp, v_hat)
