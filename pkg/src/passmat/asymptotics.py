"""Small-share asymptotics of the normalized pricing Jacobian.

Tail coefficients a_j, b_jk are the limits of the semi-elasticity form
(-1 + a_j on the diagonal, b_jk off it) along sequences that drive shares to
zero: price rays, additive price shifts, or boundary paths toward a choke
point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .core import pricing_terms
from .demand import (
    LOGIT_FAMILY,
    GammaMixing,
    LogNormal,
    _genlaguerre,
    aids_budget_shares,
    aids_share_slopes,
    diversion_matrix,
    eval_demand,
    eval_relative,
)
from .exceptions import (
    DegenerateAids,
    DimensionMismatch,
    GridOutOfRange,
    InputError,
    NonConvergent,
    NotVanishing,
    NumericalError,
    OutOfDomain,
    QuadratureFailure,
    SingularJStar,
    SingularNestBlock,
    SingularOwnSlope,
    UnsupportedDemand,
)

DEFAULT_LAMBDAS = 10.0 ** np.arange(1.0, 4.01, 0.5)
THIN_BAND = 1e-3
DUAL_PATH_TOL = 1e-9


@dataclass
class TailCoefficients:
    a: np.ndarray
    b: np.ndarray
    rho: np.ndarray
    tail_class: list
    convergence: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict, repr=False)


@dataclass
class RaySequence:
    """Price sequence along which shares vanish.

    kind "ray": p = lambda * base_p; "shift": p = base_p + lambda;
    "boundary": explicit points driving product ``target`` to its boundary.
    """

    base_p: np.ndarray
    lambdas: np.ndarray
    kind: str = "ray"
    points: Optional[np.ndarray] = None
    target: Optional[int] = None

    def __post_init__(self):
        self.base_p = np.asarray(self.base_p, dtype=float)
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        if np.any(self.base_p <= 0):
            raise InputError("base prices must be positive")
        if self.lambdas.ndim != 1 or self.lambdas.size < 3 or np.any(np.diff(self.lambdas) <= 0):
            raise InputError("lambdas must be strictly increasing with at least three points")
        if self.kind not in ("ray", "shift", "boundary"):
            raise InputError(f"unknown sequence kind {self.kind!r}")
        if self.kind == "boundary":
            pts = np.asarray(self.points, dtype=float)
            if pts.shape != (self.lambdas.size, self.base_p.size):
                raise DimensionMismatch("boundary sequence needs one price vector per lambda")
            self.points = pts

    def prices(self):
        if self.kind == "ray":
            return self.lambdas[:, None] * self.base_p[None, :]
        if self.kind == "shift":
            return self.base_p[None, :] + self.lambdas[:, None]
        return self.points


@dataclass
class LocalPaths:
    t_grid: np.ndarray
    e_path: np.ndarray
    g_path: np.ndarray
    q_path: np.ndarray


@dataclass
class NestedLimit:
    jd_star: np.ndarray
    d_star: np.ndarray
    lambda_star: np.ndarray
    c_star: np.ndarray
    markups_bar: np.ndarray
    psi_star: np.ndarray
    b_star: np.ndarray
    gamma3: np.ndarray
    b_vec: np.ndarray = None


@dataclass
class SemiElasticityForm:
    diag: np.ndarray
    offdiag: np.ndarray
    kappa_diag: np.ndarray
    kappa_offdiag: np.ndarray
    max_gap: float


@dataclass
class GammaCorrections:
    zeta: np.ndarray
    chi: np.ndarray
    xi: np.ndarray
    log_c: np.ndarray
    grad: np.ndarray
    hess: np.ndarray


@dataclass
class ThinTailApprox:
    matrix: np.ndarray
    inelastic: np.ndarray
    covered: bool
    family: str


# ---------------------------------------------------------------------------
# semi-elasticity form


def _semi_form_rel(eta, hr, check=True):
    own = np.diag(eta)
    if np.any(own == 0) or not np.all(np.isfinite(own)):
        raise SingularOwnSlope("own-price semi-elasticity is zero")
    n = own.size
    idx = np.arange(n)
    h_kj = hr[idx, :, idx]  # q_{j,kj} / q_j
    d_eta = h_kj - eta * own[:, None]  # d eta_jk / d p_j
    semi = d_eta / (own**2)[:, None]
    diag = -1.0 + np.diag(semi)
    off = semi.copy()
    off[idx, idx] = 0.0
    # curvature path
    kdiag = -2.0 + hr[idx, idx, idx] / own**2
    delta = -eta / own[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = h_kj / (eta * own[:, None])
        koff = np.where(eta != 0, delta * (1.0 - kappa), h_kj / (own**2)[:, None])
    koff[idx, idx] = 0.0
    gap = max(
        float(np.max(np.abs(diag - kdiag) / np.maximum(1.0, np.abs(diag)))),
        float(np.max(np.abs(off - koff) / np.maximum(1.0, np.abs(off)))) if n > 1 else 0.0,
    )
    if check and gap > DUAL_PATH_TOL:
        raise NumericalError(f"semi-elasticity and curvature forms disagree by {gap:.2e}")
    return SemiElasticityForm(diag, off, kdiag, koff, gap)


def semi_elasticity_form(spec, p):
    """Diagonal -1 + d_j eta_jj / eta_jj^2 and off-diagonal d_j eta_jk / eta_jj^2.

    Computed alongside the curvature form (-2 + kappa, delta (1 - kappa)) and
    checked to agree within 1e-9.
    """
    _, eta, hr = eval_relative(spec, p)
    return _semi_form_rel(eta, hr)


# ---------------------------------------------------------------------------
# sequences


def ray_sequence(base_p, lambdas=DEFAULT_LAMBDAS):
    return RaySequence(base_p, lambdas, "ray")


def shift_sequence(base_p, shifts):
    return RaySequence(base_p, shifts, "shift")


def linear_boundary_sequence(spec, base_p, j, n_steps=12, factor=0.1):
    """Move p_j toward its choke price, closing the gap by ``factor`` per step."""
    if spec.family != "linear":
        raise UnsupportedDemand("linear boundary sequence needs linear demand")
    p0 = np.asarray(base_p, dtype=float)
    beta = spec.beta_mat
    if beta[j, j] <= 0:
        raise OutOfDomain("own slope must be positive for a choke price")
    choke = (spec.gamma_vec[j] - beta[j] @ p0 + beta[j, j] * p0[j]) / beta[j, j]
    if choke <= p0[j]:
        raise OutOfDomain("base price is not inside the domain")
    steps = np.arange(1, n_steps + 1)
    pts = np.repeat(p0[None, :], n_steps, axis=0)
    pts[:, j] = choke - (choke - p0[j]) * factor**steps
    q_end = spec.gamma_vec - beta @ np.where(np.arange(p0.size) == j, choke, p0)
    if np.any(np.delete(q_end, j) <= 0):
        raise OutOfDomain("rival demand leaves the domain along the boundary path")
    return RaySequence(p0, factor ** (-steps.astype(float)), "boundary", pts, j)


def aids_boundary_sequence(spec, base_p, j, targets=10.0 ** -np.arange(1.0, 9.0)):
    """Scale all prices jointly (ratios fixed) until w_j hits each target share."""
    if spec.family != "aids":
        raise UnsupportedDemand("AIDS boundary sequence needs AIDS demand")
    p0 = np.asarray(base_p, dtype=float)
    w0 = aids_budget_shares(spec, p0)
    # d w / d log t along p = t p0; Stone weights sum to one
    slope = spec.gamma_mat.sum(axis=1) - spec.beta_vec
    if abs(slope[j]) < 1e-14:
        raise DegenerateAids("w_j is invariant to proportional price changes")
    targets = np.asarray(targets, dtype=float)
    log_t = (targets - w0[j]) / slope[j]
    pts = np.exp(log_t)[:, None] * p0[None, :]
    for pt in pts:
        w = aids_budget_shares(spec, pt)
        if np.any(np.delete(w, j) <= 0) or w[j] <= 0:
            raise OutOfDomain("AIDS boundary path leaves the domain")
    return RaySequence(p0, 1.0 / targets, "boundary", pts, j)


# ---------------------------------------------------------------------------
# estimation


def _log_shares(spec, p, log_q):
    if spec.family in LOGIT_FAMILY:
        return log_q - np.log(spec.scale_M)
    if spec.family in ("ces", "aids"):
        return log_q + np.log(p) - np.log(spec.budget_B)
    return log_q


def _extrapolate(x, strict=False):
    """Aitken/Richardson limit from the last three points; returns (limit, error estimate)."""
    x1, x2, x3 = x[-3:]
    d1, d2 = x2 - x1, x3 - x2
    scale = max(1.0, abs(x3))
    if abs(d2) <= 1e-13 * scale:
        return x3, abs(d2)
    if abs(d1) <= 1e-13 * scale:
        return x3, abs(d2)
    r = d2 / d1
    if abs(r) < 0.9:
        corr = d2 * r / (1.0 - r)
        return x3 + corr, abs(corr)
    if abs(r) < 1.0:
        return x3, abs(d2) / (1.0 - abs(r))
    if abs(d2) > 1e-6 * scale:
        if strict:
            raise NonConvergent(f"successive differences grow (ratio {r:.3f})")
        return x3, np.inf
    return x3, abs(d2)


def classify(a, band=THIN_BAND):
    return ["Thin" if abs(x) < band else ("Fat" if x > 0 else "FiniteChoke") for x in np.atleast_1d(a)]


def estimate_tail_coefficients(spec, seq, rows=None, strict=False):
    """Numeric limits of the semi-elasticity form along ``seq``.

    Coefficients whose last three differences do not shrink get an infinite
    convergence estimate, or raise NonConvergent when ``strict``.
    """
    prices = seq.prices()
    n = spec.n_products
    if prices.shape[1] != n:
        raise DimensionMismatch("sequence dimension does not match the demand")
    if rows is None:
        rows = [seq.target] if seq.kind == "boundary" else list(range(n))
    rows = list(rows)
    diag_h, off_h, rho_h, ls_h = [], [], [], []
    for p in prices:
        log_q, eta, hr = eval_relative(spec, p)
        form = _semi_form_rel(eta, hr)
        own = np.diag(eta)
        rho = -eta / own[:, None]
        np.fill_diagonal(rho, 0.0)
        diag_h.append(form.diag)
        off_h.append(form.offdiag)
        rho_h.append(rho)
        ls_h.append(_log_shares(spec, p, log_q))
    diag_h, off_h, rho_h, ls_h = map(np.array, (diag_h, off_h, rho_h, ls_h))
    for j in rows:
        drop = ls_h[-1, j] - ls_h[0, j]
        small = spec.family == "linear" or ls_h[-1, j] <= np.log(0.05)
        if not (drop <= -np.log(2.0) and small):
            raise NotVanishing(f"share of product {j} does not vanish along the sequence")
    a = np.full(n, np.nan)
    b = np.full((n, n), np.nan)
    rho = np.full((n, n), np.nan)
    err_a = np.full(n, np.nan)
    err_b = np.full((n, n), np.nan)
    for j in rows:
        a[j], err_a[j] = _extrapolate(diag_h[:, j] + 1.0, strict)
        for k in range(n):
            if k == j:
                b[j, k], rho[j, k], err_b[j, k] = 0.0, 0.0, 0.0
                continue
            b[j, k], err_b[j, k] = _extrapolate(off_h[:, j, k], strict)
            rho[j, k], _ = _extrapolate(rho_h[:, j, k])
    return TailCoefficients(
        a=a,
        b=b,
        rho=rho,
        tail_class=[c if j in rows else None for j, c in enumerate(classify(np.nan_to_num(a)))],
        convergence={"a": err_a, "b": err_b},
        history={"diag": diag_h, "offdiag": off_h, "rho": rho_h, "log_shares": ls_h},
    )


# ---------------------------------------------------------------------------
# closed forms


def _log_c_terms(delta, p, j, u):
    """Integrand of C_j and its first two price derivatives at nodes u."""
    n = p.size
    ratio = p / p[j]
    r1 = np.zeros((n, n))  # d ratio_l / d p_k
    r2 = np.zeros((n, n, n))
    for l in range(n):
        if l == j:
            continue
        r1[l, l] = 1.0 / p[j]
        r1[l, j] = -p[l] / p[j] ** 2
        r2[l, j, j] = 2.0 * p[l] / p[j] ** 3
        r2[l, j, l] = r2[l, l, j] = -1.0 / p[j] ** 2
    t = np.exp(delta[None, :] - u[:, None] * ratio[None, :])  # (N, J)
    s = t.sum(axis=1)
    ds = -np.einsum("il,lk->ik", t * u[:, None], r1)
    d2s = np.einsum("il,la,lb->iab", t * (u**2)[:, None], r1, r1) - np.einsum(
        "il,lab->iab", t * u[:, None], r2
    )
    den = 1.0 + s
    h = 1.0 / den
    dh = -ds / (den**2)[:, None]
    d2h = -d2s / (den**2)[:, None, None] + 2.0 * ds[:, :, None] * ds[:, None, :] / (den**3)[:, None, None]
    return h, dh, d2h


def log_c_derivatives(spec, p, j, n_nodes=None):
    """log C_j(p), its gradient and Hessian in p for gamma mixed logit."""
    mix = spec.mixing
    if not isinstance(mix, GammaMixing):
        raise UnsupportedDemand("C_j is defined for gamma mixing only")
    n_nodes = n_nodes or spec.quad_nodes
    p = np.asarray(p, dtype=float)
    u, w = _genlaguerre(n_nodes, mix.shape_r - 1.0)
    wt = w * np.exp(-gammaln(mix.shape_r))
    h, dh, d2h = _log_c_terms(spec.delta, p, j, u)
    c = wt @ h
    if not (np.isfinite(c) and c > 0):
        raise QuadratureFailure("C_j is not a positive finite number")
    g = (wt @ dh) / c
    hess = np.einsum("i,iab->ab", wt, d2h) / c - np.outer(g, g)
    return np.log(c), g, hess


def gamma_corrections(spec, base_p):
    """zeta_j, chi_j and xi_jk from derivatives of log C_j under the integral sign."""
    p = np.asarray(base_p, dtype=float)
    if np.any(p <= 0):
        raise InputError("base prices must be positive")
    r = spec.mixing.shape_r if isinstance(spec.mixing, GammaMixing) else None
    if r is None:
        raise UnsupportedDemand("gamma corrections need gamma mixing")
    n = p.size
    zeta, chi = np.empty(n), np.empty(n)
    xi = np.zeros((n, n))
    log_c = np.empty(n)
    grads, hesss = np.empty((n, n)), np.empty((n, n, n))
    for j in range(n):
        lc, g, h = log_c_derivatives(spec, p, j)
        lc2, g2, _ = log_c_derivatives(spec, p, j, 2 * spec.quad_nodes)
        if abs(lc - lc2) > 1e-8 * max(1.0, abs(lc)) or np.max(np.abs(g - g2)) > 1e-8 * max(1.0, np.max(np.abs(g))):
            raise QuadratureFailure("Gauss-Laguerre rule did not converge for C_j")
        log_c[j], grads[j], hesss[j] = lc, g, h
        zeta[j] = -(p[j] / r) * g[j]
        chi[j] = (p[j] ** 2 / r) * h[j, j]
        xi[j] = (p[j] ** 2 / r) * h[j]
        xi[j, j] = 0.0
    return GammaCorrections(zeta, chi, xi, log_c, grads, hesss)


def within_nest_shares(spec, p):
    """s_{j|g} for a nested logit at prices p."""
    t = (spec.delta - spec.alpha * np.asarray(p, dtype=float)) / (1.0 - spec.sigma_nest)
    out = np.empty_like(t)
    for g in np.unique(spec.nest_of):
        m = spec.nest_of == g
        e = np.exp(t[m] - t[m].max())
        out[m] = e / e.sum()
    return out


def theoretical_limit(spec, context=None):
    """Closed-form (a, b, rho) for each demand family.

    ``context`` supplies base prices for CES, gamma mixed logit, AIDS (price
    ratios) and nested logit (within-nest shares).
    """
    n = spec.n_products
    zeros = np.zeros((n, n))
    fam = spec.family
    base_p = None if context is None else np.asarray(context, dtype=float)
    if fam == "logit" or (fam == "mixed_logit" and isinstance(spec.mixing, LogNormal)):
        a, b, rho = np.zeros(n), zeros, zeros
    elif fam == "ces":
        a, b, rho = np.full(n, 1.0 / spec.sigma_ces), zeros, zeros
    elif fam == "mixed_logit":
        if base_p is None:
            raise InputError("gamma mixed logit limit needs the ray's base prices")
        gc = gamma_corrections(spec, base_p)
        r = spec.mixing.shape_r
        a = (1.0 + gc.chi) / (r * (1.0 + gc.zeta) ** 2)
        b = gc.xi / (r * (1.0 + gc.zeta) ** 2)[:, None]
        rho = zeros
    elif fam == "linear":
        beta = spec.beta_mat
        a = -np.ones(n)
        b = -beta / np.diag(beta)[:, None]
        np.fill_diagonal(b, 0.0)
        rho = b.copy()
    elif fam == "aids":
        if base_p is None:
            raise InputError("AIDS limit needs limiting price ratios (base prices)")
        A = aids_share_slopes(spec)
        own = np.diag(A)
        if np.any(own == 0):
            raise DegenerateAids("gamma_jj - beta_j omega_j = 0")
        cbar = base_p[:, None] / base_p[None, :]
        a = -np.ones(n)
        b = -cbar * A / own[:, None]
        np.fill_diagonal(b, 0.0)
        rho = b.copy()
    elif fam == "nested_logit":
        if base_p is None:
            raise InputError("nested logit limit needs base prices for within-nest shares")
        lim = nested_logit_limit(spec.sigma_nest, spec.nest_of, within_nest_shares(spec, base_p), np.eye(n), spec.alpha)
        a = np.diag(lim.jd_star) + 1.0
        b = lim.jd_star - np.diag(np.diag(lim.jd_star))
        rho = lim.d_star.T.copy()
        np.fill_diagonal(rho, 0.0)
    else:
        raise UnsupportedDemand(f"no closed-form limit for {fam}")
    return TailCoefficients(np.asarray(a, float), np.asarray(b, float), np.asarray(rho, float), classify(a))


# ---------------------------------------------------------------------------
# local paths


def limit_paths(coeffs, t_grid):
    """E_j(t), G_jk(t), Q_j(t) implied by (a, b, rho)."""
    t = np.asarray(t_grid, dtype=float)
    a = np.asarray(coeffs.a, dtype=float)
    b = np.asarray(coeffs.b, dtype=float)
    rho = np.asarray(coeffs.rho, dtype=float)
    for j, aj in enumerate(a):
        if aj < 0 and np.any(t >= -1.0 / aj):
            raise GridOutOfRange(f"t must stay below {-1.0 / aj:.4g} for product {j}")
    thin = np.abs(a) < 1e-12
    A = a[:, None]
    at = A * t[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        e = np.where(thin[:, None], 1.0, 1.0 / (1.0 + at))
        q = np.where(thin[:, None], np.exp(-t)[None, :], np.exp(-np.log1p(at) / np.where(thin, 1.0, a)[:, None]))
        frac = np.where(thin[:, None], t[None, :], (1.0 - 1.0 / (1.0 + at)) / np.where(thin, 1.0, a)[:, None])
    g = rho[:, :, None] + b[:, :, None] * frac[:, None, :]
    return LocalPaths(t, e, g, q)


def empirical_paths(spec, p, t_grid):
    """E_{j,n}, G_{jk,n}, Q_{j,n} at a sequence point p (local scale -eta_jj)."""
    p = np.asarray(p, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    log_q, eta, _ = eval_relative(spec, p)
    n = p.size
    lam = -np.diag(eta)
    e = np.empty((n, t.size))
    q = np.empty((n, t.size))
    g = np.empty((n, n, t.size))
    for j in range(n):
        for i, ti in enumerate(t):
            pt = p.copy()
            pt[j] += ti / lam[j]
            lq, et, _ = eval_relative(spec, pt)
            e[j, i] = et[j, j] / eta[j, j]
            q[j, i] = np.exp(lq[j] - log_q[j])
            g[j, :, i] = et[j] / lam[j]
        g[j, j, :] = 0.0
    return LocalPaths(t, e, g, q)


# ---------------------------------------------------------------------------
# nested logit benchmark


def nested_logit_limit(sigma, nest_of, within_shares, omega, alpha=1.0):
    """Closed-form limits as every nest share vanishes with within-nest shares fixed.

    Margins use -q_j / q_{j,j} -> (1 - sigma) / (alpha B_j*), consistent with
    the diversion-slope tensor scaled by alpha.
    """
    nest = np.asarray(nest_of, dtype=int)
    sbar = np.asarray(within_shares, dtype=float)
    omega = np.asarray(omega, dtype=float)
    n = sbar.size
    if not 0.0 <= sigma < 1.0:
        raise InputError("sigma_nest must lie in [0, 1)")
    if nest.shape != (n,) or omega.shape != (n, n):
        raise DimensionMismatch("nest_of, within_shares and omega must agree")
    for g in np.unique(nest):
        tot = sbar[nest == g].sum()
        if np.any(sbar < 0) or abs(tot - 1.0) > 1e-9:
            raise InputError("within-nest shares must be non-negative and sum to one per nest")
    same = nest[:, None] == nest[None, :]
    eye = np.eye(n, dtype=bool)
    bstar = 1.0 - sigma * sbar
    jd = np.where(same & ~eye, sigma * np.outer(sbar, sbar) / (bstar**2)[:, None], 0.0)
    jd[eye] = -1.0 - sigma * sbar * (1.0 - sbar) / bstar**2
    d = np.where(same & ~eye, sigma * sbar[None, :] / bstar[:, None], 0.0)
    d[eye] = -1.0
    lam = -omega * d
    b_vec = (1.0 - sigma) / (alpha * bstar)
    mbar = np.zeros(n)
    for g in np.unique(nest):
        ix = np.flatnonzero(nest == g)
        block = lam[np.ix_(ix, ix)]
        try:
            cond = np.linalg.cond(block)
        except np.linalg.LinAlgError:
            cond = np.inf
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularNestBlock(f"Lambda* block for nest {g} is singular")
        mbar[ix] = np.linalg.solve(block, b_vec[ix])
    # Gamma*_{jlk} = dD*_{j->l}/dp_k
    ind = np.eye(n)
    same3 = same[:, :, None] & same[:, None, :] & same[None, :, :]
    g3 = (
        alpha
        * sigma
        / (1.0 - sigma)
        * sbar[None, :, None]
        * (
            (sbar[None, None, :] - ind[None, :, :]) * bstar[:, None, None]
            + sigma * sbar[:, None, None] * (sbar[None, None, :] - ind[:, None, :])
        )
        / (bstar**2)[:, None, None]
    )
    g3 = np.where(same3, g3, 0.0)
    g3[np.arange(n), np.arange(n), :] = 0.0
    off = omega * d
    np.fill_diagonal(off, 0.0)
    c = off + np.einsum("jl,l,jlk->jk", omega, mbar, g3)
    c = np.where(same, c, 0.0)
    j_star = jd + c
    try:
        cond = np.linalg.cond(j_star)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularJStar("J* is singular")
    psi = -np.linalg.solve(j_star, lam)
    psi = np.where(same, psi, 0.0)
    lim = NestedLimit(jd, d, lam, c, mbar, psi, bstar, g3, b_vec)
    for name in ("jd_star", "d_star", "lambda_star", "c_star", "psi_star"):
        if np.any(getattr(lim, name)[~same] != 0):
            raise NumericalError(f"{name} has cross-nest entries")
    return lim


def numeric_nested_limit(spec, omega, base_p, shifts):
    """Numeric counterpart of :func:`nested_logit_limit` along p = base_p + s.

    At each point the markups are those that make p an equilibrium,
    m = Lambda^-1 (-1 / eta_jj); costs follow as p - m.
    Returns the final-point NestedLimit and the per-point history of J_f.
    """
    omega = np.asarray(omega, dtype=float)
    hist = []
    out = None
    for s in np.asarray(shifts, dtype=float):
        p = np.asarray(base_p, dtype=float) + s
        ev = eval_demand(spec, p)
        d = diversion_matrix(ev.log_q, ev.eta)
        lam = -omega * d
        m = np.linalg.solve(lam, -1.0 / np.diag(ev.eta))
        t = pricing_terms(spec, p - m, omega, p, ev=ev)
        form = _semi_form_rel(ev.eta, ev.hess_rel)
        jd = form.offdiag + np.diag(form.diag)
        psi = -np.linalg.solve(t.j_f, t.lam)
        out = NestedLimit(jd, d, t.lam, t.c_mat, m, psi, None, t.d_diversion, -1.0 / np.diag(ev.eta))
        hist.append(t.j_f)
    return out, np.array(hist)


# ---------------------------------------------------------------------------
# thin-tail benchmark

THIN_TAIL_FAMILIES = ("logit", "ces", "mixed_logit_lognormal")


def thin_tail_diag_approx(market, p):
    """diag((1 + 1/eps_jj)^-1), flagging products with eps_jj >= -1."""
    spec = market.demand
    p = np.asarray(p, dtype=float)
    _, eta, _ = eval_relative(spec, p)
    eps = p * np.diag(eta)
    inelastic = eps >= -1.0
    with np.errstate(divide="ignore"):
        mat = np.diag(1.0 / (1.0 + 1.0 / eps))
    fam = spec.family
    if fam == "mixed_logit":
        fam = "mixed_logit_" + spec.mixing.kind
    return ThinTailApprox(mat, inelastic, fam in THIN_TAIL_FAMILIES, fam)
