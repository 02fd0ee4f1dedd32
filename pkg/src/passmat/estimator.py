"""Estimator-style wrapper: fit on a market, predict price responses to tax shocks."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .equilibrium import solve_bertrand
from .exceptions import DimensionMismatch, InputError
from .market import Market
from .passthrough import block_neumann, exact_passthrough, jacobian_decomposition


class PassThroughEstimator(BaseEstimator):
    """Solve the Bertrand equilibrium of a market and expose its pass-through matrix.

    Parameters
    ----------
    tol : float
        Solver tolerance on the normalized first-order conditions.
    neumann_order : int or None
        If set, ``predict`` uses the truncated Neumann approximation of that
        order instead of the exact matrix.
    leading : {"diagonal", "block"}
        Leading term of the Neumann expansion.
    max_iter : int
        Newton iteration cap.

    Attributes
    ----------
    p_ : equilibrium prices
    psi_ : exact pass-through matrix
    psi_trunc_ : dict of truncated approximations
    decomposition_ : JacobianDecomposition at ``p_``
    n_features_in_ : number of products
    """

    def __init__(self, tol=1e-10, neumann_order=None, leading="diagonal", max_iter=100):
        self.tol = tol
        self.neumann_order = neumann_order
        self.leading = leading
        self.max_iter = max_iter

    def fit(self, X, y=None, p0=None):
        """X is a :class:`Market`; y is ignored."""
        if not isinstance(X, Market):
            raise InputError("fit expects a Market")
        if self.leading not in ("diagonal", "block"):
            raise InputError("leading must be 'diagonal' or 'block'")
        orders = (0, 1, 2)
        if self.neumann_order is not None:
            if int(self.neumann_order) < 0:
                raise InputError("neumann_order must be non-negative")
            orders = tuple(sorted({0, 1, 2, int(self.neumann_order)}))
        eq = solve_bertrand(X, p0=p0, tol=self.tol, max_iter=self.max_iter)
        route = exact_passthrough if self.leading == "diagonal" else block_neumann
        rep = route(X, eq.p_star, orders)
        self.market_ = X
        self.equilibrium_ = eq
        self.p_ = eq.p_star
        self.psi_ = rep.psi_exact
        self.psi_trunc_ = rep.psi_trunc
        self.frobenius_errors_ = rep.frobenius_errors
        self.diagnostics_ = rep.diagnostics
        self.decomposition_ = jacobian_decomposition(X, eq.p_star)
        self.n_features_in_ = X.n_products
        return self

    def _matrix(self):
        if self.neumann_order is None:
            return self.psi_
        return self.psi_trunc_[int(self.neumann_order)]

    def predict(self, X):
        """First-order price changes dp = Psi dt for each row of tax shocks X."""
        check_is_fitted(self, "psi_")
        x = np.asarray(X, dtype=float)
        single = x.ndim == 1
        x = check_array(np.atleast_2d(x), ensure_min_samples=1)
        if x.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} tax entries, got {x.shape[1]}")
        out = x @ self._matrix().T
        return out[0] if single else out

    def score(self, X, y):
        """Negative mean sup-norm gap between predictions and observed price changes."""
        y = check_array(np.atleast_2d(np.asarray(y, dtype=float)))
        pred = np.atleast_2d(self.predict(X))
        return -float(np.mean(np.max(np.abs(pred - y), axis=1)))
