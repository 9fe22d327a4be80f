"""Scikit-learn style front end for SDE parameter estimation.

``KoopmanSdeEstimator.fit(X, y)`` takes snapshot inputs X and their time-t
images y, builds the basis and captured matrices, and minimises the chosen
objective. The fitted parameter vector is ``theta_``; ``score`` evaluates the
(negated) objective on held-out snapshot pairs with the frozen basis, and
``predict`` returns the basis-projected conditional mean one step ahead.
"""

from __future__ import annotations

import scipy.linalg
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .basis import build_basis, eval_basis
from .data import SnapshotData
from .models import get_model
from .objectives import koopman_matrix_at, make_objective_spec, objective_value
from .optimize import OptimizerConfig, estimate

__all__ = ["KoopmanSdeEstimator"]


class KoopmanSdeEstimator(BaseEstimator):
    """Estimate SDE parameters by matching Koopman matrix representations.

    Parameters
    ----------
    model : str, default="ou"
        SDE family, ``"ou"`` or ``"bmr"``.
    theta_init : array-like
        Starting point of the minimisation; must be set before ``fit``.
    t_step : float
        Snapshot spacing between each x and its image y.
    basis : str, default="rbf"
        ``"rbf"``, ``"chebyshev"`` or ``"legendre"``.
    n_basis : int, default=3
        Number of basis functions.
    rbf_mode : str, default="data"
        RBF center placement: adaptive to the fitted data or fixed on [-1, 1].
    objective : str, default="frobenius"
        One of ``frobenius``, ``operator``, ``constrained``, ``gmm``.
    j_trunc : int or None
        Rank of the eigen-truncated data matrix (frobenius objective only).
    line_search : str or None
        ``"backtracking"`` or ``"hager-zhang"``; None picks per objective.
    fd_step, grad_tol, max_iter
        Finite-difference step, gradient tolerance, and iteration cap.

    Attributes
    ----------
    theta_ : ndarray
        Estimated parameter vector.
    result_ : EstimateResult
        Full optimisation record.
    basis_ : BasisSet
        Basis frozen at fit time (reused by ``score`` and ``predict``).
    matrices_ : KoopmanMatrices
        Mass, cross, and EDMD matrices of the training data.
    """

    def __init__(self, model="ou", theta_init=None, t_step=None, basis="rbf",
                 n_basis=3, rbf_mode="data", objective="frobenius", j_trunc=None,
                 line_search=None, fd_step=1e-6, grad_tol=1e-8, max_iter=200):
        self.model = model
        self.theta_init = theta_init
        self.t_step = t_step
        self.basis = basis
        self.n_basis = n_basis
        self.rbf_mode = rbf_mode
        self.objective = objective
        self.j_trunc = j_trunc
        self.line_search = line_search
        self.fd_step = fd_step
        self.grad_tol = grad_tol
        self.max_iter = max_iter

    def _validate_pairs(self, X, y):
        X = check_array(X, ensure_2d=False, dtype=float)
        y = check_array(y, ensure_2d=False, dtype=float)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError("snapshot inputs must be one-dimensional")
            X = X[:, 0]
        if y.ndim == 2:
            if y.shape[1] != 1:
                raise ValueError("snapshot outputs must be one-dimensional")
            y = y[:, 0]
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y must hold the same number of snapshots")
        return X, y

    def _snapshot_data(self, X, y):
        if self.t_step is None or self.t_step <= 0:
            raise ValueError("t_step must be a positive number")
        return SnapshotData(x=X, y=y, t_step=float(self.t_step))

    def fit(self, X, y):
        """Fit the SDE parameters to snapshot pairs (X, y)."""
        if self.theta_init is None:
            raise ValueError("theta_init must be set before fitting")
        X, y = self._validate_pairs(X, y)
        data = self._snapshot_data(X, y)
        sde = get_model(self.model)
        theta_init = sde.check_theta(self.theta_init)

        basis = build_basis(self.basis, self.n_basis, x_data=data.x, rbf_mode=self.rbf_mode)
        spec = make_objective_spec(self.objective, sde, basis, data, j_trunc=self.j_trunc)
        cfg = OptimizerConfig(
            theta_init=theta_init,
            line_search=self.line_search,
            fd_step=self.fd_step,
            grad_tol=self.grad_tol,
            max_iter=self.max_iter,
        )
        result = estimate(spec, cfg)

        self.model_ = sde
        self.basis_ = basis
        self.spec_ = spec
        self.matrices_ = spec.koop
        self.result_ = result
        self.theta_ = result.theta_hat
        self.objective_value_ = result.objective_value
        self.n_iter_ = result.iterations
        # projection coefficients of the identity observable, for predict()
        psi_x = eval_basis(basis, data.x, 0)
        moment = psi_x @ data.x / data.n_pairs
        self._identity_coef_ = scipy.linalg.cho_solve(spec.mass_cho, moment)
        return self

    def predict(self, X):
        """Basis-projected conditional mean of the next snapshot.

        Accuracy is limited by how well the identity observable lies in the
        basis span; with a rich basis this approximates E[X_{t+dt} | X_t].
        """
        check_is_fitted(self, "theta_")
        X = check_array(X, ensure_2d=False, dtype=float)
        flat = X[:, 0] if X.ndim == 2 else X
        koop = koopman_matrix_at(self.spec_, self.theta_)
        if koop is None:
            raise ValueError("fitted parameters fall outside the admissible set")
        weights = koop.T @ self._identity_coef_
        return eval_basis(self.basis_, flat, 0).T @ weights

    def score(self, X, y):
        """Negative objective value on held-out pairs, with the frozen basis."""
        check_is_fitted(self, "theta_")
        X, y = self._validate_pairs(X, y)
        data = self._snapshot_data(X, y)
        spec = make_objective_spec(
            self.objective, self.model_, self.basis_, data, j_trunc=self.j_trunc
        )
        return -objective_value(spec, self.theta_)
