"""Scikit-learn style front end for the message passing solver."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .model import LOG, Problem
from .solver import SolverConfig, WarmStart, solve


def check_problem(X, capacities=None, kinds=None, weights=None) -> Problem:
    """Coerce ``X`` into a validated :class:`Problem`.

    ``X`` is either a Problem (returned unchanged) or an m x n 0/1
    link-route matrix, dense or scipy sparse, with ``capacities`` of
    length m. ``kinds`` defaults to log utilities and ``weights`` to 1.
    """
    if isinstance(X, Problem):
        if capacities is not None or kinds is not None or weights is not None:
            raise ValueError("capacities/kinds/weights are taken from the Problem")
        return X
    if capacities is None:
        raise ValueError("capacities are required with a link-route matrix")
    R = check_array(X, accept_sparse="csc", dtype=float, ensure_min_samples=1, ensure_min_features=1)
    R = sps.csc_matrix(R)
    R.eliminate_zeros()
    R.sort_indices()
    if np.any(R.data != 1.0):
        raise ValueError("link-route matrix must be 0/1")
    m, n = R.shape
    c = check_array(np.asarray(capacities, dtype=float).reshape(1, -1), ensure_all_finite=True).ravel()
    if c.size != m:
        raise ValueError(f"expected {m} capacities, got {c.size}")
    kinds = np.full(n, LOG) if kinds is None else np.broadcast_to(np.asarray(kinds, dtype=str), (n,))
    w = np.ones(n) if weights is None else np.broadcast_to(np.asarray(weights, dtype=float), (n,))
    return Problem.from_arrays(c, kinds, w, R.indptr, R.indices)


class PMPSolver(BaseEstimator):
    """Network utility maximization by proximal message passing.

    Parameters mirror :class:`~numpmp.solver.SolverConfig`. With
    ``warm_start=True`` a refit on a problem of the same shape starts
    from the previous rates, prices, and penalty.

    Attributes
    ----------
    x_ : ndarray of shape (n,)
        Stream rates.
    lambda_ : ndarray of shape (m,)
        Link shadow prices (clamped at 0).
    slack_ : ndarray of shape (m,)
        Unused capacity ``max(c - R x, 0)``.
    objective_ : float
    status_ : str
    n_iter_ : int
    solution_ : Solution
    """

    def __init__(
        self,
        eps_abs=1e-5,
        rho0=1.0,
        alpha=1.6,
        mu=2.0,
        gamma=1.1,
        rho_update_interval=50,
        max_iters=50_000,
        trace_every=10,
        threads=1,
        warm_start=False,
    ):
        self.eps_abs = eps_abs
        self.rho0 = rho0
        self.alpha = alpha
        self.mu = mu
        self.gamma = gamma
        self.rho_update_interval = rho_update_interval
        self.max_iters = max_iters
        self.trace_every = trace_every
        self.threads = threads
        self.warm_start = warm_start

    def _config(self) -> SolverConfig:
        return SolverConfig(
            eps_abs=self.eps_abs,
            rho0=self.rho0,
            alpha=self.alpha,
            mu=self.mu,
            gamma=self.gamma,
            rho_update_interval=self.rho_update_interval,
            max_iters=self.max_iters,
            trace_every=self.trace_every,
            threads=self.threads,
        )

    def fit(self, X, y=None, *, kinds=None, weights=None, init=None):
        """Solve the NUM instance.

        ``X`` is a Problem or a link-route matrix and ``y`` the link
        capacities in the latter case. ``init`` is an explicit
        :class:`~numpmp.solver.WarmStart`.
        """
        problem = check_problem(X, y, kinds, weights)
        config = self._config()
        if init is None and self.warm_start and hasattr(self, "solution_"):
            prev = self.problem_
            if (prev.m, prev.n) == (problem.m, problem.n):
                init = self.solution_.warm_start()
        sol = solve(problem, config, init)
        self.problem_ = problem
        self.solution_ = sol
        self.x_ = sol.x
        self.lambda_ = sol.lam
        self.slack_ = sol.s
        self.objective_ = sol.objective
        self.status_ = str(sol.status)
        self.n_iter_ = sol.iterations
        self.rho_ = sol.rho
        return self

    def predict(self, X=None):
        """Return the fitted stream rates."""
        check_is_fitted(self, "x_")
        if X is not None and not isinstance(X, Problem):
            shape = getattr(X, "shape", None)
            if shape is not None and tuple(shape) != (self.problem_.m, self.problem_.n):
                raise ValueError("X does not match the fitted problem")
        return self.x_

    def path_prices(self):
        """Sum of link prices along every stream's route."""
        check_is_fitted(self, "lambda_")
        return self.problem_.path_sum(self.lambda_)

    def score(self, X=None, y=None):
        """Total utility of the fitted allocation."""
        check_is_fitted(self, "objective_")
        return self.objective_
