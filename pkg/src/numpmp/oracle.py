"""Small-scale reference solvers used to verify the message-passing engine.

Nothing here shares code with the solver's update path: the barrier
method works on the original rate variables with dense Newton steps and
the 1-D prox oracle is a derivative-free golden-section search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import LINEAR, LOG, Problem
from .prox import ProxExtension


class OracleError(RuntimeError):
    pass


@dataclass
class OracleSolution:
    x: np.ndarray
    lam: np.ndarray
    objective: float
    barrier_mu_final: float
    nu: np.ndarray  # multipliers of x >= 0 (zero on log streams)
    t: float


def _utility(problem: Problem, x):
    log = problem.kinds == LOG
    return float(np.sum(problem.weights[log] * np.log(x[log])) + np.sum(
        problem.weights[~log] * x[~log]
    ))


def solve_barrier(problem: Problem, tol: float = 1e-9, max_newton: int = 200) -> OracleSolution:
    """Log-barrier interior point method for small NUM instances.

    Minimizes ``t * (-U(x)) - sum log(c - R x) - sum_{linear} log x`` for
    geometrically increasing ``t`` until the barrier gap ``k / t`` drops
    below ``tol``, where ``k`` counts the barrier terms.
    """
    if problem.m > 2000 or problem.n > 2000:
        raise OracleError("dense oracle is limited to 2000 links and streams")
    kinds = problem.kinds
    if not np.all((kinds == LOG) | (kinds == LINEAR)):
        raise OracleError("oracle supports log and linear utilities only")
    R = problem.incidence.toarray()
    c = problem.capacities
    w = problem.weights
    log = kinds == LOG
    lin = ~log
    k_barrier = problem.m + int(lin.sum())

    # strictly feasible start: each link at most half full
    deg = R.sum(axis=1)
    share = np.where(deg > 0, c / np.maximum(deg, 1), np.inf)
    x = 0.5 * np.array([share[problem.route(j)].min() for j in range(problem.n)])

    def phi(x, t):
        s = c - R @ x
        if np.any(s <= 0) or np.any(x[lin] <= 0) or np.any(x[log] <= 0):
            return math.inf
        return (
            -t * _utility(problem, x)
            - np.sum(np.log(s))
            - np.sum(np.log(x[lin]))
        )

    t = 1.0
    while True:
        prev = math.inf
        for it in range(max_newton):
            s = c - R @ x
            grad = np.where(log, -t * w / x, -t * w)
            grad = grad + R.T @ (1.0 / s)
            grad[lin] -= 1.0 / x[lin]
            hdiag = np.where(log, t * w / x**2, 0.0)
            hdiag[lin] += 1.0 / x[lin] ** 2
            H = (R.T * (1.0 / s**2)) @ R
            H[np.diag_indices_from(H)] += hdiag
            try:
                cf = scipy.linalg.cho_factor(H)
                dx = -scipy.linalg.cho_solve(cf, grad)
            except np.linalg.LinAlgError:
                dx = -np.linalg.lstsq(H, grad, rcond=None)[0]
            dec2 = float(-grad @ dx)
            if dec2 < 1e-24:
                break
            if dec2 < 0.0625:
                # self-concordant quadratic region: full steps stay feasible;
                # stop once rounding noise stalls the decrement
                if dec2 >= prev:
                    break
                prev = dec2
                x = x + dx
                continue
            step, f0 = 1.0, phi(x, t)
            while True:
                f1 = phi(x + step * dx, t)
                if f1 <= f0 - 0.25 * step * dec2 or step < 1e-14:
                    break
                step *= 0.5
            if not f1 < f0:
                raise OracleError(f"line search failed at t={t:g}")
            x = x + step * dx
        else:
            raise OracleError(f"Newton did not converge at t={t:g}")
        if k_barrier / t < tol:
            break
        t *= 8.0

    s = c - R @ x
    lam = 1.0 / (t * s)
    nu = np.zeros(problem.n)
    nu[lin] = 1.0 / (t * x[lin])
    return OracleSolution(
        x=x,
        lam=lam,
        objective=_utility(problem, x),
        barrier_mu_final=k_barrier / t,
        nu=nu,
        t=t,
    )


def kkt_residual(problem: Problem, sol: OracleSolution) -> float:
    """Stationarity residual ``||-U'(x) + R^T lam - nu||_inf``."""
    w = problem.weights
    dU = np.where(problem.kinds == LOG, w / sol.x, w)
    return float(np.max(np.abs(-dU + problem.path_sum(sol.lam) - sol.nu)))


def _utility_gap(kind, w):
    """Return ``d(a, b) = U(a) - U(b)`` in a cancellation-free form."""
    if isinstance(kind, ProxExtension):
        if kind.utility is None:
            raise OracleError(f"extension {kind.name!r} has no utility function")
        return lambda a, b: kind.utility(a, w) - kind.utility(b, w)
    if kind == LOG:
        return lambda a, b: w * math.log1p((a - b) / b)
    if kind == LINEAR:
        return lambda a, b: w * (a - b)
    if kind == "alpha2":
        return lambda a, b: w * (a - b) / (a * b)
    raise OracleError(f"unknown utility kind {kind!r}")


def prox_oracle_1d(kind, w, rho, z_sum, tau, domain=None, width=1e-10):
    """Minimize ``-U(x) + (rho/2)(tau x^2 - 2 x z_sum)`` by golden section.

    Candidate points are compared through the difference of objective
    values computed directly (not as a difference of two large values),
    so the search resolves the minimizer far below ``sqrt(eps)``.

    ``kind`` is ``"log"``, ``"linear"``, ``"alpha2"`` or a
    :class:`ProxExtension` carrying a utility. ``domain`` is the open
    lower bound of the utility's domain (``0`` for log and alpha2).
    """
    dU = _utility_gap(kind, w)
    if domain is None:
        if isinstance(kind, ProxExtension):
            domain = kind.lower
        elif kind in (LOG, "alpha2"):
            domain = 0.0
    center = z_sum / tau

    def less(a, b):
        # f(a) < f(b)
        quad = 0.5 * rho * tau * (a - b) * (a + b - 2 * center)
        return quad - dU(a, b) < 0

    # bracket [lo, hi] around the minimizer
    scale = max(1.0, abs(center), abs(w) / (rho * tau))
    hi = center + scale if domain is None else max(center, domain) + scale
    mid = hi - 0.5 * scale
    for _ in range(200):
        if less(mid, hi):
            break
        mid, hi = hi, hi + 2 * (hi - mid)
    else:
        raise OracleError("bracket expansion failed (upper)")
    if domain is None:
        lo = mid - scale
        for _ in range(200):
            if less(mid, lo):
                break
            lo = lo - 2 * (mid - lo)
        else:
            raise OracleError("bracket expansion failed (lower)")
    else:
        lo = domain

    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c_ = b - invphi * (b - a)
    d_ = a + invphi * (b - a)
    for _ in range(10_000):
        if b - a <= width:
            break
        if less(c_, d_):
            b, d_ = d_, c_
            c_ = b - invphi * (b - a)
        else:
            a, c_ = c_, d_
            d_ = a + invphi * (b - a)
        if c_ >= d_:
            break
    return 0.5 * (a + b)
