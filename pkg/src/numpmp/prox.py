"""Batched proximal operators for stream cost functions.

Every traffic stream forces its terminal flows to share one rate ``x``,
so its prox only depends on the evaluation point through the terminal
sum ``1^T z``. The functions here take ``z`` with shape ``(tau,)`` for a
single stream or ``(tau, k)`` for a batch of ``k`` streams (one column
per stream) and return ``x*`` with shape ``()`` or ``(k,)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class ProxDomainError(ValueError):
    pass


class ProxNumericalError(ArithmeticError):
    def __init__(self, message, stream=None):
        self.stream = stream
        super().__init__(message if stream is None else f"stream {stream}: {message}")


def _sum_tau(z):
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        return z, 1
    return z.sum(axis=0), z.shape[0]


def _check_rho(rho):
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")


def log_from_sum(zsum, w, rho, tau):
    """Log prox given the terminal sum; stable for large negative sums."""
    a = 4.0 * w * tau / rho
    root = np.sqrt(zsum * zsum + a)
    # s + sqrt(s^2 + a) cancels for s << 0; use a / (sqrt(s^2 + a) - s)
    pos = zsum >= 0
    num = np.where(pos, zsum + root, a / (root - np.where(pos, 0.0, zsum)))
    return num / (2.0 * tau)


def linear_from_sum(zsum, w, rho, tau, lower=None):
    x = (zsum + w / rho) / tau
    return x if lower is None else np.maximum(x, lower)


def prox_log(z, weights, rho):
    """Prox of ``-w log x`` with the terminal-consensus constraint.

    Returns ``(1^T z + sqrt((1^T z)^2 + 4 w tau / rho)) / (2 tau)``.
    """
    _check_rho(rho)
    w = np.asarray(weights, dtype=float)
    if np.any(~(w > 0)):
        raise ProxDomainError("log utility requires positive weights")
    zsum, tau = _sum_tau(z)
    return log_from_sum(zsum, w, rho, tau)


def prox_linear(z, weights, rho, lower=None):
    """Prox of ``-w x``: ``(1^T z + w / rho) / tau``.

    With ``lower`` set, the utility is restricted to ``x >= lower`` and
    the result is the unconstrained minimizer clipped to that bound
    (exact for a 1-D convex objective). The engine uses ``lower=0``.
    """
    _check_rho(rho)
    zsum, tau = _sum_tau(z)
    return linear_from_sum(zsum, np.asarray(weights, dtype=float), rho, tau, lower)


def prox_slack(z, capacities):
    """Projection onto ``p >= -c``."""
    return np.maximum(np.asarray(z, dtype=float), -np.asarray(capacities, dtype=float))


@dataclass(frozen=True)
class ProxExtension:
    """A user-supplied concave utility handled by numeric root finding.

    Parameters
    ----------
    name : str
        Identifier; streams refer to it as ``"ext:<name>"``.
    derivative : callable
        ``derivative(x, w) -> U'(x)``, vectorized over arrays. Must be
        non-increasing in ``x`` on the domain.
    lower : float or None
        Open lower bound of the domain (``0.0`` for utilities defined on
        ``x > 0``), or None for the whole real line.
    utility : callable, optional
        ``utility(x, w) -> U(x)``, used only for objective reporting.
    second_derivative : callable, optional
        ``U''(x, w)``; a central difference is used when absent.
    """

    name: str
    derivative: Callable
    lower: Optional[float] = None
    utility: Optional[Callable] = None
    second_derivative: Optional[Callable] = None

    def check_concave(self, w=1.0, samples=64, seed=0) -> bool:
        """Spot-check that the derivative is non-increasing."""
        rng = np.random.default_rng(seed)
        lo = 0.0 if self.lower is None else self.lower
        x = np.sort(lo + np.exp(rng.uniform(-6, 6, samples)))
        if self.lower is None:
            x = np.sort(np.concatenate([-x[::-1], x]))
        d = np.asarray(self.derivative(x, w), dtype=float)
        return bool(np.all(np.diff(d) <= 1e-12 * (1 + np.abs(d[:-1]))))

    def curvature(self, x, w):
        if self.second_derivative is not None:
            return np.asarray(self.second_derivative(x, w), dtype=float)
        h = 1e-6 * np.maximum(1.0, np.abs(x))
        if self.lower is not None:
            h = np.minimum(h, 0.5 * (x - self.lower))
        return (self.derivative(x + h, w) - self.derivative(x - h, w)) / (2 * h)


_EXTENSIONS: dict[str, ProxExtension] = {}


def register_extension(ext: ProxExtension) -> ProxExtension:
    if not ext.check_concave():
        raise ValueError(f"extension {ext.name!r}: derivative is not non-increasing")
    _EXTENSIONS[ext.name] = ext
    return ext


def get_extension(name: str) -> ProxExtension:
    if name.startswith("ext:"):
        name = name[4:]
    try:
        return _EXTENSIONS[name]
    except KeyError:
        raise KeyError(f"no utility extension registered under {name!r}") from None


def min_potential_delay() -> ProxExtension:
    """The alpha=2 fair utility ``U(x) = -w / x``."""
    return ProxExtension(
        name="alpha2",
        derivative=lambda x, w: w / (x * x),
        lower=0.0,
        utility=lambda x, w: -w / x,
        second_derivative=lambda x, w: -2.0 * w / (x * x * x),
    )


def extension_from_sum(ext, zsum, w, rho, tau, tol=1e-10, max_iter=200, ids=None):
    """Solve ``rho (tau x - zsum) - U'(x) = 0`` elementwise.

    Safeguarded Newton: a bracket ``[lo, hi]`` is grown by doubling from
    the zero-weight linear prox ``zsum / tau`` and every Newton step that
    leaves the bracket is replaced by bisection.
    """
    zsum = np.atleast_1d(np.asarray(zsum, dtype=float))
    w = np.broadcast_to(np.asarray(w, dtype=float), zsum.shape)

    def g(x):
        return rho * (tau * x - zsum) - ext.derivative(x, w)

    x0 = zsum / tau
    lower = ext.lower
    if lower is not None:
        x0 = np.maximum(x0, lower + 1.0)

    lo, hi = x0.copy(), x0.copy()
    step = np.maximum(1.0, np.abs(x0))
    for _ in range(200):
        bad = g(lo) > 0
        if not bad.any():
            break
        if lower is None:
            lo = np.where(bad, lo - step, lo)
        else:
            lo = np.where(bad, lower + 0.5 * (lo - lower), lo)
        step = np.where(bad, 2 * step, step)
    else:
        _raise_unbracketed(ids, g(lo) > 0)
    step = np.maximum(1.0, np.abs(x0))
    for _ in range(200):
        bad = g(hi) < 0
        if not bad.any():
            break
        hi = np.where(bad, hi + step, hi)
        step = np.where(bad, 2 * step, step)
    else:
        _raise_unbracketed(ids, g(hi) < 0)

    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        gx = g(x)
        lo = np.where(gx < 0, x, lo)
        hi = np.where(gx > 0, x, hi)
        dg = rho * tau - ext.curvature(x, w)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - gx / dg
        out = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(out, 0.5 * (lo + hi), xn)
        done = (np.abs(xn - x) < tol) | (hi - lo < tol) | (gx == 0)
        x = np.where(gx == 0, x, xn)
        if done.all():
            return x
    _raise_unbracketed(ids, ~done, "root finding did not converge")


def _raise_unbracketed(ids, mask, what="no root in domain"):
    k = int(np.flatnonzero(mask)[0])
    raise ProxNumericalError(what, stream=None if ids is None else int(ids[k]))


def prox_extension(ext: ProxExtension, z, weights, rho, ids=None):
    """Prox of ``-U`` for an extension utility, to 1e-10 absolute."""
    _check_rho(rho)
    z = np.asarray(z, dtype=float)
    zsum, tau = _sum_tau(z)
    x = extension_from_sum(ext, zsum, weights, rho, tau, ids=ids)
    return x.reshape(np.shape(zsum))
