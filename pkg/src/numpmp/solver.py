"""Proximal message passing engine for NUM.

One iteration is three bulk-synchronous phases over the terminal
vector: batched prox evaluations per type group (plus slack
projections), a segmented reduction producing the per-link average
flow, and the over-relaxed copy/price updates. Scaled prices ``u`` are
kept per link since every terminal on a link receives the same
increment.
"""

from __future__ import annotations

import enum
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .model import LINEAR, LOG, Problem, TerminalLayout
from .prox import (
    ProxExtension,
    extension_from_sum,
    get_extension,
    linear_from_sum,
    log_from_sum,
    prox_slack,
)

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"

    def __str__(self) -> str:
        return self.value


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("NUMPMP_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SolverConfig:
    """Solver parameters.

    ``rho_update_interval=0`` disables residual balancing (fixed rho).
    """

    eps_abs: float = 1e-5
    rho0: float = 1.0
    alpha: float = 1.6
    mu: float = 2.0
    gamma: float = 1.1
    rho_update_interval: int = 50
    max_iters: int = 50_000
    trace_every: int = 10
    threads: int = 1

    def __post_init__(self):
        if not self.eps_abs > 0:
            raise ValueError(f"eps_abs must be positive, got {self.eps_abs}")
        if not self.rho0 > 0:
            raise ValueError(f"rho0 must be positive, got {self.rho0}")
        if not 1.0 <= self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in [1, 2], got {self.alpha}")
        if not self.mu > 1:
            raise ValueError(f"mu must exceed 1, got {self.mu}")
        if not self.gamma > 1:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")
        if self.rho_update_interval < 0:
            raise ValueError("rho_update_interval must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.trace_every < 1:
            raise ValueError("trace_every must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")


@dataclass
class SolverState:
    p: np.ndarray  # terminal flows
    z: np.ndarray  # link-side terminal copies
    p_bar: np.ndarray  # per-link average flow
    u: np.ndarray  # per-link scaled price
    rho: float
    iter: int = 0

    def copy(self) -> "SolverState":
        return SolverState(
            self.p.copy(), self.z.copy(), self.p_bar.copy(), self.u.copy(), self.rho, self.iter
        )


@dataclass
class WarmStart:
    """Initial point for :func:`solve`.

    ``lam`` are link prices from a previous solution; with ``rho`` they
    set the scaled prices ``u = lam / rho``.
    """

    x: np.ndarray
    lam: Optional[np.ndarray] = None
    rho: Optional[float] = None


@dataclass
class ConvergenceTrace:
    iters: list = field(default_factory=list)
    r_norm: list = field(default_factory=list)
    s_norm: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    objective: list = field(default_factory=list)

    def append(self, it, r, s, rho, obj):
        if self.iters and it <= self.iters[-1]:
            return
        self.iters.append(int(it))
        self.r_norm.append(float(r))
        self.s_norm.append(float(s))
        self.rho.append(float(rho))
        self.objective.append(float(obj))

    def __len__(self):
        return len(self.iters)

    def rows(self):
        return zip(self.iters, self.r_norm, self.s_norm, self.rho, self.objective)


@dataclass
class Solution:
    x: np.ndarray
    s: np.ndarray  # c - R x, clamped at 0
    lam: np.ndarray  # max(rho u, 0)
    lam_raw: np.ndarray
    objective: float
    status: Status
    iterations: int
    trace: ConvergenceTrace
    r_norm: float
    s_norm: float
    rho: float
    eps_tol: float
    state: SolverState
    prev_state: Optional[SolverState] = None  # iterate before ``state``, for post-hoc residuals

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    def warm_start(self) -> WarmStart:
        return WarmStart(self.x.copy(), self.lam_raw.copy(), self.rho)


# ---------------------------------------------------------------- phases


def compute_link_averages(p: np.ndarray, layout: TerminalLayout) -> np.ndarray:
    """Mean terminal flow per link via a segmented sum in link-major order."""
    sums = np.add.reduceat(p[layout.link_perm], layout.link_ptr[:-1])
    return sums / layout.link_counts


def _resolve_extensions(problem: Problem, extensions):
    out = {}
    for g in problem.layout.groups:
        if g.kind in (LOG, LINEAR) or g.kind in out:
            continue
        name = g.kind[4:]
        if extensions is not None and name in extensions:
            out[g.kind] = extensions[name]
        else:
            out[g.kind] = get_extension(name)
    return out


def _group_prox(g, v, rho, exts):
    zsum = v[g.start : g.stop].reshape(g.tau, g.size).sum(axis=0)
    if g.kind == LOG:
        return log_from_sum(zsum, g.weights, rho, g.tau)
    if g.kind == LINEAR:
        return linear_from_sum(zsum, g.weights, rho, g.tau, lower=0.0)
    return extension_from_sum(exts[g.kind], zsum, g.weights, rho, g.tau, ids=g.members)


def prox_phase(v, problem: Problem, rho, exts=None, executor=None) -> np.ndarray:
    """Evaluate every stream's prox at the terminal points ``v``."""
    layout = problem.layout
    p = np.empty_like(v)
    groups = layout.groups
    if executor is not None and len(groups) > 1:
        xs = list(executor.map(lambda g: _group_prox(g, v, rho, exts), groups))
    else:
        xs = [_group_prox(g, v, rho, exts) for g in groups]
    for g, x in zip(groups, xs):
        p[g.start : g.stop].reshape(g.tau, g.size)[:] = x
    sl = layout.slack
    p[sl] = prox_slack(v[sl], problem.capacities)
    return p


def iterate(state: SolverState, problem: Problem, config: SolverConfig, exts=None, executor=None):
    """One over-relaxed message passing step; returns a new state."""
    layout = problem.layout
    tl = layout.term_link
    if exts is None:
        exts = _resolve_extensions(problem, None)
    v = state.z - state.u[tl]
    p = prox_phase(v, problem, state.rho, exts, executor)
    p_bar = compute_link_averages(p, layout)
    if not np.all(np.isfinite(p_bar)):
        raise SolverError("non-finite flows", iteration=state.iter + 1)
    a = config.alpha
    if a == 1.0:
        z = p - p_bar[tl]
        u = state.u + p_bar
    else:
        z = a * (p - p_bar[tl]) + (1.0 - a) * state.z
        u = state.u + a * p_bar
    return SolverState(p, z, p_bar, u, state.rho, state.iter + 1)


def residuals(state: SolverState, prev_state: SolverState, layout: TerminalLayout):
    """Primal and dual residual norms in terminal space.

    The primal residual replicates each link average over the link's
    terminals; the dual residual is ``rho (z - z_prev)``.
    """
    r = math.sqrt(float(np.dot(layout.link_counts, state.p_bar * state.p_bar)))
    dz = state.z - prev_state.z
    s = state.rho * math.sqrt(float(np.dot(dz, dz)))
    return r, s


def tolerance(layout: TerminalLayout, config: SolverConfig) -> float:
    return config.eps_abs * math.sqrt(layout.total_terminals)


def check_termination(r_norm, s_norm, layout: TerminalLayout, config: SolverConfig) -> bool:
    tol = tolerance(layout, config)
    return r_norm < tol and s_norm < tol


def update_rho(state: SolverState, r_norm, s_norm, config: SolverConfig) -> SolverState:
    """Residual balancing; rescales ``u`` so that ``rho * u`` is unchanged."""
    rho = state.rho
    if r_norm > config.mu * s_norm:
        new = rho * config.gamma
    elif s_norm > config.mu * r_norm:
        new = rho / config.gamma
    else:
        return state
    return replace(state, rho=new, u=(rho / new) * state.u)


def recover_duals(state: SolverState, raw: bool = False) -> np.ndarray:
    lam = state.rho * state.u
    return lam if raw else np.maximum(lam, 0.0)


def objective(problem: Problem, x, extensions: Optional[Mapping[str, ProxExtension]] = None) -> float:
    """Total utility ``sum U_j(x_j)``."""
    x = np.asarray(x, dtype=float)
    kinds, w = problem.kinds, problem.weights
    log = kinds == LOG
    if np.any(x[log] <= 0):
        raise ValueError("log utility undefined at non-positive rate")
    lin = kinds == LINEAR
    total = float(np.sum(w[log] * np.log(x[log])) + np.sum(w[lin] * x[lin]))
    other = ~(log | lin)
    if other.any():
        exts = extensions or {}
        for kind in np.unique(kinds[other]):
            name = str(kind)[4:]
            ext = exts.get(name) or get_extension(name)
            sel = kinds == kind
            if ext.utility is None:
                return math.nan
            total += float(np.sum(ext.utility(x[sel], w[sel])))
    return total


def stream_rates(state: SolverState, problem: Problem) -> np.ndarray:
    """Per-stream rate read off the first terminal of each stream."""
    x = np.empty(problem.n)
    for g in problem.layout.groups:
        x[g.members] = state.p[g.start : g.start + g.size]
    return x


# ---------------------------------------------------------------- starts


def cold_start(problem: Problem, config: SolverConfig) -> SolverState:
    J, m = problem.layout.total_terminals, problem.m
    return SolverState(np.zeros(J), np.zeros(J), np.zeros(m), np.zeros(m), config.rho0, 0)


def warm_start_from(x0, problem: Problem, lam=None, rho: float = 1.0) -> SolverState:
    """Initial state from prior stream rates (and optionally prices).

    Terminal flows copy ``x0`` along each route; slack flows are
    ``s - c`` with ``s = max(c - R x0, 0)`` so links balance wherever
    ``x0`` is feasible. ``z`` starts at ``p - p_bar`` and ``u`` at
    ``lam / rho`` (zero when no prices are given).
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.n,):
        raise ValueError(f"warm start has {x0.size} rates, problem has {problem.n} streams")
    if np.any(x0[problem.kinds == LOG] <= 0):
        raise ValueError("warm start rates must be positive on log streams")
    if not rho > 0:
        raise ValueError("rho must be positive")
    layout = problem.layout
    c = problem.capacities
    p = np.empty(layout.total_terminals)
    nt = layout.n_traffic_terminals
    p[:nt] = x0[layout.term_stream[:nt]]
    s = np.maximum(c - problem.link_load(x0), 0.0)
    p[layout.slack] = s - c
    p_bar = compute_link_averages(p, layout)
    z = p - p_bar[layout.term_link]
    if lam is None:
        u = np.zeros(problem.m)
    else:
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (problem.m,):
            raise ValueError(f"warm start has {lam.size} prices, problem has {problem.m} links")
        u = lam / rho
    return SolverState(p, z, p_bar, u, float(rho), 0)


# ---------------------------------------------------------------- driver


def solve(
    problem: Problem,
    config: Optional[SolverConfig] = None,
    warm: Optional[WarmStart] = None,
    *,
    extensions: Optional[Mapping[str, ProxExtension]] = None,
    time_limit: Optional[float] = None,
    callback=None,
) -> Solution:
    """Run proximal message passing until the residual test passes.

    Returns a :class:`Solution` with status ``MaxIters`` (not an
    exception) when the iteration budget or ``time_limit`` (seconds)
    runs out.
    """
    config = config or SolverConfig()
    layout = problem.layout
    exts = _resolve_extensions(problem, extensions)
    if warm is None:
        state = cold_start(problem, config)
    else:
        rho = config.rho0 if warm.rho is None else warm.rho
        state = warm_start_from(warm.x, problem, warm.lam, rho)

    trace = ConvergenceTrace()
    deadline = None if time_limit is None else time.monotonic() + time_limit
    executor = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    status = Status.MAX_ITERS
    r = s = math.inf
    prev = None
    try:
        for _ in range(config.max_iters):
            rho_used = state.rho
            prev = state
            new = iterate(state, problem, config, exts, executor)
            r, s = residuals(new, state, layout)
            state = new
            done = check_termination(r, s, layout, config)
            last = done or state.iter == config.max_iters
            if deadline is not None and time.monotonic() > deadline:
                last = True
            if last or state.iter % config.trace_every == 0:
                trace.append(state.iter, r, s, rho_used, _trace_objective(problem, state, exts))
            if callback is not None:
                callback(state, r, s)
            if done:
                status = Status.CONVERGED
                break
            if last:
                break
            if config.rho_update_interval and state.iter % config.rho_update_interval == 0:
                state = update_rho(state, r, s, config)
    finally:
        if executor is not None:
            executor.shutdown()

    x = stream_rates(state, problem)
    lin = problem.kinds != LOG
    x[lin & (np.abs(x) < config.eps_abs)] = 0.0
    lam_raw = recover_duals(state, raw=True)
    slack = np.maximum(problem.capacities - problem.link_load(x), 0.0)
    logger.info("PMP %s after %d iterations (r=%.3g s=%.3g)", status, state.iter, r, s)
    return Solution(
        x=x,
        s=slack,
        lam=np.maximum(lam_raw, 0.0),
        lam_raw=lam_raw,
        objective=objective(problem, x, exts_by_name(exts)),
        status=status,
        iterations=state.iter,
        trace=trace,
        r_norm=r,
        s_norm=s,
        rho=state.rho,
        eps_tol=tolerance(layout, config),
        state=state,
        prev_state=prev,
    )


def exts_by_name(exts):
    return {k[4:]: v for k, v in exts.items()}


def _trace_objective(problem, state, exts):
    try:
        return objective(problem, stream_rates(state, problem), exts_by_name(exts))
    except ValueError:
        return math.nan
