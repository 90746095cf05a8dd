"""Problem data model for network utility maximization.

A problem is a set of traffic streams, each with a fixed route over
capacitated links and a concave utility. Internally the routes are kept
as a CSR structure over streams (equivalently the CSC form of the 0/1
link-route matrix), and every problem carries a :class:`TerminalLayout`
describing the bipartite stream/link graph the solver iterates on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sps

LOG = "log"
LINEAR = "linear"
EXT_PREFIX = "ext:"


def kind_rank(kind: str) -> int:
    if kind == LOG:
        return 0
    if kind == LINEAR:
        return 1
    return 2


def is_known_kind(kind: str) -> bool:
    return kind in (LOG, LINEAR) or (
        kind.startswith(EXT_PREFIX) and len(kind) > len(EXT_PREFIX)
    )


class ValidationError(ValueError):
    """Raised when a problem violates one or more model invariants."""

    def __init__(self, violations: Sequence["Violation"]):
        self.violations = list(violations)
        msg = "; ".join(str(v) for v in self.violations[:10])
        if len(self.violations) > 10:
            msg += f"; ... ({len(self.violations)} violations total)"
        super().__init__(msg)


@dataclass(frozen=True)
class Violation:
    entity: str  # "stream" | "link" | "problem"
    id: int
    rule: str
    message: str = ""

    def __str__(self) -> str:
        return f"{self.entity} {self.id}: {self.rule}" + (
            f" ({self.message})" if self.message else ""
        )


@dataclass(frozen=True)
class Stream:
    """A traffic stream with a fixed route.

    ``kind`` is ``"log"``, ``"linear"`` or ``"ext:<name>"`` for a
    registered utility extension.
    """

    id: int
    kind: str
    weight: float
    route: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "route", tuple(int(l) for l in self.route))


@dataclass(frozen=True, eq=False)
class TypeGroup:
    """Streams sharing a utility kind and a terminal count.

    Terminal ``i`` of member ``k`` lives at flat terminal index
    ``start + i * size + k``, i.e. the group's block of the terminal
    vector reshapes to ``(tau, size)``.
    """

    kind: str
    tau: int
    members: np.ndarray
    weights: np.ndarray
    links: np.ndarray  # (tau, size) link index per terminal
    start: int

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def stop(self) -> int:
        return self.start + self.tau * self.size


@dataclass(frozen=True, eq=False)
class TerminalLayout:
    """Terminal bookkeeping for the bipartite stream/link graph.

    Terminals are ordered group by group (see :class:`TypeGroup`),
    followed by one slack terminal per link in link order. The
    link-major view (``link_perm``, ``link_ptr``) lists each link's
    terminals contiguously for segmented reductions.
    """

    groups: tuple[TypeGroup, ...]
    term_link: np.ndarray
    term_stream: np.ndarray  # -1 for slack terminals
    link_counts: np.ndarray
    link_perm: np.ndarray
    link_ptr: np.ndarray
    n_traffic_terminals: int

    @property
    def total_terminals(self) -> int:
        return len(self.term_link)

    @property
    def slack(self) -> slice:
        return slice(self.n_traffic_terminals, self.total_terminals)


@dataclass(frozen=True, eq=False)
class Problem:
    """NUM instance: ``maximize sum U_j(x_j)  s.t.  R x <= c``.

    Routes are stored in CSR form over streams: the links of stream
    ``j`` are ``route_idx[route_ptr[j]:route_ptr[j + 1]]``. Construct
    validated instances with :func:`build_problem` or
    :meth:`from_arrays`; the bare constructor does not validate so that
    :func:`validate` can report on arbitrary data.
    """

    capacities: np.ndarray
    kinds: np.ndarray
    weights: np.ndarray
    route_ptr: np.ndarray
    route_idx: np.ndarray

    @property
    def m(self) -> int:
        return len(self.capacities)

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def nnz(self) -> int:
        return len(self.route_idx)

    @property
    def route_lengths(self) -> np.ndarray:
        return np.diff(self.route_ptr)

    def route(self, j: int) -> np.ndarray:
        return self.route_idx[self.route_ptr[j] : self.route_ptr[j + 1]]

    @property
    def streams(self) -> list[Stream]:
        return [
            Stream(j, str(self.kinds[j]), float(self.weights[j]), tuple(self.route(j)))
            for j in range(self.n)
        ]

    @cached_property
    def incidence(self) -> sps.csr_matrix:
        """The m x n link-route matrix R."""
        R = sps.csc_matrix(
            (np.ones(self.nnz), self.route_idx, self.route_ptr),
            shape=(self.m, self.n),
        )
        return R.tocsr()

    @cached_property
    def layout(self) -> TerminalLayout:
        return _build_layout(self)

    @cached_property
    def groups(self) -> tuple[TypeGroup, ...]:
        return self.layout.groups

    def link_load(self, x: np.ndarray) -> np.ndarray:
        """R x."""
        return self.incidence @ np.asarray(x, dtype=float)

    def path_sum(self, lam: np.ndarray) -> np.ndarray:
        """R^T lam, summed along each route."""
        return self.incidence.T @ np.asarray(lam, dtype=float)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Problem):
            return NotImplemented
        return (
            np.array_equal(self.capacities, other.capacities)
            and np.array_equal(self.kinds, other.kinds)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.route_ptr, other.route_ptr)
            and np.array_equal(self.route_idx, other.route_idx)
        )

    __hash__ = None

    @classmethod
    def from_arrays(
        cls,
        capacities,
        kinds,
        weights,
        route_ptr,
        route_idx,
        check: bool = True,
    ) -> "Problem":
        n = len(route_ptr) - 1
        kinds = np.asarray(kinds)
        if kinds.ndim == 0:
            kinds = np.full(n, str(kinds))
        problem = cls(
            capacities=np.ascontiguousarray(capacities, dtype=float),
            kinds=kinds.astype(str),
            weights=np.ascontiguousarray(weights, dtype=float),
            route_ptr=np.ascontiguousarray(route_ptr, dtype=np.int64),
            route_idx=np.ascontiguousarray(route_idx, dtype=np.int64),
        )
        if check:
            violations = validate(problem)
            if violations:
                raise ValidationError(violations)
        return problem


def build_problem(streams: Iterable[Stream], capacities) -> Problem:
    """Validate stream records and assemble a :class:`Problem`.

    Stream ids must be dense ``0..n-1``; they are used to order the
    streams. Slack streams are implicit (one per link).

    Raises
    ------
    ValidationError
        If any stream or capacity violates the model invariants.
    """
    streams = sorted(streams, key=lambda s: s.id)
    capacities = np.asarray(capacities, dtype=float).ravel()
    if not streams or capacities.size == 0:
        raise ValidationError([Violation("problem", 0, "empty", "no streams or links")])
    ids = [s.id for s in streams]
    if ids != list(range(len(streams))):
        raise ValidationError(
            [Violation("problem", 0, "stream_ids", "stream ids must be dense 0..n-1")]
        )
    lengths = np.array([len(s.route) for s in streams], dtype=np.int64)
    ptr = np.concatenate([[0], np.cumsum(lengths)])
    idx = np.fromiter(
        (l for s in streams for l in s.route), dtype=np.int64, count=int(ptr[-1])
    )
    return Problem.from_arrays(
        capacities,
        np.array([s.kind for s in streams], dtype=str),
        np.array([s.weight for s in streams], dtype=float),
        ptr,
        idx,
    )


def validate(problem: Problem) -> list[Violation]:
    """Return every invariant violation in ``problem`` (empty if valid)."""
    out: list[Violation] = []
    c = np.asarray(problem.capacities, dtype=float)
    m, n = len(c), len(problem.weights)
    if m == 0:
        out.append(Violation("problem", 0, "no_links"))
    if n == 0:
        out.append(Violation("problem", 0, "no_streams"))
    for i in np.flatnonzero(~(c > 0) | ~np.isfinite(c)):
        out.append(Violation("link", int(i), "nonpositive_capacity", f"c={c[i]}"))

    ptr, idx = problem.route_ptr, problem.route_idx
    if len(ptr) != n + 1 or ptr[0] != 0 or np.any(np.diff(ptr) < 0) or ptr[-1] != len(idx):
        out.append(Violation("problem", 0, "incidence_mismatch", "malformed route pointers"))
        return out
    lengths = np.diff(ptr)
    owner = np.repeat(np.arange(n), lengths)

    for j in np.flatnonzero(lengths == 0):
        out.append(Violation("stream", int(j), "empty_route"))
    bad = (idx < 0) | (idx >= m)
    for j in np.unique(owner[bad]):
        out.append(Violation("stream", int(j), "link_out_of_range"))
    if len(idx):
        key = owner * max(m, 1) + np.clip(idx, 0, max(m - 1, 0))
        order = np.argsort(key, kind="stable")
        dup = np.flatnonzero(np.diff(key[order]) == 0)
        for j in np.unique(owner[order[dup]]):
            out.append(Violation("stream", int(j), "duplicate_link"))

    w = np.asarray(problem.weights, dtype=float)
    kinds = np.asarray(problem.kinds)
    for kind in np.unique(kinds):
        if not is_known_kind(str(kind)):
            for j in np.flatnonzero(kinds == kind):
                out.append(Violation("stream", int(j), "unknown_kind", str(kind)))
    for j in np.flatnonzero(~np.isfinite(w)):
        out.append(Violation("stream", int(j), "nonfinite_weight"))
    with np.errstate(invalid="ignore"):
        for j in np.flatnonzero((kinds == LOG) & np.isfinite(w) & ~(w > 0)):
            out.append(Violation("stream", int(j), "nonpositive_weight", f"w={w[j]}"))
        for j in np.flatnonzero((kinds == LINEAR) & (w < 0)):
            out.append(Violation("stream", int(j), "negative_weight", f"w={w[j]}"))
    return out


def group_streams(problem: Problem) -> list[TypeGroup]:
    """Partition traffic streams into type groups keyed by (kind, tau)."""
    return list(problem.layout.groups)


def _group_keys(problem: Problem):
    lengths = problem.route_lengths
    keys: dict[tuple[str, int], list[int]] = {}
    # first-seen order per key is first-member order since we scan ids ascending
    kinds = problem.kinds
    for kind in np.unique(kinds):
        sel = np.flatnonzero(kinds == kind)
        for tau in np.unique(lengths[sel]):
            keys[(str(kind), int(tau))] = sel[lengths[sel] == tau]
    return sorted(
        keys.items(), key=lambda kv: (kv[0][1], kind_rank(kv[0][0]), int(kv[1][0]))
    )


def _build_layout(problem: Problem) -> TerminalLayout:
    m, n = problem.m, problem.n
    groups = []
    start = 0
    term_link_parts, term_stream_parts = [], []
    for (kind, tau), members in _group_keys(problem):
        members = np.asarray(members, dtype=np.int64)
        # (size, tau) gather of route entries, then transpose to (tau, size)
        pos = problem.route_ptr[members][:, None] + np.arange(tau)[None, :]
        links = np.ascontiguousarray(problem.route_idx[pos].T)
        g = TypeGroup(
            kind=kind,
            tau=tau,
            members=members,
            weights=problem.weights[members].copy(),
            links=links,
            start=start,
        )
        for a in (g.members, g.weights, g.links):
            a.setflags(write=False)
        groups.append(g)
        term_link_parts.append(links.ravel())
        term_stream_parts.append(np.tile(members, tau))
        start += tau * len(members)
    n_traffic = start
    term_link_parts.append(np.arange(m, dtype=np.int64))
    term_stream_parts.append(np.full(m, -1, dtype=np.int64))
    term_link = np.concatenate(term_link_parts).astype(np.int64)
    term_stream = np.concatenate(term_stream_parts).astype(np.int64)
    counts = np.bincount(term_link, minlength=m)
    perm = np.argsort(term_link, kind="stable")
    ptr = np.concatenate([[0], np.cumsum(counts)])
    for a in (term_link, term_stream, counts, perm, ptr):
        a.setflags(write=False)
    return TerminalLayout(
        groups=tuple(groups),
        term_link=term_link,
        term_stream=term_stream,
        link_counts=counts,
        link_perm=perm,
        link_ptr=ptr,
        n_traffic_terminals=n_traffic,
    )
