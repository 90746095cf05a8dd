"""Seeded instance generators and perturbations.

All generators are pure functions of their spec and seed. Random link
choices are drawn with numpy's ``Generator`` in a fixed order, so the
same inputs reproduce bit-identical problems.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import networkx as nx
import numpy as np

from .model import LINEAR, LOG, Problem

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenSpec:
    """Random NUM instance parameters.

    ``kind`` is ``"log"``, ``"linear"`` or ``"mixed"`` (each stream is
    linear with probability ``linear_fraction``). ``weights`` is
    ``("constant", w)`` or ``("uniform", a, b)``.
    """

    m: int
    n: Optional[int] = None
    avg_links_per_stream: float = 10.0
    kind: str = LOG
    weights: tuple = ("constant", 1.0)
    linear_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n is None:
            object.__setattr__(self, "n", max(1, self.m // 2))
        if self.m < 1 or self.n < 1:
            raise ValueError("need m >= 1 and n >= 1")
        if self.avg_links_per_stream < 1:
            raise ValueError("avg_links_per_stream must be at least 1")
        if self.kind not in (LOG, LINEAR, "mixed"):
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.weights[0] not in ("constant", "uniform"):
            raise ValueError(f"unknown weight distribution {self.weights[0]!r}")


def _sample_routes(rng, n, m, lengths):
    """Uniform links without replacement within each route."""
    ptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    owner = np.repeat(np.arange(n, dtype=np.int64), lengths)
    idx = rng.integers(0, m, size=int(ptr[-1]))
    while True:
        key = owner * m + idx
        order = np.argsort(key, kind="stable")
        ks = key[order]
        dup = order[1:][ks[1:] == ks[:-1]]
        if dup.size == 0:
            return ptr, idx
        idx[dup] = rng.integers(0, m, size=dup.size)


def _weights(rng, spec_weights, n):
    if spec_weights[0] == "constant":
        return np.full(n, float(spec_weights[1]))
    _, a, b = spec_weights
    return rng.uniform(a, b, n)


def gen_uncongested(spec: GenSpec) -> Problem:
    """Random routes with mean length ``avg_links_per_stream``.

    Route lengths are ``1 + Poisson(avg - 1)`` capped at ``m``; capacities
    are uniform on [0.5, 1.5].
    """
    rng = np.random.default_rng(spec.seed)
    m, n = spec.m, spec.n
    lengths = np.minimum(1 + rng.poisson(spec.avg_links_per_stream - 1, n), m)
    ptr, idx = _sample_routes(rng, n, m, lengths)
    capacities = rng.uniform(0.5, 1.5, m)
    weights = _weights(rng, spec.weights, n)
    if spec.kind == "mixed":
        kinds = np.where(rng.random(n) < spec.linear_fraction, LINEAR, LOG)
    else:
        kinds = np.full(n, spec.kind)
    return Problem.from_arrays(capacities, kinds, weights, ptr, idx)


def gen_congested(
    spec: GenSpec,
    hot_link_fraction: float = 0.001,
    hot_stream_fraction: float = 0.10,
    return_hot: bool = False,
):
    """Uncongested instance plus a few heavily shared links.

    ``ceil(hot_link_fraction * m)`` links are each appended to the routes
    of a Binomial(n, hot_stream_fraction) random subset of streams;
    streams already using a hot link are skipped.
    """
    if not (0 < hot_link_fraction <= 1 and 0 < hot_stream_fraction <= 1):
        raise ValueError("hot fractions must lie in (0, 1]")
    base = gen_uncongested(spec)
    m, n = base.m, base.n
    rng = np.random.default_rng([spec.seed, 1])
    n_hot = math.ceil(hot_link_fraction * m)
    hot = np.sort(rng.choice(m, size=n_hot, replace=False))
    owner = np.repeat(np.arange(n, dtype=np.int64), base.route_lengths)
    existing = np.sort(owner * m + base.route_idx)
    add_owner, add_link = [], []
    for link in hot:
        k = rng.binomial(n, hot_stream_fraction)
        chosen = np.sort(rng.choice(n, size=k, replace=False))
        key = chosen * m + link
        pos = np.searchsorted(existing, key)
        present = (pos < existing.size) & (existing[np.minimum(pos, existing.size - 1)] == key)
        chosen = chosen[~present]
        add_owner.append(chosen)
        add_link.append(np.full(chosen.size, link, dtype=np.int64))
    all_owner = np.concatenate([owner] + add_owner)
    all_idx = np.concatenate([base.route_idx] + add_link)
    order = np.argsort(all_owner, kind="stable")
    lengths = np.bincount(all_owner, minlength=n)
    ptr = np.concatenate([[0], np.cumsum(lengths)])
    problem = Problem.from_arrays(
        base.capacities, base.kinds, base.weights, ptr, all_idx[order]
    )
    deg = streams_per_link(problem)
    logger.info(
        "congested instance: %d hot links, streams/link median %d max %d",
        n_hot, int(np.median(deg)), int(deg.max()),
    )
    return (problem, hot) if return_hot else problem


def degrade(problem: Problem, p_degrade: float = 0.25, factor: float = 0.5, seed: int = 0) -> Problem:
    """Independently scale each capacity by ``factor`` w.p. ``p_degrade``."""
    if not 0 < factor <= 1:
        raise ValueError("factor must lie in (0, 1]")
    if not 0 <= p_degrade <= 1:
        raise ValueError("p_degrade must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    hit = rng.random(problem.m) < p_degrade
    return replace(problem, capacities=np.where(hit, factor * problem.capacities, problem.capacities))


@dataclass
class PruneMap:
    """Index maps from an original problem to its pruned version.

    ``link_map[i]`` / ``stream_map[j]`` give the new index, or -1 if
    the link failed / the stream was removed.
    """

    link_map: np.ndarray
    stream_map: np.ndarray
    removed_streams: np.ndarray

    @property
    def surviving_links(self) -> np.ndarray:
        return np.flatnonzero(self.link_map >= 0)

    @property
    def surviving_streams(self) -> np.ndarray:
        return np.flatnonzero(self.stream_map >= 0)

    def project_streams(self, values) -> np.ndarray:
        values = np.asarray(values)
        if values.shape[0] != self.stream_map.size:
            raise ValueError("stream vector does not match the original problem")
        return values[self.surviving_streams]

    def project_links(self, values) -> np.ndarray:
        values = np.asarray(values)
        if values.shape[0] != self.link_map.size:
            raise ValueError("link vector does not match the original problem")
        return values[self.surviving_links]

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "NUMPRUNE",
                "version": 1,
                "link_map": self.link_map.tolist(),
                "stream_map": self.stream_map.tolist(),
                "removed_streams": self.removed_streams.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "PruneMap":
        d = json.loads(text)
        if d.get("format") != "NUMPRUNE":
            raise ValueError("not a prune map file")
        return cls(
            np.asarray(d["link_map"], dtype=np.int64),
            np.asarray(d["stream_map"], dtype=np.int64),
            np.asarray(d["removed_streams"], dtype=np.int64),
        )


def prune(problem: Problem, failed_links) -> tuple[Problem, PruneMap]:
    """Remove failed links and every stream whose route touches one."""
    failed = np.zeros(problem.m, dtype=bool)
    failed[np.asarray(failed_links, dtype=np.int64)] = True
    if failed.all():
        raise ValueError("every link failed; pruned problem is empty")
    owner = np.repeat(np.arange(problem.n), problem.route_lengths)
    hits = np.bincount(owner, weights=failed[problem.route_idx], minlength=problem.n)
    keep = hits == 0
    if not keep.any():
        raise ValueError("every stream traverses a failed link; pruned problem is empty")
    link_map = np.full(problem.m, -1, dtype=np.int64)
    link_map[~failed] = np.arange(int((~failed).sum()))
    stream_map = np.full(problem.n, -1, dtype=np.int64)
    stream_map[keep] = np.arange(int(keep.sum()))
    entries = keep[owner]
    lengths = problem.route_lengths[keep]
    pruned = Problem.from_arrays(
        problem.capacities[~failed],
        problem.kinds[keep],
        problem.weights[keep],
        np.concatenate([[0], np.cumsum(lengths)]),
        link_map[problem.route_idx[entries]],
    )
    return pruned, PruneMap(link_map, stream_map, np.flatnonzero(~keep))


def fail_and_prune(problem: Problem, p_fail: float = 0.25, seed: int = 0):
    """Fail each link independently w.p. ``p_fail`` and prune."""
    if not 0 <= p_fail < 1:
        raise ValueError("p_fail must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    return prune(problem, np.flatnonzero(rng.random(problem.m) < p_fail))


# ------------------------------------------------------------------ transit


@dataclass(frozen=True)
class TransitSpec:
    """Time-expanded transit network parameters.

    Defaults give ``m = 952 * 192 = 182,784`` links and at most
    ``330 * 2 * 30 = 19,800`` streams.
    """

    stations: int = 100
    time_bins: int = 192
    bin_minutes: float = 5.0
    spatial_edges: int = 952
    od_pairs: int = 330
    routes_per_od: int = 2
    departures_per_route: int = 30
    seats: float = 50.0
    weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        S, E = self.stations, self.spatial_edges
        if S < 2 or self.time_bins < 1:
            raise ValueError("need at least 2 stations and 1 time bin")
        if not 1 <= E <= S * (S - 1):
            raise ValueError(f"spatial_edges must lie in [1, {S * (S - 1)}] for {S} stations")
        if self.od_pairs < 1 or self.od_pairs > S * (S - 1):
            raise ValueError("od_pairs out of range")
        if self.routes_per_od < 1 or self.departures_per_route < 1:
            raise ValueError("routes_per_od and departures_per_route must be positive")
        if not self.seats > 0:
            raise ValueError("seats must be positive")


@dataclass
class TransitMetadata:
    """Per-stream itinerary records for a generated transit problem."""

    time_bins: int
    bin_minutes: float
    edges: list  # (origin station, destination station) per spatial edge
    ods: list  # {"id", "origin", "destination", "routes": [[edge ids]]}
    streams: list  # (od id, route index, departure bin) per stream
    dropped_streams: int = 0
    od_shortfall: list = field(default_factory=list)
    skipped_ods: list = field(default_factory=list)

    def link_of(self, edge: int, t: int) -> int:
        return edge * self.time_bins + t

    def stream_links(self, j: int) -> list[int]:
        od, r, t0 = self.streams[j]
        route = self.ods[od]["routes"][r]
        return [self.link_of(e, t0 + i) for i, e in enumerate(route)]

    def streams_for(self, od: int, t0: Optional[int] = None) -> list[int]:
        return [
            j for j, (k, _, t) in enumerate(self.streams)
            if k == od and (t0 is None or t == t0)
        ]

    def to_json(self) -> str:
        d = asdict(self)
        d["streams"] = [list(s) for s in self.streams]
        return json.dumps({"format": "NUMTRANSIT", "version": 1, **d})

    @classmethod
    def from_json(cls, text: str) -> "TransitMetadata":
        d = json.loads(text)
        if d.pop("format", None) != "NUMTRANSIT":
            raise ValueError("not a transit metadata file")
        d.pop("version", None)
        d["streams"] = [tuple(s) for s in d["streams"]]
        d["edges"] = [tuple(e) for e in d["edges"]]
        return cls(**d)


def spatial_graph(stations: int, n_edges: int, rng) -> list[tuple[int, int]]:
    """Random strongly connected digraph with exactly ``n_edges`` edges.

    A random Hamiltonian cycle guarantees strong connectivity; the rest
    are distinct uniformly drawn non-loop edges.
    """
    perm = rng.permutation(stations)
    edges = [(int(perm[i]), int(perm[(i + 1) % stations])) for i in range(stations)]
    seen = set(edges)
    while len(edges) < n_edges:
        u, v = (int(a) for a in rng.integers(0, stations, 2))
        if u != v and (u, v) not in seen:
            seen.add((u, v))
            edges.append((u, v))
    return edges[:n_edges]


def departure_bins(time_bins: int, count: int) -> list[int]:
    return sorted({(k * time_bins) // count for k in range(count)})


def gen_transit(
    spec: TransitSpec,
    edges: Optional[Sequence[tuple[int, int]]] = None,
    ods: Optional[Sequence[tuple[int, int]]] = None,
):
    """Time-expanded seat allocation instance.

    Link ``(e, t)`` has index ``e * T + t``. Stream ``(od, route, t0)``
    uses ``(route[i], t0 + i)`` for its i-th edge and is dropped if it
    would arrive after the horizon. ``edges`` overrides the random
    spatial graph (e.g. with a grid) and ``ods`` the random OD sample.
    With fewer edges than stations the random graph is a path, not
    strongly connected; unreachable ODs are skipped.
    """
    rng = np.random.default_rng(spec.seed)
    S, T = spec.stations, spec.time_bins
    if edges is None:
        edges = spatial_graph(S, spec.spatial_edges, rng)
    edges = [tuple(map(int, e)) for e in edges]
    edge_id = {e: i for i, e in enumerate(edges)}
    G = nx.DiGraph()
    G.add_nodes_from(range(S))
    G.add_edges_from(edges)

    if ods is None:
        pairs = [(o, d) for o in range(S) for d in range(S) if o != d]
        pick = np.sort(rng.choice(len(pairs), size=min(spec.od_pairs, len(pairs)), replace=False))
        od_list = [pairs[i] for i in pick]
    else:
        od_list = [tuple(map(int, od)) for od in ods]
    deps = departure_bins(T, spec.departures_per_route)

    od_records, streams, routes_flat = [], [], []
    shortfall, skipped = [], []
    dropped = 0
    for o, d in od_list:
        try:
            paths = list(itertools.islice(nx.shortest_simple_paths(G, o, d), spec.routes_per_od))
        except nx.NetworkXNoPath:
            logger.warning("OD %d->%d disconnected; skipped", o, d)
            skipped.append([o, d])
            continue
        k = len(od_records)
        routes = [[edge_id[(a, b)] for a, b in zip(path, path[1:])] for path in paths]
        if len(routes) < spec.routes_per_od:
            shortfall.append([k, len(routes)])
        od_records.append({"id": k, "origin": o, "destination": d, "routes": routes})
        for r, route in enumerate(routes):
            for t0 in deps:
                if t0 + len(route) - 1 > T - 1:
                    dropped += 1
                    continue
                streams.append((k, r, t0))
                routes_flat.append([e * T + t0 + i for i, e in enumerate(route)])

    if not streams:
        raise ValueError("transit spec produced no streams within the horizon")
    lengths = np.array([len(r) for r in routes_flat], dtype=np.int64)
    problem = Problem.from_arrays(
        np.full(len(edges) * T, float(spec.seats)),
        np.full(len(streams), LOG),
        np.full(len(streams), float(spec.weight)),
        np.concatenate([[0], np.cumsum(lengths)]),
        np.fromiter(itertools.chain.from_iterable(routes_flat), dtype=np.int64, count=int(lengths.sum())),
    )
    meta = TransitMetadata(
        time_bins=T,
        bin_minutes=spec.bin_minutes,
        edges=edges,
        ods=od_records,
        streams=streams,
        dropped_streams=dropped,
        od_shortfall=shortfall,
        skipped_ods=skipped,
    )
    return problem, meta


@dataclass
class PathPrices:
    pi: np.ndarray  # per-stream path price
    streams: list  # compared stream ids
    lam_hat: list  # normalized link prices along each compared route


def path_prices(problem: Problem, lam, streams: Optional[Sequence[int]] = None) -> PathPrices:
    """Path prices ``R^T lam`` and normalized prices along routes.

    Normalization divides by the largest price over the union of the
    compared routes' links, so all returned sequences share one [0, 1]
    scale.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (problem.m,):
        raise ValueError(f"expected {problem.m} link prices, got {lam.size}")
    pi = problem.path_sum(lam)
    if streams is None:
        streams = range(problem.n)
    streams = [int(j) for j in streams]
    seqs = [lam[problem.route(j)] for j in streams]
    top = max((float(s.max()) for s in seqs if s.size), default=0.0)
    lam_hat = [s / top if top > 0 else np.zeros_like(s) for s in seqs]
    return PathPrices(pi, streams, lam_hat)


def links_per_stream(problem: Problem) -> np.ndarray:
    return problem.route_lengths


def streams_per_link(problem: Problem) -> np.ndarray:
    return np.bincount(problem.route_idx, minlength=problem.m)
