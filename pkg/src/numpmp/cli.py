"""Command-line interface: ``numpmp <command> [flags]``.

Exit codes are 0 when the solve converged, 2 when it ran out of
iterations, and 1 for usage, IO, and validation errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import gen
from .io import (
    FormatError,
    SolutionFile,
    read_problem,
    read_solution,
    write_problem,
    write_solution,
    write_trace,
)
from .model import ValidationError
from .solver import SolverConfig, SolverError, Status, WarmStart, default_threads, solve

EXIT_OK, EXIT_ERROR, EXIT_MAXITERS = 0, 1, 2

log = logging.getLogger("numpmp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags, which collides with MaxIters
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _unit_interval(text):
    p = float(text)
    if not 0.0 <= p < 1.0:
        raise argparse.ArgumentTypeError(f"probability must lie in [0, 1), got {text}")
    return p


def _duration(text):
    m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+)\s*(ms|s|m|h)?\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}")
    scale = {"ms": 1e-3, "s": 1.0, "m": 60.0, "h": 3600.0}[m.group(2) or "s"]
    return float(m.group(1)) * scale


def _sizes(text):
    items = [t for t in text.replace(" ", "").split(",") if t]
    if not items:
        raise argparse.ArgumentTypeError("size list is empty")
    try:
        sizes = [int(float(t)) for t in items]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from None
    if any(s < 1 for s in sizes):
        raise argparse.ArgumentTypeError("sizes must be positive")
    return sizes


def _summary(problem, extra=None):
    fields = {
        "m": problem.m,
        "n": problem.n,
        "nnz": problem.nnz,
        "mean_route_length": f"{problem.route_lengths.mean():.4f}",
    }
    fields.update(extra or {})
    return " ".join(f"{k}={v}" for k, v in fields.items())


# ---------------------------------------------------------------- generate


def _add_generate(sub):
    p = sub.add_parser("generate", help="generate a problem instance")
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--uncongested", action="store_const", dest="family", const="uncongested")
    which.add_argument("--congested", action="store_const", dest="family", const="congested")
    which.add_argument("--transit", action="store_const", dest="family", const="transit")
    p.add_argument("-m", type=int, help="number of links (random families)")
    p.add_argument("-n", type=int, help="number of streams (default m/2)")
    p.add_argument("--avg-links", type=float, default=10.0)
    p.add_argument("--kind", choices=["log", "linear", "mixed"], default="log")
    p.add_argument("--linear-fraction", type=float, default=0.5)
    wt = p.add_mutually_exclusive_group()
    wt.add_argument("--weight", type=float, default=None, help="constant stream weight")
    wt.add_argument("--weight-uniform", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--hot-link-fraction", type=float, default=0.001)
    p.add_argument("--hot-stream-fraction", type=float, default=0.10)
    p.add_argument("--stations", type=int, default=100)
    p.add_argument("--time-bins", type=int, default=192)
    p.add_argument("--bin-minutes", type=float, default=5.0)
    p.add_argument("--edges", type=int, default=952, help="spatial edges (transit)")
    p.add_argument("--od-pairs", type=int, default=330)
    p.add_argument("--routes-per-od", type=int, default=2)
    p.add_argument("--departures", type=int, default=30, help="departures per route (transit)")
    p.add_argument("--seats", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--meta", type=Path, help="transit metadata JSON (default: <output>.meta.json)")
    p.set_defaults(func=cmd_generate)


def cmd_generate(args):
    if args.family == "transit":
        if args.m is not None or args.n is not None:
            raise UsageError("-m/-n do not apply to --transit")
        spec = gen.TransitSpec(
            stations=args.stations,
            time_bins=args.time_bins,
            bin_minutes=args.bin_minutes,
            spatial_edges=args.edges,
            od_pairs=args.od_pairs,
            routes_per_od=args.routes_per_od,
            departures_per_route=args.departures,
            seats=args.seats,
            weight=1.0 if args.weight is None else args.weight,
            seed=args.seed,
        )
        problem, meta = gen.gen_transit(spec)
        extra = {"ods": len(meta.ods), "dropped_streams": meta.dropped_streams}
        meta_path = args.meta
        if meta_path is None and args.output is not None:
            meta_path = args.output.with_name(args.output.name + ".meta.json")
        if meta_path is not None:
            meta_path.write_text(meta.to_json())
    else:
        if args.meta is not None:
            raise UsageError("--meta only applies to --transit")
        if args.m is None:
            raise UsageError("generate: -m is required for random instances")
        weights = ("constant", 1.0 if args.weight is None else args.weight)
        if args.weight_uniform is not None:
            weights = ("uniform", *args.weight_uniform)
        spec = gen.GenSpec(
            m=args.m,
            n=args.n,
            avg_links_per_stream=args.avg_links,
            kind=args.kind,
            weights=weights,
            linear_fraction=args.linear_fraction,
            seed=args.seed,
        )
        extra = {}
        if args.family == "congested":
            problem, hot = gen.gen_congested(
                spec, args.hot_link_fraction, args.hot_stream_fraction, return_hot=True
            )
            extra["hot_links"] = len(hot)
        else:
            problem = gen.gen_uncongested(spec)
    if args.output is not None:
        write_problem(problem, args.output)
    print(_summary(problem, extra))
    return EXIT_OK


# ------------------------------------------------------------------- solve


def _add_solver_flags(p):
    d = SolverConfig()
    p.add_argument("--eps-abs", type=float, default=d.eps_abs)
    p.add_argument("--rho0", type=float, default=d.rho0)
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--mu", type=float, default=d.mu)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--rho-interval", type=int, default=d.rho_update_interval)
    p.add_argument("--max-iters", type=int, default=d.max_iters)
    p.add_argument("--trace-every", type=int, default=d.trace_every)
    p.add_argument("--threads", type=int, default=None, help="default: $NUMPMP_THREADS or 1")


def _config(args) -> SolverConfig:
    try:
        return SolverConfig(
            eps_abs=args.eps_abs,
            rho0=args.rho0,
            alpha=args.alpha,
            mu=args.mu,
            gamma=args.gamma,
            rho_update_interval=args.rho_interval,
            max_iters=args.max_iters,
            trace_every=args.trace_every,
            threads=default_threads() if args.threads is None else args.threads,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def _config_echo(config: SolverConfig) -> dict:
    return {
        "eps_abs": config.eps_abs,
        "rho0": config.rho0,
        "alpha": config.alpha,
        "mu": config.mu,
        "gamma": config.gamma,
        "rho_update_interval": config.rho_update_interval,
        "max_iters": config.max_iters,
        "threads": config.threads,
    }


def _add_solve(sub):
    p = sub.add_parser("solve", help="solve a problem file")
    p.add_argument("problem", type=Path)
    p.add_argument("-o", "--output", type=Path, help="solution file")
    _add_solver_flags(p)
    p.add_argument("--warm-start", type=Path, metavar="SOLUTION")
    p.add_argument("--prune-map", type=Path, help="project the warm start through a prune map")
    p.add_argument("--trace", type=Path, metavar="CSV")
    p.set_defaults(func=cmd_solve)


def _load_warm(args, problem) -> WarmStart:
    prev = read_solution(args.warm_start)
    x, lam = prev.x, prev.lam
    if args.prune_map is not None:
        pm = gen.PruneMap.from_json(args.prune_map.read_text())
        if (len(pm.stream_map), len(pm.link_map)) != (prev.n, prev.m):
            raise ValueError("prune map does not match the warm-start solution")
        x, lam = pm.project_streams(x), pm.project_links(lam)
    if (len(x), len(lam)) != (problem.n, problem.m):
        raise ValueError(
            f"warm start has n={len(x)}, m={len(lam)} but the problem has "
            f"n={problem.n}, m={problem.m}; pass --prune-map for pruned problems"
        )
    rho = prev.config.get("rho")
    return WarmStart(x, lam, None if rho is None else float(rho))


def cmd_solve(args):
    config = _config(args)
    if args.prune_map is not None and args.warm_start is None:
        raise UsageError("--prune-map requires --warm-start")
    problem = read_problem(args.problem)
    warm = _load_warm(args, problem) if args.warm_start is not None else None
    t0 = time.perf_counter()
    sol = solve(problem, config, warm)
    wall = time.perf_counter() - t0
    if args.output is not None:
        write_solution(SolutionFile.from_solution(sol, _config_echo(config)), args.output)
    if args.trace is not None:
        write_trace(sol.trace, args.trace)
    print(
        f"status={sol.status} iterations={sol.iterations} objective={sol.objective!r} "
        f"r_norm={sol.r_norm:.3e} s_norm={sol.s_norm:.3e} wall_seconds={wall:.3f}"
    )
    return EXIT_OK if sol.status == Status.CONVERGED else EXIT_MAXITERS


# ----------------------------------------------------------------- perturb


def _add_perturb(sub):
    p = sub.add_parser("perturb", help="degrade capacities or fail links")
    p.add_argument("problem", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    how = p.add_mutually_exclusive_group(required=True)
    how.add_argument("--degrade", nargs=2, metavar=("P", "FACTOR"))
    how.add_argument("--fail", type=_unit_interval, metavar="P")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prune-map", type=Path, help="default: <output>.prune.json")
    p.set_defaults(func=cmd_perturb)


def cmd_perturb(args):
    problem = read_problem(args.problem)
    if args.degrade is not None:
        try:
            prob, factor = _unit_interval(args.degrade[0]), float(args.degrade[1])
        except (argparse.ArgumentTypeError, ValueError) as e:
            raise UsageError(f"--degrade: {e}") from None
        if not factor > 0:
            raise UsageError("--degrade: factor must be positive")
        if args.prune_map is not None:
            raise UsageError("--prune-map only applies to --fail")
        out = gen.degrade(problem, prob, factor, seed=args.seed)
        changed = int(np.count_nonzero(out.capacities != problem.capacities))
        extra = {"degraded_links": changed}
    else:
        out, pm = gen.fail_and_prune(problem, args.fail, seed=args.seed)
        path = args.prune_map or args.output.with_name(args.output.name + ".prune.json")
        path.write_text(pm.to_json())
        extra = {"failed_links": problem.m - out.m, "removed_streams": len(pm.removed_streams)}
    write_problem(out, args.output)
    print(_summary(out, extra))
    return EXIT_OK


# ------------------------------------------------------------------- stats


def _add_stats(sub):
    p = sub.add_parser("stats", help="route-length, link-load, and utilization histograms")
    p.add_argument("problem", type=Path)
    p.add_argument("--solution", type=Path)
    p.add_argument("--utilization", action="store_true")
    p.add_argument("--bins", type=int, default=20, help="utilization bins")
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.add_argument("--prefix", default="")
    p.set_defaults(func=cmd_stats)


def integer_histogram(values):
    """One unit-wide bin per integer from min to max."""
    values = np.asarray(values, dtype=np.int64)
    lo = int(values.min())
    counts = np.bincount(values - lo)
    edges = np.arange(lo, lo + len(counts) + 1)
    return edges, counts


def _write_hist(path, edges, counts):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count"])
        for a, b, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([a, b, int(c)])


def cmd_stats(args):
    if args.utilization and args.solution is None:
        raise UsageError("stats: --utilization requires --solution")
    if args.bins < 1:
        raise UsageError("stats: --bins must be positive")
    problem = read_problem(args.problem)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, values in (
        ("links_per_stream", gen.links_per_stream(problem)),
        ("streams_per_link", gen.streams_per_link(problem)),
    ):
        edges, counts = integer_histogram(values)
        path = args.out_dir / f"{args.prefix}{name}.csv"
        _write_hist(path, edges.tolist(), counts)
        written.append(path)
    spl = gen.streams_per_link(problem)
    extra = {"max_streams_per_link": int(spl.max())}
    if args.solution is not None:
        sol = read_solution(args.solution)
        if (sol.n, sol.m) != (problem.n, problem.m):
            raise ValueError("solution does not match the problem dimensions")
        util = problem.link_load(sol.x) / problem.capacities
        top = max(1.0, float(util.max()))
        counts, edges = np.histogram(util, bins=args.bins, range=(0.0, top))
        path = args.out_dir / f"{args.prefix}utilization.csv"
        _write_hist(path, [float(e) for e in edges], counts)
        written.append(path)
        extra["binding_links"] = int(np.count_nonzero(util >= 1.0 - 1e-6))
        extra["max_utilization"] = f"{float(util.max()):.6f}"
    print(_summary(problem, extra))
    for path in written:
        print(path)
    return EXIT_OK


# ------------------------------------------------------------------- bench


BENCH_HEADER = ["m", "n", "nnz", "iterations", "wall_seconds", "status"]


def _add_bench(sub):
    p = sub.add_parser("bench", help="wall-clock time versus problem size")
    p.add_argument("--sizes", type=_sizes, required=True, help="comma-separated m values")
    p.add_argument("--congested", action="store_true")
    p.add_argument("--avg-links", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=_duration, default=None, help="per size, e.g. 30s or 5m")
    _add_solver_flags(p)
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(func=cmd_bench)


def cmd_bench(args):
    config = _config(args)
    rows = []
    for m in args.sizes:
        spec = gen.GenSpec(m=m, avg_links_per_stream=min(args.avg_links, m), seed=args.seed)
        t0 = time.perf_counter()
        problem = gen.gen_congested(spec) if args.congested else gen.gen_uncongested(spec)
        row = {"m": problem.m, "n": problem.n, "nnz": problem.nnz}
        left = None if args.timeout is None else args.timeout - (time.perf_counter() - t0)
        if left is not None and left <= 0:
            row.update(iterations=0, wall_seconds=f"{time.perf_counter() - t0:.3f}", status="DNF")
        else:
            t1 = time.perf_counter()
            sol = solve(problem, config, time_limit=left)
            wall = time.perf_counter() - t1
            status = str(sol.status)
            if sol.status != Status.CONVERGED and left is not None and wall >= left:
                status = "DNF"
            row.update(iterations=sol.iterations, wall_seconds=f"{wall:.3f}", status=status)
        rows.append(row)
        log.info("bench m=%d %s", m, row["status"])
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.DictWriter(out, BENCH_HEADER)
        w.writeheader()
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------- transit report


REPORT_HEADER = [
    "stream", "od", "origin", "destination", "route", "t0",
    "x", "weight", "path_price", "w_over_pi", "kkt_rel_err", "links", "lam_hat",
]


def _add_report(sub):
    p = sub.add_parser("transit-report", help="compare routes for one OD pair")
    p.add_argument("--problem", type=Path, required=True)
    p.add_argument("--solution", type=Path, required=True)
    p.add_argument("--meta", type=Path, required=True)
    p.add_argument("--od", type=int, required=True)
    p.add_argument("--t0", type=int, default=None, help="departure bin (default: all)")
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(func=cmd_transit_report)


def transit_report_rows(problem, sol, meta, od, t0=None):
    """Per-route rows for one OD pair, optionally at one departure bin."""
    ids = [rec["id"] for rec in meta.ods]
    if od not in ids:
        raise KeyError(f"unknown OD id {od}; available ids: {', '.join(map(str, ids))}")
    streams = meta.streams_for(od, t0)
    if not streams:
        raise KeyError(f"OD {od} has no streams departing at t0={t0}")
    rec = meta.ods[ids.index(od)]
    pp = gen.path_prices(problem, sol.lam, streams)
    rows = []
    for j, hat in zip(streams, pp.lam_hat):
        _, r, t = meta.streams[j]
        w = float(problem.weights[j])
        pi = float(pp.pi[j])
        x = float(sol.x[j])
        target = w / pi if pi > 0 else math.inf
        rows.append({
            "stream": j,
            "od": od,
            "origin": rec["origin"],
            "destination": rec["destination"],
            "route": r,
            "t0": t,
            "x": repr(x),
            "weight": repr(w),
            "path_price": repr(pi),
            "w_over_pi": repr(target),
            "kkt_rel_err": repr(abs(x - target) / target) if math.isfinite(target) else "nan",
            "links": " ".join(map(str, problem.route(j).tolist())),
            "lam_hat": " ".join(repr(float(v)) for v in hat),
        })
    return rows


def cmd_transit_report(args):
    problem = read_problem(args.problem)
    sol = read_solution(args.solution)
    if (sol.n, sol.m) != (problem.n, problem.m):
        raise ValueError("solution does not match the problem dimensions")
    meta = gen.TransitMetadata.from_json(args.meta.read_text())
    if len(meta.streams) != problem.n:
        raise ValueError("metadata does not match the problem")
    rows = transit_report_rows(problem, sol, meta, args.od, args.t0)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.DictWriter(out, REPORT_HEADER)
        w.writeheader()
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="numpmp", description="Network utility maximization by proximal message passing.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_generate(sub)
    _add_solve(sub)
    _add_perturb(sub)
    _add_stats(sub)
    _add_bench(sub)
    _add_report(sub)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2),
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (FormatError, ValidationError, SolverError, OSError, ValueError, KeyError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
