"""Problem, solution, and trace file formats.

Problem text format::

    NUMP 1 <m> <n>
    <c_0> ... <c_{m-1}>
    <log|lin|ext:NAME> <weight> <k> <l_1> ... <l_k>     (n lines)

Solution text format::

    NUMS 1 <m> <n> <status> <iters> <objective>
    <x_j>                                              (n lines)
    <lambda_i> <s_i>                                   (m lines)
    # config {json}

Floats are written with ``repr`` so every value round-trips exactly.
Problem files ending in ``.npz`` use a binary container instead; it is
written with fixed zip timestamps so identical problems produce
identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .model import LINEAR, LOG, Problem, ValidationError

PROBLEM_TAG = "NUMP"
SOLUTION_TAG = "NUMS"
VERSION = 1
TRACE_HEADER = ["iter", "r_norm", "s_norm", "rho", "objective"]

_KIND_OUT = {LOG: "log", LINEAR: "lin"}
_KIND_IN = {"log": LOG, "lin": LINEAR}


class FormatError(ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())


def _f(v) -> str:
    return repr(float(v))


# ----------------------------------------------------------------- problem


def dumps_problem(problem: Problem) -> str:
    out = io.StringIO()
    out.write(f"{PROBLEM_TAG} {VERSION} {problem.m} {problem.n}\n")
    out.write(" ".join(map(repr, problem.capacities.tolist())) + "\n")
    ptr = problem.route_ptr.tolist()
    idx = problem.route_idx.tolist()
    weights = problem.weights.tolist()
    for j, kind in enumerate(problem.kinds.tolist()):
        a, b = ptr[j], ptr[j + 1]
        route = " ".join(map(str, idx[a:b]))
        out.write(f"{_KIND_OUT.get(kind, kind)} {weights[j]!r} {b - a} {route}\n")
    return out.getvalue()


def loads_problem(text: str, path=None) -> Problem:
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty problem file", 1, path)
    head = lines[0].split()
    if len(head) != 4 or head[0] != PROBLEM_TAG:
        raise FormatError(f"expected header '{PROBLEM_TAG} {VERSION} <m> <n>'", 1, path)
    if head[1] != str(VERSION):
        raise FormatError(f"unsupported version {head[1]}", 1, path)
    try:
        m, n = int(head[2]), int(head[3])
    except ValueError:
        raise FormatError("m and n must be integers", 1, path) from None
    if len(lines) < 2 + n:
        raise FormatError(f"expected {n} stream lines, found {max(0, len(lines) - 2)}", len(lines), path)
    try:
        c = np.array([float(v) for v in lines[1].split()])
    except ValueError:
        raise FormatError("capacities must be numbers", 2, path) from None
    if c.size != m:
        raise FormatError(f"expected {m} capacities, found {c.size}", 2, path)
    kinds, weights, lengths, idx = [], [], [], []
    for j in range(n):
        lineno = 3 + j
        tok = lines[2 + j].split()
        if len(tok) < 3:
            raise FormatError("stream line needs kind, weight, and route length", lineno, path)
        kind = _KIND_IN.get(tok[0], tok[0])
        if kind not in (LOG, LINEAR) and not (kind.startswith("ext:") and len(kind) > 4):
            raise FormatError(f"unknown stream kind {tok[0]!r}", lineno, path)
        try:
            w = float(tok[1])
            k = int(tok[2])
            route = [int(t) for t in tok[3:]]
        except ValueError:
            raise FormatError("malformed numeric field", lineno, path) from None
        if len(route) != k:
            raise FormatError(f"route length {k} but {len(route)} links listed", lineno, path)
        kinds.append(kind)
        weights.append(w)
        lengths.append(k)
        idx.extend(route)
    for extra, line in enumerate(lines[2 + n :], start=3 + n):
        if line.strip():
            raise FormatError("unexpected trailing content", extra, path)
    try:
        return Problem.from_arrays(
            c,
            np.array(kinds, dtype=str),
            np.array(weights, dtype=float),
            np.concatenate([[0], np.cumsum(lengths, dtype=np.int64)]),
            np.array(idx, dtype=np.int64),
        )
    except ValidationError as e:
        raise FormatError(f"invalid problem: {e}", None, path) from e


_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _save_npz(path, arrays: dict):
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def write_problem(problem: Problem, path) -> None:
    path = Path(path)
    if path.suffix == ".npz":
        _save_npz(
            path,
            {
                "header": np.array([PROBLEM_TAG, str(VERSION)]),
                "capacities": problem.capacities,
                "kinds": problem.kinds.astype(str),
                "weights": problem.weights,
                "route_ptr": problem.route_ptr,
                "route_idx": problem.route_idx,
            },
        )
    else:
        path.write_text(dumps_problem(problem))


def read_problem(path) -> Problem:
    path = Path(path)
    if path.suffix == ".npz":
        try:
            with np.load(path, allow_pickle=False) as d:
                if list(d["header"]) != [PROBLEM_TAG, str(VERSION)]:
                    raise FormatError("not a NUMP binary container", path=path)
                return Problem.from_arrays(
                    d["capacities"], d["kinds"], d["weights"], d["route_ptr"], d["route_idx"]
                )
        except (KeyError, zipfile.BadZipFile) as e:
            raise FormatError(f"malformed binary problem: {e}", path=path) from e
    return loads_problem(path.read_text(), path=path)


# ---------------------------------------------------------------- solution


@dataclass
class SolutionFile:
    x: np.ndarray
    lam: np.ndarray
    s: np.ndarray
    objective: float
    status: str
    iterations: int
    config: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.lam)

    @property
    def n(self) -> int:
        return len(self.x)

    @classmethod
    def from_solution(cls, sol, config=None) -> "SolutionFile":
        echo = dict(config or {})
        echo.update(rho=sol.rho, r_norm=sol.r_norm, s_norm=sol.s_norm, eps_tol=sol.eps_tol)
        return cls(sol.x, sol.lam, sol.s, sol.objective, str(sol.status), sol.iterations, echo)


def dumps_solution(sol: SolutionFile) -> str:
    out = io.StringIO()
    out.write(
        f"{SOLUTION_TAG} {VERSION} {sol.m} {sol.n} {sol.status} {sol.iterations} {_f(sol.objective)}\n"
    )
    out.write("".join(f"{v!r}\n" for v in np.asarray(sol.x, dtype=float).tolist()))
    for a, b in zip(np.asarray(sol.lam, dtype=float).tolist(), np.asarray(sol.s, dtype=float).tolist()):
        out.write(f"{a!r} {b!r}\n")
    out.write("# config " + json.dumps(sol.config, sort_keys=True) + "\n")
    return out.getvalue()


def loads_solution(text: str, path=None) -> SolutionFile:
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty solution file", 1, path)
    head = lines[0].split()
    if len(head) != 7 or head[0] != SOLUTION_TAG or head[1] != str(VERSION):
        raise FormatError(f"expected header '{SOLUTION_TAG} {VERSION} <m> <n> <status> <iters> <objective>'", 1, path)
    try:
        m, n, iters = int(head[2]), int(head[3]), int(head[5])
        obj = float(head[6])
    except ValueError:
        raise FormatError("malformed header fields", 1, path) from None
    if len(lines) < 1 + n + m:
        raise FormatError("solution file truncated", len(lines), path)
    x = np.empty(n)
    for j in range(n):
        try:
            x[j] = float(lines[1 + j])
        except ValueError:
            raise FormatError("malformed rate", 2 + j, path) from None
    lam, s = np.empty(m), np.empty(m)
    for i in range(m):
        tok = lines[1 + n + i].split()
        try:
            lam[i], s[i] = float(tok[0]), float(tok[1])
        except (ValueError, IndexError):
            raise FormatError("expected '<lambda> <s>'", 2 + n + i, path) from None
    config = {}
    for k, line in enumerate(lines[1 + n + m :], start=2 + n + m):
        if line.startswith("# config "):
            try:
                config = json.loads(line[len("# config ") :])
            except json.JSONDecodeError:
                raise FormatError("malformed config echo", k, path) from None
        elif line.strip():
            raise FormatError("unexpected trailing content", k, path)
    return SolutionFile(x, lam, s, obj, head[4], iters, config)


def write_solution(sol: SolutionFile, path) -> None:
    Path(path).write_text(dumps_solution(sol))


def read_solution(path) -> SolutionFile:
    return loads_solution(Path(path).read_text(), path=path)


# ------------------------------------------------------------------- trace


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for it, r, s, rho, obj in trace.rows():
            w.writerow([it, repr(r), repr(s), repr(rho), repr(obj)])


def read_trace(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {
        "iter": np.array([int(r["iter"]) for r in rows]),
        **{k: np.array([float(r[k]) for r in rows]) for k in TRACE_HEADER[1:]},
    }
