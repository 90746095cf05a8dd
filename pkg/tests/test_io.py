import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from numpmp.gen import GenSpec, gen_uncongested
from numpmp.io import (
    FormatError,
    SolutionFile,
    dumps_problem,
    dumps_solution,
    loads_problem,
    loads_solution,
    read_problem,
    read_solution,
    read_trace,
    write_problem,
    write_solution,
    write_trace,
)
from numpmp.model import LINEAR, LOG, Problem
from numpmp.solver import SolverConfig, solve


def test_net3_text(net3):
    text = dumps_problem(net3)
    assert text.splitlines() == [
        "NUMP 1 3 3",
        "1.0 1.0 1.0",
        "log 1.0 1 0",
        "log 1.0 2 1 2",
        "log 1.0 1 1",
    ]
    assert loads_problem(text) == net3


@settings(max_examples=50, deadline=None)
@given(
    caps=st.lists(st.floats(1e-300, 1e300), min_size=3, max_size=3),
    w=st.floats(1e-300, 1e300),
)
def test_problem_round_trip_bit_exact(caps, w):
    p = Problem.from_arrays(np.array(caps), [LOG, LINEAR], [w, w / 3], [0, 2, 3], [0, 2, 1])
    q = loads_problem(dumps_problem(p))
    assert q == p
    assert q.capacities.tobytes() == p.capacities.tobytes()


@pytest.mark.parametrize("suffix", [".num", ".npz"])
def test_file_round_trip(tmp_path, suffix):
    p = gen_uncongested(GenSpec(m=200, kind="mixed", weights=("uniform", 0.5, 2.0), seed=1))
    path = tmp_path / f"p{suffix}"
    write_problem(p, path)
    assert read_problem(path) == p


def test_binary_is_deterministic(tmp_path):
    p = gen_uncongested(GenSpec(m=100, seed=2))
    write_problem(p, tmp_path / "a.npz")
    write_problem(p, tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()


def test_extension_kind_survives(tmp_path):
    p = Problem.from_arrays([1.0], ["ext:alpha2"], [1.0], [0, 1], [0])
    assert loads_problem(dumps_problem(p)).kinds.tolist() == ["ext:alpha2"]


@pytest.mark.parametrize(
    "text, line",
    [
        ("", 1),
        ("NUMX 1 1 1\n1.0\nlog 1 1 0\n", 1),
        ("NUMP 2 1 1\n1.0\nlog 1 1 0\n", 1),
        ("NUMP 1 2 1\n1.0\nlog 1 1 0\n", 2),
        ("NUMP 1 1 1\n1.0\ncubic 1 1 0\n", 3),
        ("NUMP 1 1 2\n1.0\nlog 1 1 0\nlog 1 2 0\n", 4),
        ("NUMP 1 1 1\n1.0\nlog x 1 0\n", 3),
        ("NUMP 1 1 1\n1.0\nlog 1 1 0\nextra\n", 4),
    ],
)
def test_parse_errors_carry_line(text, line):
    with pytest.raises(FormatError) as e:
        loads_problem(text, path="p.num")
    assert e.value.line == line
    assert f"p.num:{line}:" in str(e.value)


def test_semantic_error_is_format_error():
    with pytest.raises(FormatError, match="duplicate_link"):
        loads_problem("NUMP 1 2 1\n1.0 1.0\nlog 1 2 0 0\n")


def test_solution_round_trip(net3, tmp_path):
    sol = solve(net3, SolverConfig(eps_abs=1e-7))
    sf = SolutionFile.from_solution(sol, {"eps_abs": 1e-7})
    write_solution(sf, tmp_path / "s.sol")
    back = read_solution(tmp_path / "s.sol")
    assert back.x.tobytes() == sol.x.tobytes()
    assert back.lam.tobytes() == sol.lam.tobytes()
    assert back.s.tobytes() == sol.s.tobytes()
    assert (back.objective, back.status, back.iterations) == (sol.objective, "Converged", sol.iterations)
    assert back.config["rho"] == sol.rho
    assert back.config["eps_abs"] == 1e-7
    assert dumps_solution(back) == dumps_solution(sf)


def test_solution_truncated():
    with pytest.raises(FormatError):
        loads_solution("NUMS 1 2 1 Converged 3 0.5\n1.0\n1.0 0.0\n")


def test_trace_round_trip(net3, tmp_path):
    sol = solve(net3, SolverConfig(eps_abs=1e-7))
    write_trace(sol.trace, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "iter,r_norm,s_norm,rho,objective"
    tr = read_trace(tmp_path / "t.csv")
    assert tr["iter"][-1] == sol.iterations
    assert tr["r_norm"][-1] == sol.r_norm and tr["s_norm"][-1] == sol.s_norm
