import math

import numpy as np
import pytest

from numpmp.gen import GenSpec, gen_uncongested
from numpmp.model import LINEAR, LOG
from numpmp.oracle import solve_barrier
from numpmp.prox import min_potential_delay
from numpmp.solver import (
    SolverConfig,
    SolverError,
    SolverState,
    Status,
    WarmStart,
    check_termination,
    cold_start,
    compute_link_averages,
    iterate,
    objective,
    recover_duals,
    residuals,
    solve,
    stream_rates,
    update_rho,
    warm_start_from,
)

from conftest import make_problem


def transcribed_pmp(routes, c, w, rho, iters):
    """Plain-loop message passing with alpha = 1 and fixed rho.

    Terminals are (stream, link) pairs in route order followed by one
    slack terminal per link; nothing is shared with the engine.
    """
    terms = [(j, l) for j, r in enumerate(routes) for l in r] + [(None, i) for i in range(len(c))]
    J, m = len(terms), len(c)
    z = [0.0] * J
    u = [0.0] * m
    p = [0.0] * J
    for _ in range(iters):
        v = [z[t] - u[terms[t][1]] for t in range(J)]
        for j, r in enumerate(routes):
            idx = [t for t in range(J) if terms[t][0] == j]
            s = sum(v[t] for t in idx)
            tau = len(idx)
            x = (s + math.sqrt(s * s + 4 * w[j] * tau / rho)) / (2 * tau)
            for t in idx:
                p[t] = x
        for t in range(J):
            if terms[t][0] is None:
                p[t] = max(v[t], -c[terms[t][1]])
        pbar = [0.0] * m
        cnt = [0] * m
        for t, (_, l) in enumerate(terms):
            pbar[l] += p[t]
            cnt[l] += 1
        pbar = [a / k for a, k in zip(pbar, cnt)]
        z = [p[t] - pbar[terms[t][1]] for t in range(J)]
        u = [u[i] + pbar[i] for i in range(m)]
    x = [p[[t for t in range(J) if terms[t][0] == j][0]] for j in range(len(routes))]
    return np.array(x), np.array(u), np.array(pbar)


def test_alpha_one_matches_transcription(net3):
    config = SolverConfig(alpha=1.0, rho_update_interval=0)
    state = cold_start(net3, config)
    for _ in range(100):
        state = iterate(state, net3, config)
    x_ref, u_ref, pbar_ref = transcribed_pmp([[0], [1, 2], [1]], [1.0, 1.0, 1.0], [1, 1, 1], 1.0, 100)
    np.testing.assert_allclose(stream_rates(state, net3), x_ref, rtol=0, atol=1e-14)
    np.testing.assert_allclose(state.u, u_ref, rtol=0, atol=1e-14)
    np.testing.assert_allclose(state.p_bar, pbar_ref, rtol=0, atol=1e-14)


def test_first_iteration_hand_trace(single_log):
    config = SolverConfig(alpha=1.0)
    state = iterate(cold_start(single_log, config), single_log, config)
    # stream prox at 0 gives sqrt(4)/2 = 1; slack prox max(0, -1) = 0
    np.testing.assert_array_equal(state.p, [1.0, 0.0])
    np.testing.assert_array_equal(state.p_bar, [0.5])
    np.testing.assert_array_equal(state.u, [0.5])


def test_fixed_point_is_stationary(single_log):
    # x = 1, slack flow -1, link price 1: p_bar = 0 and every prox returns its input
    config = SolverConfig()
    st = SolverState(np.array([1.0, -1.0]), np.array([1.0, -1.0]), np.zeros(1), np.array([1.0]), 1.0)
    new = iterate(st, single_log, config)
    np.testing.assert_array_equal(new.p, st.p)
    np.testing.assert_array_equal(new.z, st.z)
    np.testing.assert_array_equal(new.u, st.u)
    assert residuals(new, st, single_log.layout) == (0.0, 0.0)


def test_net3_against_oracle(net3):
    sol = solve(net3, SolverConfig(eps_abs=1e-7))
    ref = solve_barrier(net3)
    assert sol.status is Status.CONVERGED
    np.testing.assert_allclose(sol.x, ref.x, rtol=1e-4)
    np.testing.assert_allclose(sol.lam, ref.lam, atol=1e-3)


def test_single_log_stream(single_log):
    sol = solve(single_log, SolverConfig(eps_abs=1e-8))
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.lam[0] == pytest.approx(1.0, abs=1e-5)


def test_single_linear_stream(single_linear):
    sol = solve(single_linear, SolverConfig(eps_abs=1e-8))
    assert sol.x[0] == pytest.approx(5.0, abs=1e-6)
    assert sol.objective == pytest.approx(5.0, abs=1e-6)


def test_non_binding_link_price_vanishes():
    # link 1 has spare capacity at the optimum
    p = make_problem([[0], [0, 1]], [1.0, 10.0])
    sol = solve(p, SolverConfig(eps_abs=1e-8))
    ref = solve_barrier(p)
    assert ref.lam[1] < 1e-6
    assert sol.lam[1] < 1e-3
    assert sol.s[1] > 0


def test_max_iters_is_a_status(net3):
    sol = solve(net3, SolverConfig(max_iters=1))
    assert sol.status is Status.MAX_ITERS
    assert sol.iterations == 1


def test_nonfinite_raises_with_iteration(net3):
    st = cold_start(net3, SolverConfig())
    st.z[0] = np.nan
    with pytest.raises(SolverError) as e:
        iterate(st, net3, SolverConfig())
    assert e.value.iteration == 1


def test_link_averages_balanced_link(net3):
    lay = net3.layout
    # shared link carries x2 = 1, x3 = 2 and slack flow -3
    flow = {1: 1.0, 2: 2.0, -1: -3.0}
    p = np.zeros(lay.total_terminals)
    on1 = np.flatnonzero(lay.term_link == 1)
    p[on1] = [flow[int(j)] for j in lay.term_stream[on1]]
    assert compute_link_averages(p, lay)[1] == 0.0


def test_link_averages_slack_only_link():
    p = make_problem([[0]], [1.0, 3.0])
    flows = np.array([0.0, 0.0, -3.0])
    assert compute_link_averages(flows, p.layout).tolist() == [0.0, -3.0]


def test_link_averages_zero(net3):
    out = compute_link_averages(np.zeros(net3.layout.total_terminals), net3.layout)
    assert np.all(out == 0.0)


def test_residual_replication(single_log):
    st = SolverState(np.zeros(2), np.zeros(2), np.array([3.0]), np.zeros(1), 1.0)
    r, s = residuals(st, st, single_log.layout)
    assert r == pytest.approx(3 * math.sqrt(2), abs=1e-15)
    assert s == 0.0


class _Layout:
    def __init__(self, J):
        self.total_terminals = J


@pytest.mark.parametrize("r, s, ok", [(9e-5, 9e-5, True), (1.1e-4, 9e-5, False), (0.0, 0.0, True)])
def test_termination(r, s, ok):
    assert check_termination(r, s, _Layout(100), SolverConfig(eps_abs=1e-5)) is ok


@pytest.mark.parametrize(
    "r, s, rho_new",
    [(10.0, 1.0, 1.1), (1.0, 10.0, 1 / 1.1), (1.0, 1.0, 1.0), (2.0, 1.0, 1.0), (1.0, 2.0, 1.0)],
)
def test_rho_branches(r, s, rho_new):
    u = np.array([0.3, -1.7, 2.0])
    st = SolverState(np.zeros(1), np.zeros(1), np.zeros(3), u.copy(), 1.0)
    out = update_rho(st, r, s, SolverConfig(mu=2.0, gamma=1.1))
    assert out.rho == pytest.approx(rho_new, rel=1e-15)
    np.testing.assert_allclose(out.u, u / rho_new, rtol=1e-15)
    np.testing.assert_allclose(out.rho * out.u, 1.0 * u, rtol=1e-15)


def test_rho_rescale_preserves_prices_exactly():
    rng = np.random.default_rng(5)
    u = rng.normal(size=1000)
    st = SolverState(np.zeros(1), np.zeros(1), np.zeros(1000), u, 2.0)
    out = update_rho(st, 10.0, 1.0, SolverConfig())
    # two roundings (the ratio and the product): at most 2 ulp apart
    y0, y1 = recover_duals(st, raw=True), recover_duals(out, raw=True)
    assert np.all(np.abs(y1 - y0) <= 2 * np.spacing(np.abs(y0)))


def test_zero_prices():
    st = SolverState(np.zeros(1), np.zeros(1), np.zeros(4), np.zeros(4), 7.0)
    assert np.all(recover_duals(st) == 0)


def test_objective_values():
    p = make_problem([[0]], [1.0], weights=2.0)
    assert objective(p, [math.e]) == pytest.approx(2.0)
    q = make_problem([[0], [0]], [1.0], kinds=LINEAR, weights=[1, 2])
    assert objective(q, [3.0, 4.0]) == 11.0
    r = make_problem([[0], [0]], [1.0], kinds=[LOG, LINEAR])
    assert objective(r, [1.0, 1.0]) == 1.0
    with pytest.raises(ValueError):
        objective(p, [0.0])


def test_warm_start_length_mismatch(net3):
    with pytest.raises(ValueError):
        warm_start_from(np.ones(2), net3)
    with pytest.raises(ValueError):
        warm_start_from(np.ones(3), net3, lam=np.ones(2))


def test_self_warm_start_converges_immediately():
    p = gen_uncongested(GenSpec(m=500, seed=3))
    cold = solve(p, SolverConfig(eps_abs=1e-5))
    warm = solve(p, SolverConfig(eps_abs=1e-5), cold.warm_start())
    assert cold.converged and warm.converged
    assert warm.iterations <= 10


def test_tiny_warm_start_still_converges(net3):
    sol = solve(net3, SolverConfig(eps_abs=1e-7), WarmStart(np.full(3, 1e-9)))
    assert sol.converged
    np.testing.assert_allclose(sol.x, [1.0, 0.5, 0.5], rtol=1e-4)


def test_trace_ends_at_terminal_residuals(net3):
    sol = solve(net3, SolverConfig(eps_abs=1e-7, trace_every=7))
    assert sol.trace.iters[-1] == sol.iterations
    assert sol.trace.r_norm[-1] == sol.r_norm
    assert sol.trace.s_norm[-1] == sol.s_norm
    assert all(i % 7 == 0 for i in sol.trace.iters[:-1])


def test_u_is_one_price_per_link(net3):
    sol = solve(net3, SolverConfig(eps_abs=1e-7))
    assert sol.state.u.shape == (net3.m,)
    assert sol.lam.shape == (net3.m,)


def test_threads_do_not_change_result():
    p = gen_uncongested(GenSpec(m=400, kind="mixed", seed=1))
    a = solve(p, SolverConfig(threads=1))
    b = solve(p, SolverConfig(threads=3))
    np.testing.assert_array_equal(a.x, b.x)
    assert a.iterations == b.iterations


def test_mixed_linear_rates_nonnegative():
    p = gen_uncongested(GenSpec(m=200, kind="mixed", weights=("uniform", 0.5, 2.0), seed=9))
    sol = solve(p, SolverConfig(eps_abs=1e-6))
    assert sol.converged
    assert np.all(sol.x[p.kinds == LINEAR] >= 0)
    ref = solve_barrier(p)
    assert sol.objective == pytest.approx(ref.objective, rel=1e-3)


def test_extension_streams_solve():
    ext = min_potential_delay()
    p = make_problem([[0], [0]], [2.0], kinds="ext:alpha2")
    sol = solve(p, SolverConfig(eps_abs=1e-8), extensions={"alpha2": ext})
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-5)
    # U'(x) = w / x^2 = lambda
    assert sol.lam[0] == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("bad", [dict(alpha=2.5), dict(alpha=0.9), dict(eps_abs=0), dict(rho0=-1), dict(max_iters=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SolverConfig(**bad)
