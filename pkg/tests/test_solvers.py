"""Steppers, inner solver, traces, and the run driver."""

import numpy as np
import pytest

from bilevel_tv.adjoint import KrylovConfig, solve_adjoint
from bilevel_tv.grids import add_noise, phantom
from bilevel_tv.problems import DenoisingProblem
from bilevel_tv.solvers import (ImplicitConfig, NumericalError, SolverState, StepSizes,
                                Trace, check_step_sizes, fefb_step, fifb_step,
                                hessian_norm_estimate, hypergradient, implicit_step,
                                initial_state, read_trace, relative_error, run,
                                solve_inner, trace_columns, write_trace)
from bilevel_tv.verify import make_toy_problem

N = 8


def small_problem():
    b = phantom(N, seed=51)
    z = add_noise(b, 0.1, seed=52)
    return DenoisingProblem(z, b, N, gamma=0.1)


def test_solve_inner_zero_weight_recovers_data():
    prob = small_problem()
    u, info = solve_inner(prob, np.array([0.0]), config=ImplicitConfig(rho=1e-15))
    assert info.converged
    assert np.linalg.norm(u - prob.z) <= 1e-6


def test_solve_inner_matches_toy_closed_form():
    toy = make_toy_problem()
    u_hat, p_hat, alpha_hat = toy.solution()
    alpha = np.array([0.9])
    # the inner solution is linear in alpha: S(alpha) = alpha * w
    expected = (0.9 / alpha_hat[0]) * u_hat
    u, info = solve_inner(toy, alpha, config=ImplicitConfig(rho=1e-15, stop_patience=3))
    assert info.converged
    assert np.linalg.norm(u - expected) <= 1e-6


def test_solve_inner_patience_counts_consecutive_hits():
    prob = small_problem()
    # with an enormous threshold every step is a low-progress step, so the
    # iteration count equals the patience
    for patience in (1, 3):
        _, info = solve_inner(prob, np.array([0.1]),
                              config=ImplicitConfig(rho=1e10, stop_patience=patience))
        assert info.iterations == patience


def test_solve_inner_iteration_cap_flags():
    prob = small_problem()
    _, info = solve_inner(prob, np.array([0.1]), config=ImplicitConfig(rho=1e-15, max_inner=3))
    assert not info.converged
    assert info.iterations == 3


def test_solve_inner_counts_evaluations():
    prob = small_problem()
    _, info = solve_inner(prob, np.array([0.1]), config=ImplicitConfig(rho=1e10))
    # one initial value, then per iteration one gradient and at least one value
    assert info.cost >= 1 + 2 * info.iterations


def test_hypergradient_is_row_matrix_action():
    prob = small_problem()
    rng = np.random.default_rng(53)
    u = rng.uniform(0, 1, prob.n_u)
    p = rng.standard_normal((1, prob.n_u))
    expected = p @ (u - prob.b)
    assert np.allclose(hypergradient(prob, u, p), expected, atol=1e-14)


def test_fifb_step_resource_increment_exact():
    prob = small_problem()
    state = initial_state(prob, np.array([0.05]))
    steps = StepSizes(tau=2e-3, sigma=1e-6, theta=2e-4)
    after = fifb_step(prob, state, steps)
    assert after.resource - state.resource == pytest.approx(1.0 + 2.0 * prob.n_alpha)
    assert after.k == state.k + 1


def test_fifb_step_requires_theta():
    prob = small_problem()
    state = initial_state(prob, np.array([0.05]))
    with pytest.raises(ValueError):
        fifb_step(prob, state, StepSizes(tau=2e-3, sigma=1e-6))


def test_fefb_step_resource_counts_krylov_applies():
    prob = small_problem()
    state = initial_state(prob, np.array([0.05]))
    after = fefb_step(prob, state, StepSizes(tau=2e-3, sigma=1e-6), KrylovConfig(tol=1e-10))
    # one gradient, at least one Hessian apply inside the solve, one row assembly
    assert after.resource - state.resource >= 1.0 + 1.0 + prob.n_alpha


def test_steps_decrease_outer_objective():
    prob = small_problem()
    state = initial_state(prob, np.array([0.0]))
    steps = StepSizes(tau=2e-3, sigma=2e-6, theta=2e-4)
    j0 = prob.outer_value(state.u)
    for _ in range(2000):
        state = fifb_step(prob, state, steps)
    assert prob.outer_value(state.u) < j0


def test_implicit_step_adjoint_failure_is_fatal():
    prob = small_problem()
    state = initial_state(prob, np.array([0.05]))
    with pytest.raises(NumericalError):
        implicit_step(prob, state, ImplicitConfig(),
                      KrylovConfig(tol=1e-15, max_iter=1))


def test_implicit_step_line_search_flag_when_stuck():
    prob = small_problem()
    # forcing failure on every probe: a sufficient-decrease constant far above
    # anything a real step could achieve
    cfg = ImplicitConfig(rho=1e-12, decrease_c=1e12, max_probes=2)
    state = initial_state(prob, np.array([0.05]), inner=cfg)
    after = implicit_step(prob, state, cfg, KrylovConfig(tol=1e-10))
    assert np.array_equal(after.alpha, state.alpha)
    assert any("line search" in msg for _, msg in after.flags)


def test_implicit_fixed_step_moves_alpha():
    prob = small_problem()
    cfg = ImplicitConfig(rho=1e-12, sigma=1e-4, line_search=False)
    state = initial_state(prob, np.array([0.0]), inner=cfg)
    after = implicit_step(prob, state, cfg, KrylovConfig(tol=1e-10))
    assert after.alpha[0] != 0.0


def test_initial_state_flags_unconverged_inner():
    prob = small_problem()
    state = initial_state(prob, np.array([0.05]), inner=ImplicitConfig(max_inner=2))
    assert any("initialization" in msg for _, msg in state.flags)


def test_trace_columns_schema():
    assert trace_columns(2) == ["k", "resource", "wall_s", "alpha_0", "alpha_1",
                                "grad_norm", "J", "R", "e_alpha_rel", "e_u_rel"]


def test_run_trace_subsampling_keeps_endpoints():
    prob = small_problem()
    _, trace = run(prob, "fifb", steps=StepSizes(2e-3, 1e-7, 2e-4), n_steps=10,
                   trace_every=4, alpha0=np.array([0.05]))
    assert [r["k"] for r in trace.rows] == [0, 4, 8, 10]


def test_run_rejects_bad_arguments():
    prob = small_problem()
    with pytest.raises(ValueError):
        run(prob, "newton", alpha0=np.array([0.05]))
    with pytest.raises(ValueError):
        run(prob, "fifb", alpha0=np.array([0.05]))
    with pytest.raises(ValueError):
        run(prob, "fifb", steps=StepSizes(2e-3, 1e-7, 2e-4))


def test_run_reference_errors_recorded():
    prob = small_problem()
    ref_alpha = np.array([0.06])
    ref_u = prob.z.copy()
    _, trace = run(prob, "fifb", steps=StepSizes(2e-3, 1e-7, 2e-4), n_steps=4,
                   alpha0=np.array([0.05]), reference=(ref_alpha, ref_u))
    for row in trace.rows:
        assert row["e_alpha_rel"] is not None
        assert row["e_u_rel"] is not None
    _, trace = run(prob, "fifb", steps=StepSizes(2e-3, 1e-7, 2e-4), n_steps=2,
                   alpha0=np.array([0.05]), reference=(ref_alpha, None))
    assert trace.rows[-1]["e_u_rel"] is None
    assert trace.rows[-1]["e_alpha_rel"] is not None


def test_trace_round_trip(tmp_path):
    prob = small_problem()
    _, trace = run(prob, "fifb", steps=StepSizes(2e-3, 1e-7, 2e-4), n_steps=6,
                   trace_every=2, alpha0=np.array([0.05]))
    path = tmp_path / "trace.csv"
    write_trace(path, trace)
    cols, rows = read_trace(path)
    assert cols == trace_columns(1)
    assert len(rows) == len(trace.rows)
    for got, want in zip(rows, trace.rows):
        assert got["k"] == want["k"]
        assert got["alpha_0"] == want["alpha_0"]
        assert got["J"] == want["J"]
        assert got["e_u_rel"] is None


def test_read_trace_diagnostics(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("not,a,trace\n1,2,3\n")
    with pytest.raises(ValueError, match="not a trace"):
        read_trace(path)
    path.write_text("k,resource,wall_s,alpha_0\n1,2.0\n")
    with pytest.raises(ValueError, match=":2"):
        read_trace(path)
    path.write_text("k,resource,wall_s,alpha_0\n1,2.0,0.1,oops\n")
    with pytest.raises(ValueError, match="alpha_0"):
        read_trace(path)


def test_trace_column_extraction():
    trace = Trace(1)
    trace.rows = [{"k": 0, "J": 1.0, "e_u_rel": None}, {"k": 1, "J": 0.5, "e_u_rel": 0.2}]
    col = trace.column("e_u_rel")
    assert np.isnan(col[0]) and col[1] == 0.2


def test_relative_error_scales_by_reference():
    assert relative_error(np.array([2.0]), np.array([1.0])) == 1.0
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_hessian_norm_estimate_matches_dense():
    toy = make_toy_problem()
    u = np.zeros(toy.n_u)
    alpha = np.array([1.0])
    dense = toy.b_mat.T @ toy.b_mat + toy.mu * np.eye(toy.n_u)
    lam_true = float(np.linalg.eigvalsh(dense)[-1])
    lam = hessian_norm_estimate(toy, u, alpha, iters=300)
    assert lam <= lam_true * (1 + 1e-10)
    assert lam >= 0.99 * lam_true


def test_check_step_sizes_warns_on_large_steps():
    prob = small_problem()
    state = initial_state(prob, np.array([0.05]))
    with pytest.warns(UserWarning):
        msgs = check_step_sizes(prob, state, StepSizes(tau=10.0, sigma=1e-6, theta=10.0), "fifb")
    assert len(msgs) == 2
    ok = check_step_sizes(prob, state, StepSizes(tau=1e-4, sigma=1e-6, theta=1e-5), "fifb")
    assert ok == []


def test_convergence_toward_longer_reference():
    # a short run's parameter error against a longer run's limit shrinks
    # monotonically once past the initial transient
    prob = small_problem()
    steps = StepSizes(tau=2e-3, sigma=2e-6, theta=2e-4)
    ref_state, _ = run(prob, "fifb", steps=steps, n_steps=12000, alpha0=np.zeros(1),
                       trace_every=12000)
    _, trace = run(prob, "fifb", steps=steps, n_steps=4000, alpha0=np.zeros(1),
                   trace_every=250, reference=(ref_state.alpha, ref_state.u))
    errs = [r["e_alpha_rel"] for r in trace.rows]
    burn = len(errs) // 4
    tail = errs[burn:]
    assert all(b < a for a, b in zip(tail, tail[1:]))
