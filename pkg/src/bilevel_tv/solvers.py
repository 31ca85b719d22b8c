"""Single-loop bilevel steppers, the implicit-differentiation baseline,
iterate traces, and the run driver.

Resource accounting replaces wall-clock comparisons across machines: the
counter advances by 1 per inner value or gradient evaluation, 1 per
Hessian apply (Krylov solves report their own apply counts), and n_alpha
per assembly of the mixed-derivative rows.  Trace instrumentation (the
recorded gradient norm) is excluded from the counter.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .adjoint import adjoint_step, solve_adjoint


class NumericalError(RuntimeError):
    """A solve failed hard enough that continuing would be meaningless."""


@dataclass
class StepSizes:
    """Step lengths for the single-loop methods.

    tau drives the inner descent step, sigma the outer prox step, and
    theta (unused by the exact-adjoint method) the adjoint relaxation.
    """

    tau: float
    sigma: float
    theta: float | None = None


@dataclass
class SolverState:
    u: np.ndarray
    p: np.ndarray  # adjoint row matrix, n_alpha x n_u
    alpha: np.ndarray
    k: int = 0
    resource: float = 0.0
    flags: list = field(default_factory=list)


@dataclass
class ImplicitConfig:
    """Settings for the inner descent and the implicit baseline's outer step."""

    rho: float = 5e-10  # relative energy-decrease stopping threshold
    max_inner: int = 500_000
    stop_patience: int = 1  # consecutive threshold hits required to stop
    tau0: float = 1.0  # first Armijo trial step
    grow: float = 1.1  # trial-step growth between inner iterations
    shrink: float = 0.75  # Armijo backtracking factor
    armijo_c: float = 1e-4
    sigma: float = 5e-5  # outer step: first trial, or the fixed step
    line_search: bool = True
    sigma_shrink: float = 0.1
    max_probes: int = 6
    decrease_c: float = 1e-4  # sufficient-decrease constant for the outer search


@dataclass
class InnerInfo:
    iterations: int
    cost: float
    value: float
    converged: bool


def solve_inner(problem, alpha, v0=None, config=None):
    """Gradient descent with Armijo backtracking on the inner energy.

    Starts from zero unless ``v0`` is given.  The trial step grows by
    ``grow`` between iterations and shrinks by ``shrink`` inside the
    backtracking loop.  Stops once the energy decrease falls below
    ``rho`` relative to the current energy on ``stop_patience``
    consecutive iterations (a single low-progress step can fire the
    plain rule early; a patience above one makes the exit robust to
    that, at the price of a few extra iterations).  Hitting
    ``max_inner`` flags the solve as stalled.

    Returns ``(u, InnerInfo)``.
    """
    config = ImplicitConfig() if config is None else config
    v = np.zeros(problem.n_u) if v0 is None else np.asarray(v0, dtype=float).copy()
    f = problem.inner_value(v, alpha)
    cost = 1.0
    tau = config.tau0
    it = 0
    streak = 0
    for it in range(1, int(config.max_inner) + 1):
        g = problem.inner_grad(v, alpha)
        cost += 1.0
        gg = float(g @ g)
        if gg == 0.0:
            return v, InnerInfo(it, cost, f, True)
        tau *= config.grow
        while True:
            v_new = v - tau * g
            f_new = problem.inner_value(v_new, alpha)
            cost += 1.0
            if f_new <= f - config.armijo_c * tau * gg:
                break
            tau *= config.shrink
            if tau < 1e-20:
                return v, InnerInfo(it, cost, f, False)
        decrease = f - f_new
        streak = streak + 1 if decrease <= config.rho * abs(f) else 0
        v, f = v_new, f_new
        if streak >= int(config.stop_patience):
            return v, InnerInfo(it, cost, f, True)
    return v, InnerInfo(it, cost, f, False)


def hypergradient(problem, u, p):
    """Chain-rule outer gradient in alpha given the adjoint rows."""
    return p @ problem.outer_grad(u)


def fefb_step(problem, state, steps, krylov=None):
    """Forward step on u, exact adjoint solve, prox step on alpha."""
    cost = state.resource
    u = state.u - steps.tau * problem.inner_grad(state.u, state.alpha)
    cost += 1.0
    p, info = solve_adjoint(problem, u, state.alpha, krylov)
    cost += info.n_apply + problem.n_alpha
    flags = state.flags
    if not info.converged:
        flags = flags + [(state.k + 1, f"adjoint solve stalled at residual {info.residual:.2e}")]
    alpha = problem.prox_alpha(state.alpha - steps.sigma * hypergradient(problem, u, p), steps.sigma)
    return SolverState(u, p, alpha, state.k + 1, cost, flags)


def fifb_step(problem, state, steps):
    """Forward step on u, one adjoint relaxation step, prox step on alpha."""
    if steps.theta is None:
        raise ValueError("the inexact-adjoint method needs theta")
    cost = state.resource
    u = state.u - steps.tau * problem.inner_grad(state.u, state.alpha)
    cost += 1.0
    p = adjoint_step(problem, u, state.alpha, state.p, steps.theta)
    cost += 2.0 * problem.n_alpha  # n_alpha Hessian applies plus the mixed rows
    alpha = problem.prox_alpha(state.alpha - steps.sigma * hypergradient(problem, u, p), steps.sigma)
    return SolverState(u, p, alpha, state.k + 1, cost, state.flags)


def implicit_step(problem, state, config=None, krylov=None):
    """One outer step of the implicit baseline.

    Re-solves the inner problem from zero, computes the exact adjoint
    (non-convergence here is fatal), then takes a prox-gradient step on
    alpha, backtracked on the reduced objective when ``line_search`` is
    set.  Probes that do not sufficiently decrease J(S_u(alpha)) + R(alpha)
    shrink sigma; if every probe fails, alpha is left unchanged.
    """
    config = ImplicitConfig() if config is None else config
    cost = state.resource
    u, info = solve_inner(problem, state.alpha, config=config)
    cost += info.cost
    flags = state.flags
    if not info.converged:
        flags = flags + [(state.k + 1, "inner solve hit the iteration cap")]
    p, adj = solve_adjoint(problem, u, state.alpha, krylov)
    cost += adj.n_apply + problem.n_alpha
    if not adj.converged:
        raise NumericalError(
            f"adjoint solve failed at outer step {state.k + 1} (residual {adj.residual:.2e})"
        )
    h = hypergradient(problem, u, p)
    if not config.line_search:
        alpha = problem.prox_alpha(state.alpha - config.sigma * h, config.sigma)
        return SolverState(u, p, alpha, state.k + 1, cost, flags)
    phi = problem.outer_value(u) + problem.reg_value(state.alpha)
    sigma = config.sigma
    alpha = state.alpha
    accepted = False
    for _ in range(int(config.max_probes)):
        cand = problem.prox_alpha(state.alpha - sigma * h, sigma)
        move = float(np.linalg.norm(cand - state.alpha))
        if move == 0.0:
            accepted = True  # prox-stationary at this sigma
            break
        u_c, info_c = solve_inner(problem, cand, config=config)
        cost += info_c.cost
        phi_c = problem.outer_value(u_c) + problem.reg_value(cand)
        if phi_c <= phi - config.decrease_c * move * move / sigma:
            alpha = cand
            accepted = True
            break
        sigma *= config.sigma_shrink
    if not accepted:
        flags = flags + [(state.k + 1, "outer line search made no progress")]
    return SolverState(u, p, alpha, state.k + 1, cost, flags)


def initial_state(problem, alpha0, inner=None, krylov=None):
    """Warm start: inner solution and exact adjoint at alpha0."""
    alpha0 = np.asarray(alpha0, dtype=float)
    u, info = solve_inner(problem, alpha0, config=inner)
    p, adj = solve_adjoint(problem, u, alpha0, krylov)
    cost = info.cost + adj.n_apply + problem.n_alpha
    flags = []
    if not (info.converged and adj.converged):
        flags.append((0, "initialization solves did not fully converge"))
    return SolverState(u, p, alpha0.copy(), 0, cost, flags)


def trace_columns(n_alpha):
    cols = ["k", "resource", "wall_s"]
    cols += [f"alpha_{i}" for i in range(n_alpha)]
    cols += ["grad_norm", "J", "R", "e_alpha_rel", "e_u_rel"]
    return cols


class Trace:
    """Row-per-iterate record of a solver run."""

    def __init__(self, n_alpha):
        self.n_alpha = int(n_alpha)
        self.rows = []

    def record(self, problem, state, t0, reference=None):
        g = problem.inner_grad(state.u, state.alpha)  # instrumentation, not counted
        row = {
            "k": state.k,
            "resource": float(state.resource),
            "wall_s": time.perf_counter() - t0,
            "grad_norm": float(np.linalg.norm(g)),
            "J": problem.outer_value(state.u),
            "R": problem.reg_value(state.alpha),
            "e_alpha_rel": None,
            "e_u_rel": None,
        }
        for i in range(self.n_alpha):
            row[f"alpha_{i}"] = float(state.alpha[i])
        if reference is not None:
            a_ref, u_ref = reference
            row["e_alpha_rel"] = relative_error(state.alpha, a_ref)
            if u_ref is not None:
                row["e_u_rel"] = relative_error(state.u, u_ref)
        self.rows.append(row)

    def column(self, name):
        return np.array([np.nan if r[name] is None else r[name] for r in self.rows])


def relative_error(x, ref):
    """Norm distance to a reference, relative to the reference norm."""
    ref = np.asarray(ref, dtype=float)
    denom = float(np.linalg.norm(ref))
    return float(np.linalg.norm(np.asarray(x, dtype=float) - ref)) / max(denom, 1e-300)


def write_trace(path, trace):
    cols = trace_columns(trace.n_alpha)
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in trace.rows:
            fh.write(",".join(_format_cell(row[c]) for c in cols) + "\n")


def _format_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_trace(path):
    """Parse a trace CSV into (columns, list of row dicts).

    Empty cells come back as None; malformed files raise ValueError
    naming the line.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty trace file")
    cols = lines[0].split(",")
    if cols[:3] != ["k", "resource", "wall_s"]:
        raise ValueError(f"{path}: not a trace CSV (header starts with {cols[:3]})")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(cols):
            raise ValueError(f"{path}:{lineno}: {len(parts)} fields, expected {len(cols)}")
        row = {}
        for c, val in zip(cols, parts):
            if val == "":
                row[c] = None
            elif c == "k":
                row[c] = int(val)
            else:
                try:
                    row[c] = float(val)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad value for {c}: {val!r}") from None
        rows.append(row)
    return cols, rows


def hessian_norm_estimate(problem, u, alpha, iters=200, seed=0):
    """Largest Hessian eigenvalue by power iteration.

    Keeps the running maximum of the Rayleigh quotients, so the estimate
    approaches the true norm from below; the step-size guards built on it
    warn rather than enforce.
    """
    rng = np.random.default_rng(seed)
    apply_op = problem.hess_operator(u, alpha)
    v = rng.standard_normal(problem.n_u)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(int(iters)):
        w = apply_op(v)
        lam = max(lam, float(v @ w))
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        v = w / nw
    return lam


def check_step_sizes(problem, state, steps, method, kappa=0.99, iters=100):
    """Warn when tau or theta exceed the curvature bounds at this state.

    tau should stay within 2*kappa/L for some kappa < 1 and theta below
    1/L, with L the largest Hessian eigenvalue.  Returns the warning
    messages (empty when the steps look fine).
    """
    lam = hessian_norm_estimate(problem, state.u, state.alpha, iters)
    msgs = []
    if lam > 0.0 and steps.tau > 2.0 * kappa / lam:
        msgs.append(f"tau={steps.tau:g} exceeds 2*kappa/L ~ {2.0 * kappa / lam:g}")
    if method == "fifb" and steps.theta is not None and lam > 0.0 and steps.theta >= 1.0 / lam:
        msgs.append(f"theta={steps.theta:g} exceeds 1/L ~ {1.0 / lam:g}")
    for m in msgs:
        warnings.warn(m, stacklevel=2)
    return msgs


def run(problem, method, steps=None, n_steps=100, trace_every=1, alpha0=None,
        state=None, implicit=None, krylov=None, reference=None, guard_steps=False):
    """Drive a solver for ``n_steps`` steps and collect a trace.

    ``method`` is "fefb", "fifb", or "implicit".  Either an explicit
    starting ``state`` or an ``alpha0`` (warm-started through the inner
    and adjoint solves) must be given.  ``reference`` is an
    ``(alpha, u)`` pair of limit values used to fill the relative-error
    columns; pass ``u = None`` to fill only the alpha column.

    Returns ``(final_state, trace)``.
    """
    if method not in ("fefb", "fifb", "implicit"):
        raise ValueError(f"unknown method {method!r}")
    if method in ("fefb", "fifb") and steps is None:
        raise ValueError(f"method {method!r} needs step sizes")
    if state is None:
        if alpha0 is None:
            raise ValueError("need alpha0 or an explicit starting state")
        state = initial_state(problem, alpha0, inner=implicit, krylov=krylov)
    if guard_steps and method in ("fefb", "fifb"):
        check_step_sizes(problem, state, steps, method)
    n_steps = int(n_steps)
    trace = Trace(problem.n_alpha)
    t0 = time.perf_counter()
    trace.record(problem, state, t0, reference)
    for k in range(1, n_steps + 1):
        if method == "fefb":
            state = fefb_step(problem, state, steps, krylov)
        elif method == "fifb":
            state = fifb_step(problem, state, steps)
        else:
            state = implicit_step(problem, state, implicit, krylov)
        if k % int(trace_every) == 0 or k == n_steps:
            trace.record(problem, state, t0, reference)
    return state, trace
