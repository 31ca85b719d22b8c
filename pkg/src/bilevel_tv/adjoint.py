"""Krylov solvers and the adjoint state.

The adjoint state is the row matrix p solving p H + G = 0, where H is the
inner Hessian at (u, alpha) and G holds the mixed second-derivative rows.
Since H is symmetric, each row of p comes from one linear solve with H.
Row matrices are elements of the space of linear maps from images to
parameter vectors; it carries the Frobenius inner product (frob_inner),
under which ||p M||_F <= ||p||_F ||M||_2 for any square M.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class KrylovResult:
    x: np.ndarray
    residual: float  # relative residual ||A x - b|| / ||b||
    iterations: int
    n_apply: int
    converged: bool


@dataclass
class KrylovConfig:
    method: str = "cg"  # "cg" for the symmetric Hessian systems, or "bicgstab"
    tol: float = 1e-10
    max_iter: int = 10000


def conjugate_gradient(apply_op, rhs, tol=1e-10, max_iter=10000):
    """Conjugate gradients for symmetric positive definite operators.

    Starts from zero, stops when the residual drops below ``tol * ||rhs||``.
    On breakdown (non-positive curvature) or at the iteration cap the best
    iterate seen is returned with ``converged=False``.  A zero right-hand
    side short-circuits to the zero solution.
    """
    rhs = np.asarray(rhs, dtype=float)
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return KrylovResult(np.zeros_like(rhs), 0.0, 0, 0, True)
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rs = float(r @ r)
    best_x, best_res = x.copy(), np.sqrt(rs) / bnorm
    n_apply = 0
    it = 0
    for it in range(1, int(max_iter) + 1):
        ap = apply_op(p)
        n_apply += 1
        denom = float(p @ ap)
        if denom <= 0.0:
            break
        step = rs / denom
        x += step * p
        r -= step * ap
        rs_new = float(r @ r)
        res = np.sqrt(rs_new) / bnorm
        if res < best_res:
            best_res, best_x = res, x.copy()
        if res <= tol:
            return KrylovResult(x, res, it, n_apply, True)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return KrylovResult(best_x, best_res, it, n_apply, False)


def bicgstab(apply_op, rhs, tol=1e-10, max_iter=10000):
    """Unpreconditioned BiCGSTAB with the same contract as conjugate_gradient."""
    rhs = np.asarray(rhs, dtype=float)
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return KrylovResult(np.zeros_like(rhs), 0.0, 0, 0, True)
    x = np.zeros_like(rhs)
    r = rhs.copy()
    r0 = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(rhs)
    p = np.zeros_like(rhs)
    best_x, best_res = x.copy(), 1.0
    n_apply = 0
    it = 0
    for it in range(1, int(max_iter) + 1):
        rho_new = float(r0 @ r)
        if rho_new == 0.0 or omega == 0.0:
            break
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        v = apply_op(p)
        n_apply += 1
        denom = float(r0 @ v)
        if denom == 0.0:
            break
        alpha = rho / denom
        s = r - alpha * v
        res = float(np.linalg.norm(s)) / bnorm
        if res <= tol:
            x = x + alpha * p
            return KrylovResult(x, res, it, n_apply, True)
        t = apply_op(s)
        n_apply += 1
        tt = float(t @ t)
        if tt == 0.0:
            break
        omega = float(t @ s) / tt
        x = x + alpha * p + omega * s
        r = s - omega * t
        res = float(np.linalg.norm(r)) / bnorm
        if res < best_res:
            best_res, best_x = res, x.copy()
        if res <= tol:
            return KrylovResult(x, res, it, n_apply, True)
    return KrylovResult(best_x, best_res, it, n_apply, False)


def krylov_solve(apply_op, rhs, config=None):
    config = KrylovConfig() if config is None else config
    if config.method == "cg":
        return conjugate_gradient(apply_op, rhs, config.tol, config.max_iter)
    if config.method == "bicgstab":
        return bicgstab(apply_op, rhs, config.tol, config.max_iter)
    raise ValueError(f"unknown Krylov method {config.method!r}")


@dataclass
class AdjointInfo:
    residual: float  # worst relative residual over the rows
    iterations: int
    n_apply: int
    converged: bool


def solve_adjoint(problem, u, alpha, config=None):
    """Solve p H + G = 0 row by row at (u, alpha).

    Returns the (n_alpha, n_u) row matrix and solve diagnostics; callers
    decide whether a non-converged solve is fatal.
    """
    apply_op = problem.hess_operator(u, alpha)
    rows = problem.mixed_rows(u, alpha)
    p = np.empty_like(rows)
    worst = 0.0
    iters = 0
    n_apply = 0
    ok = True
    for i in range(rows.shape[0]):
        res = krylov_solve(apply_op, -rows[i], config)
        p[i] = res.x
        worst = max(worst, res.residual)
        iters += res.iterations
        n_apply += res.n_apply
        ok = ok and res.converged
    return p, AdjointInfo(worst, iters, n_apply, ok)


def adjoint_step(problem, u, alpha, p, theta):
    """One explicit relaxation step on the adjoint residual p H + G."""
    apply_op = problem.hess_operator(u, alpha)
    ph = np.vstack([apply_op(p[i]) for i in range(p.shape[0])])
    return p - theta * (ph + problem.mixed_rows(u, alpha))


def frob_inner(p, q):
    """Frobenius inner product on row matrices."""
    return float(np.sum(np.asarray(p, dtype=float) * np.asarray(q, dtype=float)))


def frob_norm(p):
    return float(np.linalg.norm(np.asarray(p, dtype=float)))
