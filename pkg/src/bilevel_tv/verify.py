"""Verification suite.

Finite-difference oracles for every analytic derivative, a fully
quadratic toy problem with closed-form limits, and sampled numerical
checks of the contraction, monotonicity, and operator-norm facts the
solvers rely on.  Each check returns a CheckResult; the named suites at
the bottom are what the command-line ``verify`` subcommand runs.
"""

from dataclasses import dataclass

import numpy as np

from .adjoint import KrylovConfig, frob_inner, frob_norm, solve_adjoint
from .grids import add_noise, blur_kernel, convolve, phantom
from .problems import BilevelProblem, DeconvolutionProblem, DenoisingProblem, Regularizer
from .solvers import (ImplicitConfig, SolverState, StepSizes, fefb_step, fifb_step,
                      hypergradient, initial_state, solve_inner)


@dataclass
class CheckResult:
    name: str
    metric: float
    bound: float
    passed: bool
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"{status}  {self.name}: metric={self.metric:.3e} bound={self.bound:.3e}{extra}"


def fd_directional(f, x, d, h):
    """Central difference of f along d; f may return a scalar or a vector."""
    fp = np.asarray(f(x + h * d), dtype=float)
    fm = np.asarray(f(x - h * d), dtype=float)
    return (fp - fm) / (2.0 * h)


def rel_err(a, b, floor=1e-12):
    """Max absolute difference over the larger of the two magnitudes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), floor)
    return float(np.max(np.abs(a - b))) / denom


def check_inner_derivatives(problem, u, alpha, n_dirs=10, h=1e-6, seed=0, tol=1e-5):
    """Finite-difference validation of the inner gradient, the Hessian
    action, and the mixed-derivative rows at (u, alpha)."""
    rng = np.random.default_rng(seed)
    u = np.asarray(u, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    hu = h * (1.0 + float(np.max(np.abs(u))))
    out = []

    g = problem.inner_grad(u, alpha)
    worst = 0.0
    for _ in range(n_dirs):
        d = rng.standard_normal(problem.n_u)
        d /= np.linalg.norm(d)
        fd = fd_directional(lambda x: problem.inner_value(x, alpha), u, d, hu)
        worst = max(worst, rel_err(fd, float(g @ d)))
    out.append(CheckResult("inner gradient vs value", worst, tol, worst <= tol))

    worst = 0.0
    for _ in range(n_dirs):
        d = rng.standard_normal(problem.n_u)
        d /= np.linalg.norm(d)
        fd = fd_directional(lambda x: problem.inner_grad(x, alpha), u, d, hu)
        worst = max(worst, rel_err(fd, problem.hess_apply(u, alpha, d)))
    out.append(CheckResult("Hessian action vs gradient", worst, tol, worst <= tol))

    rows = problem.mixed_rows(u, alpha)
    worst = 0.0
    for i in range(problem.n_alpha):
        e = np.zeros(problem.n_alpha)
        e[i] = 1.0
        ha = h * (1.0 + abs(float(alpha[i])))
        fd = fd_directional(lambda a: problem.inner_grad(u, a), alpha, e, ha)
        worst = max(worst, rel_err(fd, rows[i]))
    out.append(CheckResult("mixed rows vs gradient", worst, tol, worst <= tol))
    return out


def check_outer_gradient(problem, n_dirs=10, h=1e-6, seed=0, tol=1e-8):
    """Finite-difference validation of the outer tracking gradient."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, 1.0, problem.n_u)
    g = problem.outer_grad(u)
    worst = 0.0
    for _ in range(n_dirs):
        d = rng.standard_normal(problem.n_u)
        d /= np.linalg.norm(d)
        fd = fd_directional(problem.outer_value, u, d, h * (1.0 + float(np.max(np.abs(u)))))
        worst = max(worst, rel_err(fd, float(g @ d)))
    return CheckResult("outer gradient vs value", worst, tol, worst <= tol)


def hypergradient_fd(problem, alpha, h=1e-3, inner=None):
    """Reduced-objective gradient by central differences.

    Re-solves the inner problem on both sides of each coordinate; this
    is the oracle the adjoint route is checked against.
    """
    alpha = np.asarray(alpha, dtype=float)
    out = np.empty(problem.n_alpha)
    for i in range(problem.n_alpha):
        e = np.zeros(problem.n_alpha)
        e[i] = 1.0
        hi = h * (1.0 + abs(float(alpha[i])))
        up, _ = solve_inner(problem, alpha + hi * e, config=inner)
        um, _ = solve_inner(problem, alpha - hi * e, config=inner)
        out[i] = (problem.outer_value(up) - problem.outer_value(um)) / (2.0 * hi)
    return out


def check_hypergradient(problem, alphas, h=1e-3, tol=1e-4, inner=None, krylov=None):
    """Adjoint-route hypergradient against the finite-difference oracle."""
    results = []
    for alpha in alphas:
        alpha = np.asarray(alpha, dtype=float)
        u, _ = solve_inner(problem, alpha, config=inner)
        p, adj = solve_adjoint(problem, u, alpha, krylov)
        err = rel_err(hypergradient(problem, u, p), hypergradient_fd(problem, alpha, h, inner))
        name = "hypergradient at alpha=" + np.array2string(alpha, precision=3)
        detail = "" if adj.converged else f"adjoint residual {adj.residual:.1e}"
        results.append(CheckResult(name, err, tol, err <= tol and adj.converged, detail))
    return results


def prox_displacement(prox, alpha, q, sigma):
    """D(alpha) = prox_{sigma R}(alpha - sigma q) - alpha for a fixed drift q."""
    alpha = np.asarray(alpha, dtype=float)
    return prox(alpha - sigma * np.asarray(q, dtype=float), sigma) - alpha


def check_prox_contractivity(prox, alpha_hat, q, sigma, c_r, lo, hi,
                             n_samples=500, seed=0, name="prox contractivity"):
    """Sampled bound ||D(a) - D(a_hat)|| <= sigma C_R ||a - a_hat|| on [lo, hi].

    The sample box should sit inside the region the bound is claimed on.
    """
    rng = np.random.default_rng(seed)
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), alpha_hat.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), alpha_hat.shape)
    d_hat = prox_displacement(prox, alpha_hat, q, sigma)
    worst = 0.0
    for _ in range(n_samples):
        a = lo + (hi - lo) * rng.random(alpha_hat.shape)
        dist = float(np.linalg.norm(a - alpha_hat))
        if dist == 0.0:
            continue
        ratio = float(np.linalg.norm(prox_displacement(prox, a, q, sigma) - d_hat)) / dist
        worst = max(worst, ratio)
    bound = sigma * c_r * (1.0 + 1e-9) + 1e-15
    return CheckResult(name, worst, bound, worst <= bound)


def check_three_point_monotonicity(dim=6, curv_lo=0.5, curv_hi=4.0, n_matrices=5,
                                   n_samples=1000, seed=0, slack_tol=1e-10):
    """Three-point lower bound for quadratics with spectrum in [curv_lo, curv_hi].

    For H in that spectral band the slack of
        <H (z - xh), x - xh> >= curv_lo (1 - beta) ||x - xh||^2
                                - curv_hi / (4 beta) ||x - z||^2
    must stay above -slack_tol over sampled x, z, xh and beta in (0, 1].
    Besides random samples, each matrix gets targeted ones at the analytic
    near-equality configuration (slack curv_lo * beta * (1 - curv_lo/curv_hi),
    exactly zero when the band degenerates), so the bound is stressed at
    roundoff level rather than passed with slack to spare.
    """

    def slack(hmat, x, z, xh, beta):
        lhs = float((hmat @ (z - xh)) @ (x - xh))
        rhs = curv_lo * (1.0 - beta) * float((x - xh) @ (x - xh)) \
            - curv_hi / (4.0 * beta) * float((x - z) @ (x - z))
        return lhs - rhs

    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(n_matrices):
        qmat, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        lam = rng.uniform(curv_lo, curv_hi, size=dim)
        lam[0], lam[-1] = curv_lo, curv_hi  # pin the extremes so the band is exercised
        hmat = (qmat * lam) @ qmat.T
        for _ in range(n_samples):
            x, z, xh = rng.standard_normal((3, dim))
            beta = rng.uniform(1e-2, 1.0)
            worst = min(worst, slack(hmat, x, z, xh, beta))
        v = np.linalg.eigh(hmat)[1][:, 0]  # unit eigenvector of curv_lo
        for beta in (0.01, 0.1, 0.5, 1.0):
            xh = rng.standard_normal(dim)
            x = xh + v
            z = x - (2.0 * beta * curv_lo / curv_hi) * v
            worst = min(worst, slack(hmat, x, z, xh, beta))
    return CheckResult("three-point monotonicity slack", worst, -slack_tol,
                       worst >= -slack_tol, "metric is the worst slack; pass is metric >= bound")


def check_row_matrix_norms(n_rows=4, n_cols=16, n_samples=1000, seed=0, tol=1e-10):
    """Inner-product axioms and norm compatibility on the row-matrix space.

    Checks symmetry, bilinearity, and positivity of the Frobenius pairing,
    then the chain ||p M||_F <= ||p||_F ||M||_2 and ||M||_2 <= ||M||_F for
    random p and square M.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        p = rng.standard_normal((n_rows, n_cols))
        q = rng.standard_normal((n_rows, n_cols))
        r = rng.standard_normal((n_rows, n_cols))
        m = rng.standard_normal((n_cols, n_cols))
        a = rng.standard_normal()
        scale = max(abs(frob_inner(p, q)), frob_norm(p) ** 2, 1.0)
        worst = max(worst, abs(frob_inner(p, q) - frob_inner(q, p)) / scale)
        worst = max(worst, abs(frob_inner(a * p + r, q) - a * frob_inner(p, q) - frob_inner(r, q))
                    / (scale * (1.0 + abs(a))))
        if frob_inner(p, p) <= 0.0:
            worst = max(worst, 1.0)
        spec = float(np.linalg.norm(m, 2))
        worst = max(worst, (frob_norm(p @ m) - frob_norm(p) * spec) / max(frob_norm(p) * spec, 1.0))
        worst = max(worst, (spec - frob_norm(m)) / max(frob_norm(m), 1.0))
    if frob_norm(np.zeros((n_rows, n_cols))) != 0.0:
        worst = max(worst, 1.0)
    return CheckResult("row-matrix inner product and norms", worst, tol, worst <= tol)


class QuadraticBilevel(BilevelProblem):
    """Fully quadratic bilevel instance with closed-form limits.

    Inner energy ``0.5 ||B u - alpha c||^2 + 0.5 mu ||u||^2`` with a
    scalar parameter.  The inner solution is linear in alpha, so the
    reduced problem is a one-dimensional quadratic whose minimizer,
    solution map, and adjoint are explicit; see :meth:`solution`.
    """

    def __init__(self, b_mat, c, target, mu=0.1):
        super().__init__(target, n_alpha=1)
        self.b_mat = np.asarray(b_mat, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.mu = float(mu)
        if self.b_mat.shape != (self.c.size, self.n_u):
            raise ValueError(
                f"B has shape {self.b_mat.shape}, expected ({self.c.size}, {self.n_u})")

    def inner_value(self, u, alpha):
        u, alpha = self._check(u, alpha)
        r = self.b_mat @ u - alpha[0] * self.c
        return 0.5 * float(r @ r) + 0.5 * self.mu * float(u @ u)

    def inner_grad(self, u, alpha):
        u, alpha = self._check(u, alpha)
        return self.b_mat.T @ (self.b_mat @ u - alpha[0] * self.c) + self.mu * u

    def hess_operator(self, u, alpha):
        self._check(u, alpha)
        return lambda v: self.b_mat.T @ (self.b_mat @ v) + self.mu * v

    def mixed_rows(self, u, alpha):
        self._check(u, alpha)
        return -(self.b_mat.T @ self.c)[None, :]

    def solution(self):
        """Closed-form optimality triple (u_hat, p_hat, alpha_hat)."""
        h = self.b_mat.T @ self.b_mat + self.mu * np.eye(self.n_u)
        w = np.linalg.solve(h, self.b_mat.T @ self.c)
        alpha_hat = float(w @ self.b) / float(w @ w)
        return alpha_hat * w, w[None, :].copy(), np.array([alpha_hat])


def make_toy_problem(m=8, n=6, mu=0.1, seed=3):
    """A well-conditioned QuadraticBilevel whose optimum sits near alpha=1.3."""
    rng = np.random.default_rng(seed)
    b_mat = rng.standard_normal((m, n))
    c = rng.standard_normal(m)
    h = b_mat.T @ b_mat + mu * np.eye(n)
    w = np.linalg.solve(h, b_mat.T @ c)
    target = 1.3 * w + 0.05 * rng.standard_normal(n)
    return QuadraticBilevel(b_mat, c, target, mu)


def monitor_weights(steps, method, phi_u=1.0, phi_p=1.0):
    """Block weights of the testing/preconditioning norm for a method.

    The u block is weighted phi_u/tau and the alpha block 1/sigma; the
    adjoint block carries phi_p/theta for the inexact-adjoint method and
    drops out (weight zero) for the exact-adjoint one, whose
    preconditioner zeroes that block.
    """
    wu = phi_u / steps.tau
    wp = 0.0 if method == "fefb" else phi_p / steps.theta
    wa = 1.0 / steps.sigma
    return wu, wp, wa


def monitor_run(problem, method, steps, state, n_steps, solution,
                phi_u=1.0, phi_p=1.0, krylov=None):
    """Run a single-loop method, tracking the weighted distance to a solution.

    Returns ``(final_state, distances)`` with one distance per iterate
    including the start.
    """
    u_hat, p_hat, a_hat = solution
    wu, wp, wa = monitor_weights(steps, method, phi_u, phi_p)

    def dist(s):
        v = wu * float(np.sum((s.u - u_hat) ** 2)) + wa * float(np.sum((s.alpha - a_hat) ** 2))
        if wp != 0.0:
            v += wp * float(np.sum((s.p - p_hat) ** 2))
        return float(np.sqrt(v))

    out = [dist(state)]
    for _ in range(int(n_steps)):
        if method == "fefb":
            state = fefb_step(problem, state, steps, krylov)
        elif method == "fifb":
            state = fifb_step(problem, state, steps)
        else:
            raise ValueError(f"monitor_run only handles the single-loop methods, not {method!r}")
        out.append(dist(state))
    return state, np.asarray(out)


def max_increase(dist):
    """Largest single-step growth of a distance sequence (<= 0 when Fejer)."""
    d = np.asarray(dist, dtype=float)
    if d.size < 2:
        return 0.0
    return float(np.max(d[1:] - d[:-1]))


def geometric_rate(dist, tail=0.5, floor=1e-14):
    """Geometric-mean per-step contraction over the trailing part of a run.

    Values at or below ``floor`` are ignored so a sequence that hits
    machine zero does not drag the estimate to 0/0.
    """
    d = np.asarray(dist, dtype=float)
    start = int(len(d) * (1.0 - tail))
    ratios = [b / a for a, b in zip(d[start:-1], d[start + 1:]) if a > floor and b > floor]
    if not ratios:
        return 0.0
    return float(np.exp(np.mean(np.log(ratios))))


# ---------------------------------------------------------------------------
# Named suites, as run by the command-line verify subcommand.

def _small_problems(n=8, seed=11):
    b = phantom(n, seed)
    z_den = add_noise(b, 0.1, seed + 1)
    den = DenoisingProblem(z_den, b, n, gamma=0.1)
    dec = DeconvolutionProblem(add_noise(b, 0.005, seed + 2), b, n, gamma=0.1)
    return den, dec


def suite_derivatives():
    den, dec = _small_problems()
    rng = np.random.default_rng(7)
    out = []
    u = rng.uniform(0.0, 1.0, den.n_u)
    for res in check_inner_derivatives(den, u, np.array([0.04]), seed=1):
        res.name = "denoise " + res.name
        out.append(res)
    for res in check_inner_derivatives(dec, u, np.array([0.05, 0.2, 0.3, 0.4]), seed=2):
        res.name = "deconvolve " + res.name
        out.append(res)
    out.append(check_outer_gradient(den, seed=3))
    return out


def suite_hypergradient():
    """Adjoint-route hypergradients against re-solved finite differences.

    The FD step 2.5e-4 balances h^2 truncation against the inner solver's
    stopping error.  The weights are picked so that no image difference of
    the corresponding solution lands near the Huber threshold: the reduced
    objective's curvature kinks there and the central-difference expansion
    degrades even though both routes still agree in the limit.  The
    deconvolution instance uses a center-heavy blur: ring-heavy kernels
    leave the inner Hessian so ill-conditioned that the oracle's own error
    floor exceeds the tolerance checked here.
    """
    den, _ = _small_problems()
    h = 2.5e-4
    krylov = KrylovConfig(tol=1e-12)
    out = check_hypergradient(den, [np.array([a]) for a in (0.01, 0.02, 0.05, 0.07, 0.1)],
                              h=h, inner=ImplicitConfig(rho=1e-12, max_inner=200_000,
                                                        stop_patience=3),
                              krylov=krylov)
    n, seed = 8, 11
    b = phantom(n, seed)
    z = add_noise(convolve(blur_kernel([0.5, 0.2, 0.3]), b, n), 0.005, seed + 2)
    dec = DeconvolutionProblem(z, b, n, gamma=0.1)
    out += check_hypergradient(dec, [np.array([0.05, 0.5, 0.25, 0.25]),
                                     np.array([0.1, 0.45, 0.3, 0.2])],
                               h=h, inner=ImplicitConfig(rho=1e-13, max_inner=400_000,
                                                         stop_patience=3),
                               krylov=krylov)
    for res in out:
        res.name = res.name.replace("hypergradient", "adjoint vs finite-difference hypergradient")
    return out


def suite_contractivity():
    out = []
    # soft threshold with nonnegativity: drift balancing the l1 weight makes
    # the displacement constant, so any positive modulus works
    reg = Regularizer("l1_nonneg", beta=1.0)
    out.append(check_prox_contractivity(
        reg.prox, alpha_hat=np.array([0.5]), q=np.array([-1.0]), sigma=0.1, c_r=1e-6,
        lo=0.0, hi=2.0, n_samples=1000,
        name="shifted projection, balanced drift (constant displacement)"))
    # same prox with a drift that parks alpha_hat - sigma(q + beta) near zero:
    # both branches of the prox are exercised inside the sample box
    out.append(check_prox_contractivity(
        reg.prox, alpha_hat=np.array([0.5]), q=np.array([1.0]), sigma=0.1, c_r=5.0,
        lo=0.0, hi=2.0, n_samples=1000, name="shifted projection, active constraint"))
    # pure projection onto the nonnegative orthant, zero drift
    proj = Regularizer("l1_nonneg", beta=0.0)
    out.append(check_prox_contractivity(
        proj.prox, alpha_hat=np.array([0.3, 0.7]), q=np.zeros(2), sigma=0.2, c_r=1e-6,
        lo=0.0, hi=1.5, n_samples=1000, name="orthant projection, zero drift"))
    # smooth regularizer 0.5 c ||alpha||^2: prox is x / (1 + sigma c) and the
    # modulus is the gradient Lipschitz constant c
    c = 2.0
    smooth = lambda x, sigma: x / (1.0 + sigma * c)
    out.append(check_prox_contractivity(
        smooth, alpha_hat=np.array([0.2, -0.4, 0.1]), q=np.array([0.3, 0.0, -0.2]),
        sigma=0.15, c_r=c, lo=-1.0, hi=1.0, n_samples=1000,
        name="smooth quadratic regularizer"))
    return out


def suite_monotonicity():
    out = [check_three_point_monotonicity(seed=s) for s in (0, 1)]
    out.append(check_three_point_monotonicity(dim=12, curv_lo=0.05, curv_hi=40.0, seed=2))
    # degenerate band: the targeted samples reach exact equality, so the
    # slack here is pure roundoff
    out.append(check_three_point_monotonicity(curv_lo=2.0, curv_hi=2.0, seed=3))
    return out


def suite_norms():
    return [check_row_matrix_norms(seed=0),
            check_row_matrix_norms(n_rows=1, n_cols=64, seed=1),
            check_row_matrix_norms(n_rows=4, n_cols=64, seed=2)]


def suite_toy(tol_alpha=1e-8, slack_tol=1e-12):
    """Single-loop methods on the closed-form toy problem.

    Convergence of alpha to the analytic optimum, Fejer monotonicity of
    the weighted distance, a contraction-rate estimate below one, and
    fixed-point stillness of both steppers at the optimality triple.
    """
    problem = make_toy_problem()
    u_hat, p_hat, a_hat = problem.solution()
    krylov = KrylovConfig(tol=1e-13, max_iter=1000)
    out = []
    # steps sized against the Hessian spectrum [0.11, 24.2] of this instance
    cases = [
        ("fefb", StepSizes(tau=0.04, sigma=0.02), 6000),
        ("fifb", StepSizes(tau=0.04, sigma=0.02, theta=0.02), 8000),
    ]
    for method, steps, n_steps in cases:
        state0 = initial_state(problem, np.zeros(1),
                               inner=ImplicitConfig(rho=1e-15, max_inner=100_000), krylov=krylov)
        if method == "fifb":
            # start the adjoint at zero so its relaxation dynamics are exercised
            state0 = SolverState(state0.u, np.zeros_like(state0.p), state0.alpha)
        state, dist = monitor_run(problem, method, steps, state0, n_steps,
                                  (u_hat, p_hat, a_hat), krylov=krylov)
        err = float(np.linalg.norm(state.alpha - a_hat))
        out.append(CheckResult(f"{method} toy alpha error", err, tol_alpha, err <= tol_alpha))
        inc = max_increase(dist)
        out.append(CheckResult(f"{method} toy weighted-distance max increase", inc, slack_tol,
                               inc <= slack_tol, "Fejer monotonicity slack"))
        rate = geometric_rate(dist)
        out.append(CheckResult(f"{method} toy contraction rate", rate, 1.0, 0.0 <= rate < 1.0))
    # stillness at the optimality triple
    for method, steps in [("fefb", StepSizes(tau=0.1, sigma=0.05)),
                          ("fifb", StepSizes(tau=0.1, sigma=0.05, theta=0.1))]:
        state = SolverState(u_hat.copy(), p_hat.copy(), a_hat.copy())
        if method == "fefb":
            nxt = fefb_step(problem, state, steps, krylov)
        else:
            nxt = fifb_step(problem, state, steps)
        move = max(float(np.max(np.abs(nxt.u - u_hat))),
                   float(np.max(np.abs(nxt.p - p_hat))),
                   float(np.max(np.abs(nxt.alpha - a_hat))))
        out.append(CheckResult(f"{method} fixed point at the optimality triple", move, 1e-10,
                               move <= 1e-10))
    return out


SUITES = {
    "derivatives": suite_derivatives,
    "hypergradient": suite_hypergradient,
    "contractivity": suite_contractivity,
    "monotonicity": suite_monotonicity,
    "norms": suite_norms,
    "toy": suite_toy,
}


def run_suites(names=None):
    """Run the named suites (all by default); returns a flat result list."""
    if names is None:
        names = list(SUITES)
    out = []
    for name in names:
        if name not in SUITES:
            raise ValueError(f"unknown verify suite {name!r}; have {sorted(SUITES)}")
        out.extend(SUITES[name]())
    return out
