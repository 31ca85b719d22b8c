"""Scikit-learn style estimators over the bilevel solvers.

``fit(X, y)`` learns the regularization parameters from one observed
image X and its ground truth y; ``transform(X)`` restores new images by
solving the inner problem at the learned parameters.  Hyperparameter
defaults are tuned for 32x32 images; larger grids usually want smaller
sigma and more steps.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .adjoint import KrylovConfig
from .grids import blur_kernel
from .problems import DeconvolutionProblem, DenoisingProblem
from .solvers import ImplicitConfig, StepSizes, run, solve_inner
from .validation import as_flat_image


class _ImageLearnerMixin(TransformerMixin):
    """Shared fit/transform plumbing; subclasses build the problem."""

    def fit(self, X, y):
        z, n = as_flat_image(X, "X")
        b, nb = as_flat_image(y, "y")
        if nb != n:
            raise ValueError(f"X is {n}x{n} but y is {nb}x{nb}")
        problem = self._build_problem(z, b, n)
        steps = StepSizes(self.tau, self.sigma, self.theta)
        state, trace = run(
            problem, self.method, steps=steps, n_steps=self.n_steps,
            trace_every=self.trace_every, alpha0=self._alpha0(),
            implicit=self._inner_config(), krylov=self._krylov_config(),
        )
        self.n_ = n
        self.alpha_ = state.alpha.copy()
        self.image_ = state.u.reshape(n, n).copy()
        self.trace_ = trace
        self.flags_ = list(state.flags)
        self.resource_ = state.resource
        return self

    def transform(self, X):
        if not hasattr(self, "alpha_"):
            raise NotFittedError("this estimator is not fitted yet; call fit first")
        z, n = as_flat_image(X, "X")
        problem = self._build_problem(z, np.zeros(n * n), n)
        u, _ = solve_inner(problem, self.alpha_, config=self._inner_config())
        return u.reshape(n, n)

    def _inner_config(self):
        return ImplicitConfig(rho=self.inner_rho, max_inner=self.inner_max_iter,
                              stop_patience=self.stop_patience, sigma=self.implicit_sigma,
                              line_search=self.line_search)

    def _krylov_config(self):
        return KrylovConfig(method=self.krylov_method, tol=self.krylov_tol,
                            max_iter=self.krylov_max_iter)


class TVDenoiser(_ImageLearnerMixin, BaseEstimator):
    """Denoiser that learns its total-variation weight from one example pair.

    Parameters mirror the solver settings: ``method`` picks the
    exact-adjoint ("fefb"), inexact-adjoint ("fifb"), or implicit
    baseline ("implicit") scheme.  After ``fit``, ``alpha_`` holds the
    learned weight and ``transform`` denoises new images with it.
    The defaults suit "fifb"; the implicit baseline re-solves the inner
    problem every outer step, so give it n_steps in the hundreds.
    """

    def __init__(self, gamma=1e-2, method="fifb", tau=2e-3, sigma=2e-6, theta=2e-4,
                 n_steps=20000, alpha0=0.0, trace_every=100, inner_rho=1e-12,
                 inner_max_iter=500000, stop_patience=3, implicit_sigma=5e-5,
                 line_search=True, krylov_method="cg", krylov_tol=1e-10,
                 krylov_max_iter=10000):
        self.gamma = gamma
        self.method = method
        self.tau = tau
        self.sigma = sigma
        self.theta = theta
        self.n_steps = n_steps
        self.alpha0 = alpha0
        self.trace_every = trace_every
        self.inner_rho = inner_rho
        self.inner_max_iter = inner_max_iter
        self.stop_patience = stop_patience
        self.implicit_sigma = implicit_sigma
        self.line_search = line_search
        self.krylov_method = krylov_method
        self.krylov_tol = krylov_tol
        self.krylov_max_iter = krylov_max_iter

    def _build_problem(self, z, b, n):
        return DenoisingProblem(z, b, n, gamma=self.gamma)

    def _alpha0(self):
        return np.atleast_1d(np.asarray(self.alpha0, dtype=float))


class KernelDeblurrer(_ImageLearnerMixin, BaseEstimator):
    """Deblurrer that learns a 5x5 blur kernel and TV weight jointly.

    ``alpha_`` is (tv, center, cross, ring); ``kernel_`` is the learned
    5x5 kernel.  ``scale=None`` picks the default TV scaling for the
    grid size; ``beta`` weights the l1 penalty keeping the kernel sparse
    and nonnegative.
    """

    def __init__(self, gamma=1e-2, scale=None, beta=0.01, method="fifb", tau=5e-4,
                 sigma=3e-6, theta=5e-5, n_steps=150000, alpha0=(0.01, 1 / 3, 1 / 3, 1 / 3),
                 trace_every=500, inner_rho=1e-9, inner_max_iter=200000,
                 stop_patience=1, implicit_sigma=7.5e-5, line_search=False,
                 krylov_method="cg", krylov_tol=1e-5, krylov_max_iter=2000):
        self.gamma = gamma
        self.scale = scale
        self.beta = beta
        self.method = method
        self.tau = tau
        self.sigma = sigma
        self.theta = theta
        self.n_steps = n_steps
        self.alpha0 = alpha0
        self.trace_every = trace_every
        self.inner_rho = inner_rho
        self.inner_max_iter = inner_max_iter
        self.stop_patience = stop_patience
        self.implicit_sigma = implicit_sigma
        self.line_search = line_search
        self.krylov_method = krylov_method
        self.krylov_tol = krylov_tol
        self.krylov_max_iter = krylov_max_iter

    def _build_problem(self, z, b, n):
        return DeconvolutionProblem(z, b, n, gamma=self.gamma, scale=self.scale, beta=self.beta)

    def _alpha0(self):
        return np.asarray(self.alpha0, dtype=float)

    def fit(self, X, y):
        super().fit(X, y)
        self.kernel_ = blur_kernel(self.alpha_[1:])
        return self
