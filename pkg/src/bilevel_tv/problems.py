"""Bilevel learning problems.

Each problem couples a smooth inner energy F(u; alpha) with the outer
tracking objective J(u) = 0.5 ||u - b||^2 and an outer regularizer R on
the parameters.  Subclasses provide the inner value, gradient, Hessian
action, and the rows of the mixed second derivative d/dalpha of grad_u F;
everything downstream (solvers, adjoint systems) is expressed through
this interface.
"""

import numpy as np

from .grids import backward_diff, backward_diff_adjoint, blur_kernel, convolve, huber, kernel_basis
from .validation import check_length, positive


class Regularizer:
    """Outer regularizer with a closed-form proximal map.

    kind "zero" is the trivial regularizer.  kind "l1_nonneg" is
    ``beta * sum(alpha)`` plus the indicator of the nonnegative orthant;
    its prox is a shift followed by a projection.
    """

    def __init__(self, kind="zero", beta=0.0):
        if kind not in ("zero", "l1_nonneg"):
            raise ValueError(f"unknown regularizer kind {kind!r}")
        self.kind = kind
        self.beta = float(beta)

    def value(self, alpha):
        if self.kind == "zero":
            return 0.0
        alpha = np.asarray(alpha, dtype=float)
        if np.any(alpha < 0):
            return np.inf
        return self.beta * float(np.sum(alpha))

    def prox(self, x, sigma):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return x.copy()
        return np.maximum(x - sigma * self.beta, 0.0)


class BilevelProblem:
    """Base class; see the module docstring for the interface."""

    def __init__(self, target, n_alpha, regularizer=None):
        self.b = np.asarray(target, dtype=float).ravel().copy()
        self.n_u = self.b.size
        self.n_alpha = int(n_alpha)
        self.regularizer = Regularizer() if regularizer is None else regularizer

    def outer_value(self, u):
        d = u - self.b
        return 0.5 * float(d @ d)

    def outer_grad(self, u):
        return u - self.b

    def reg_value(self, alpha):
        return self.regularizer.value(alpha)

    def prox_alpha(self, x, sigma):
        return self.regularizer.prox(x, sigma)

    def inner_value(self, u, alpha):
        raise NotImplementedError

    def inner_grad(self, u, alpha):
        raise NotImplementedError

    def hess_operator(self, u, alpha):
        """Return ``v -> (d^2/du^2 F) v`` with state-dependent terms frozen."""
        raise NotImplementedError

    def hess_apply(self, u, alpha, v):
        return self.hess_operator(u, alpha)(check_length(v, self.n_u, "v"))

    def mixed_rows(self, u, alpha):
        """Rows of d/dalpha grad_u F as an (n_alpha, n_u) matrix."""
        raise NotImplementedError

    def _check(self, u, alpha):
        return (
            check_length(u, self.n_u, "u"),
            check_length(alpha, self.n_alpha, "alpha"),
        )


class DenoisingProblem(BilevelProblem):
    """Learn the scalar weight of a smoothed-TV denoiser.

    Inner energy: ``0.5 ||u - z||^2 + alpha * sum huber(D u)`` on an
    n-by-n grid, with D the backward-difference operator and no outer
    regularizer.
    """

    def __init__(self, z, target, n, gamma=1e-2):
        super().__init__(target, n_alpha=1)
        self.n = int(n)
        if self.n * self.n != self.n_u:
            raise ValueError(f"target length {self.n_u} does not match a {n}x{n} grid")
        self.z = check_length(z, self.n_u, "z").copy()
        self.gamma = positive(gamma, "gamma")

    def inner_value(self, u, alpha):
        u, alpha = self._check(u, alpha)
        d = u - self.z
        tv = float(np.sum(huber(backward_diff(u, self.n), self.gamma)))
        return 0.5 * float(d @ d) + float(alpha[0]) * tv

    def inner_grad(self, u, alpha):
        u, alpha = self._check(u, alpha)
        g1 = huber(backward_diff(u, self.n), self.gamma, order=1)
        return (u - self.z) + alpha[0] * backward_diff_adjoint(g1, self.n)

    def hess_operator(self, u, alpha):
        u, alpha = self._check(u, alpha)
        w = huber(backward_diff(u, self.n), self.gamma, order=2)
        a = float(alpha[0])
        n = self.n

        def apply(v):
            return v + a * backward_diff_adjoint(w * backward_diff(v, n), n)

        return apply

    def mixed_rows(self, u, alpha):
        u, alpha = self._check(u, alpha)
        g1 = huber(backward_diff(u, self.n), self.gamma, order=1)
        return backward_diff_adjoint(g1, self.n)[None, :]


class DeconvolutionProblem(BilevelProblem):
    """Learn a 5x5 blur kernel and TV weight for deblurring.

    ``alpha = (tv, center, cross, ring)``: the last three weights build
    the kernel K(alpha) (linear map, see ``blur_kernel``), and the inner
    energy is ``0.5 ||K(alpha) u - z||^2 + scale * tv * sum huber(D u)``.
    The outer regularizer is ``beta * ||alpha||_1`` plus nonnegativity.

    ``scale`` defaults to 0.01 on grids of side 128 or more and 0.1 on
    smaller ones.
    """

    def __init__(self, z, target, n, gamma=1e-2, scale=None, beta=0.01):
        super().__init__(target, n_alpha=4, regularizer=Regularizer("l1_nonneg", beta))
        self.n = int(n)
        if self.n * self.n != self.n_u:
            raise ValueError(f"target length {self.n_u} does not match a {n}x{n} grid")
        self.z = check_length(z, self.n_u, "z").copy()
        self.gamma = positive(gamma, "gamma")
        if scale is None:
            scale = 0.01 if self.n >= 128 else 0.1
        self.scale = positive(scale, "scale")
        self.beta = float(beta)
        self._basis = kernel_basis()

    def kernel(self, alpha):
        return blur_kernel(np.asarray(alpha, dtype=float)[1:])

    def inner_value(self, u, alpha):
        u, alpha = self._check(u, alpha)
        r = convolve(self.kernel(alpha), u, self.n) - self.z
        tv = float(np.sum(huber(backward_diff(u, self.n), self.gamma)))
        return 0.5 * float(r @ r) + self.scale * float(alpha[0]) * tv

    def inner_grad(self, u, alpha):
        u, alpha = self._check(u, alpha)
        k = self.kernel(alpha)
        r = convolve(k, u, self.n) - self.z
        g1 = huber(backward_diff(u, self.n), self.gamma, order=1)
        return convolve(k, r, self.n, adjoint=True) + self.scale * alpha[0] * backward_diff_adjoint(g1, self.n)

    def hess_operator(self, u, alpha):
        u, alpha = self._check(u, alpha)
        k = self.kernel(alpha)
        w = huber(backward_diff(u, self.n), self.gamma, order=2)
        c = self.scale * float(alpha[0])
        n = self.n

        def apply(v):
            kv = convolve(k, v, n)
            return convolve(k, kv, n, adjoint=True) + c * backward_diff_adjoint(w * backward_diff(v, n), n)

        return apply

    def mixed_rows(self, u, alpha):
        u, alpha = self._check(u, alpha)
        k = self.kernel(alpha)
        r = convolve(k, u, self.n) - self.z
        g1 = huber(backward_diff(u, self.n), self.gamma, order=1)
        rows = np.empty((self.n_alpha, self.n_u))
        rows[0] = self.scale * backward_diff_adjoint(g1, self.n)
        for i, ki in enumerate(self._basis):
            kiu = convolve(ki, u, self.n)
            rows[i + 1] = convolve(ki, r, self.n, adjoint=True) + convolve(k, kiu, self.n, adjoint=True)
        return rows
