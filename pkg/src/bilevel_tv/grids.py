"""Square-grid image primitives.

Images are flat float arrays of length n*n in row-major order: pixel
(i, j) of an n-by-n image sits at index i*n + j.  Difference fields
stack the full i-direction block of length n*n ahead of the j-direction
block.
"""

import numpy as np

# Upper bound on the squared spectral norm of the backward-difference
# operator, valid on every grid size.
DIFF_NORM_SQ_BOUND = 8.0

# 5x5 blur-kernel layout: corners are pinned to zero, weights[0] fills the
# center cell, weights[1] is split over the four edge-adjacent cells, and
# weights[2] is split evenly over the remaining sixteen cells.
_CROSS = ((1, 2), (3, 2), (2, 1), (2, 3))
_CORNERS = ((0, 0), (0, 4), (4, 0), (4, 4))


def backward_diff(u, n):
    """Backward differences with a zero (Dirichlet) boundary.

    Parameters
    ----------
    u : ndarray
        Flat image of length ``n * n``.
    n : int
        Side length of the grid.

    Returns
    -------
    ndarray
        Field of length ``2 * n * n``, i-direction differences first.
        The first row (column) of each block copies the image itself,
        matching an image extended by zero outside the grid.
    """
    x = u.reshape(n, n)
    di = x.copy()
    di[1:, :] -= x[:-1, :]
    dj = x.copy()
    dj[:, 1:] -= x[:, :-1]
    return np.concatenate([di.ravel(), dj.ravel()])


def backward_diff_adjoint(g, n):
    """Adjoint of :func:`backward_diff`, mapping a field back to an image."""
    nn = n * n
    di = g[:nn].reshape(n, n)
    dj = g[nn:].reshape(n, n)
    out = di.copy()
    out[:-1, :] -= di[1:, :]
    out[:, :-1] -= dj[:, 1:]
    out += dj
    return out.ravel()


def huber(x, gamma, order=0):
    """Smoothed absolute value and its first two derivatives.

    The penalty is twice continuously differentiable, equals
    ``|x| - gamma/3`` outside ``[-gamma, gamma]``, and has curvature in
    ``[0, 2/gamma]``.  ``order`` selects the value (0), the derivative
    (1), or the second derivative (2); the input may be a scalar or an
    array.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    inner = a <= gamma
    if order == 0:
        return np.where(inner, a * a / gamma - a**3 / (3 * gamma * gamma), a - gamma / 3)
    if order == 1:
        return np.where(inner, 2 * x / gamma - x * a / (gamma * gamma), np.sign(x))
    if order == 2:
        return np.where(inner, 2 / gamma - 2 * a / (gamma * gamma), 0.0)
    raise ValueError("order must be 0, 1 or 2")


def blur_kernel(weights):
    """Assemble the 5x5 kernel for weights (center, cross, ring).

    The map is linear in the weights and the kernel entries sum to
    ``weights[0] + weights[1] + weights[2]``.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (3,):
        raise ValueError(f"expected 3 kernel weights, got shape {w.shape}")
    k = np.full((5, 5), w[2] / 16.0)
    for ij in _CORNERS:
        k[ij] = 0.0
    for ij in _CROSS:
        k[ij] = w[1] / 4.0
    k[2, 2] = w[0]
    return k


def kernel_basis():
    """Kernels of the unit weight vectors; the derivative of the kernel map."""
    return [blur_kernel(e) for e in np.eye(3)]


def convolve(kernel, u, n, adjoint=False):
    """Convolve a flat image with a 5x5 kernel, zero padding at the boundary.

    Parameters
    ----------
    kernel : ndarray
        5x5 kernel.
    u : ndarray
        Flat image of length ``n * n``.
    n : int
        Side length.
    adjoint : bool
        Apply the transpose operator (cross-correlation) instead.  The
        two coincide for kernels symmetric under point reflection, which
        :func:`blur_kernel` always produces.

    Returns
    -------
    ndarray
        Flat image of length ``n * n``.
    """
    x = u.reshape(n, n)
    pad = np.zeros((n + 4, n + 4))
    pad[2:-2, 2:-2] = x
    out = np.zeros((n, n))
    for a in range(5):
        for b in range(5):
            w = kernel[a, b]
            if w == 0.0:
                continue
            if adjoint:
                out += w * pad[a:a + n, b:b + n]
            else:
                out += w * pad[4 - a:4 - a + n, 4 - b:4 - b + n]
    return out.ravel()


def phantom(n, seed=0):
    """Piecewise-constant test image with random rectangles and disks.

    Values lie in [0, 1]; the image is deterministic for a fixed
    ``(n, seed)`` pair.  Grids smaller than 8 pixels per side are
    rejected.
    """
    if n < 8:
        raise ValueError("phantom needs n >= 8")
    rng = np.random.default_rng(seed)
    img = np.full((n, n), 0.15)
    ii, jj = np.mgrid[0:n, 0:n]
    for _ in range(5):
        i0, i1 = np.sort(rng.integers(0, n, size=2))
        j0, j1 = np.sort(rng.integers(0, n, size=2))
        img[i0:i1 + 1, j0:j1 + 1] = rng.uniform(0.0, 1.0)
    for _ in range(3):
        ci, cj = rng.integers(0, n, size=2)
        r = int(rng.integers(n // 8, n // 3 + 1))
        img[(ii - ci) ** 2 + (jj - cj) ** 2 <= r * r] = rng.uniform(0.0, 1.0)
    return img.ravel()


def add_noise(u, sigma, seed=0):
    """Add white Gaussian noise of standard deviation ``sigma``."""
    rng = np.random.default_rng(seed)
    return np.asarray(u, dtype=float) + sigma * rng.standard_normal(np.shape(u))
