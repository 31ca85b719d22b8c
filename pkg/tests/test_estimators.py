"""Estimator API surface and small end-to-end fits."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bilevel_tv.estimators import KernelDeblurrer, TVDenoiser
from bilevel_tv.grids import add_noise, blur_kernel, convolve, phantom

N = 16


def noisy_pair():
    b = phantom(N, seed=71).reshape(N, N)
    z = add_noise(b, 0.1, seed=72).reshape(N, N)
    return z, b


def blurry_pair(n=8):
    b = phantom(n, seed=73)
    z = add_noise(convolve(blur_kernel([0.15, 0.1, 0.75]), b, n), 0.005, seed=74)
    return z.reshape(n, n), b.reshape(n, n)


def test_get_set_params_round_trip():
    est = TVDenoiser(sigma=1e-7, n_steps=5)
    params = est.get_params()
    assert params["sigma"] == 1e-7
    est2 = TVDenoiser().set_params(**params)
    assert est2.get_params() == params
    cloned = clone(est)
    assert cloned.get_params() == params


def test_transform_requires_fit():
    z, _ = noisy_pair()
    with pytest.raises(NotFittedError):
        TVDenoiser().transform(z)


def test_denoiser_fit_learns_positive_weight():
    z, b = noisy_pair()
    est = TVDenoiser(n_steps=3000, trace_every=1000)
    est.fit(z, b)
    assert est.n_ == N
    assert est.alpha_.shape == (1,)
    assert est.alpha_[0] > 0.0
    assert est.image_.shape == (N, N)
    err_fit = np.linalg.norm(est.image_ - b) / np.linalg.norm(b)
    err_noisy = np.linalg.norm(z - b) / np.linalg.norm(b)
    assert err_fit < err_noisy
    assert est.resource_ > 0
    assert len(est.trace_.rows) >= 2


def test_denoiser_transform_applies_learned_weight():
    z, b = noisy_pair()
    est = TVDenoiser(n_steps=2000, trace_every=500).fit(z, b)
    out = est.transform(z)
    assert out.shape == (N, N)
    # transforming the training input reproduces a denoised image
    err = np.linalg.norm(out - b) / np.linalg.norm(b)
    assert err < np.linalg.norm(z - b) / np.linalg.norm(b)


def test_denoiser_accepts_flat_input():
    z, b = noisy_pair()
    est = TVDenoiser(n_steps=100, trace_every=50).fit(z.ravel(), b.ravel())
    assert est.n_ == N


def test_fit_rejects_mismatched_shapes():
    z, _ = noisy_pair()
    small = np.zeros((8, 8))
    with pytest.raises(ValueError):
        TVDenoiser(n_steps=10).fit(z, small)


def test_deblurrer_fit_exposes_kernel():
    z, b = blurry_pair()
    est = KernelDeblurrer(n_steps=500, trace_every=250)
    est.fit(z, b)
    assert est.alpha_.shape == (4,)
    assert np.all(est.alpha_ >= 0.0)
    assert est.kernel_.shape == (5, 5)
    assert est.kernel_.sum() == pytest.approx(est.alpha_[1:].sum(), rel=1e-12)


def test_deblurrer_implicit_method_runs():
    z, b = blurry_pair()
    est = KernelDeblurrer(method="implicit", n_steps=3, trace_every=1)
    est.fit(z, b)
    assert est.alpha_.shape == (4,)
