import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duallaguerre import autodiff as ad
from duallaguerre.autodiff import Tensor, grad_check
from duallaguerre.graph import CsrMatrix, build_l_high, build_l_low, build_sym_laplacian, synth_graph
from duallaguerre.laguerre import (
    THETA_ALPHA_ZERO,
    alpha_of,
    cheby_basis,
    laguerre_basis,
    laguerre_poly_scalar,
    recurrence_coefficients,
    theta_of,
)

from conftest import random_graph

mpmath.mp.dps = 40


def series_monic(x, alpha, k):
    """(-1)^k k! * sum_i (-1)^i C(k+alpha, k-i) x^i / i!, in 40-digit arithmetic."""
    x, a = mpmath.mpf(x), mpmath.mpf(alpha)
    s = mpmath.fsum(
        (-1) ** i * mpmath.binomial(k + a, k - i) * x ** i / mpmath.factorial(i) for i in range(k + 1)
    )
    return (-1) ** k * mpmath.factorial(k) * s


# ---------------------------------------------------------------- alpha map


def test_alpha_of_values():
    assert alpha_of(math.log(math.e - 1)) == pytest.approx(0.0, abs=1e-15)
    assert THETA_ALPHA_ZERO == pytest.approx(0.541324854612918, abs=1e-14)
    assert alpha_of(0.0) == pytest.approx(-1 + math.log(2), abs=1e-15)
    assert alpha_of(-30.0) > -1.0
    assert alpha_of(-30.0) + 1.0 == pytest.approx(9.357622968840175e-14, rel=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.floats(-30, 30))
def test_alpha_strictly_above_minus_one(theta):
    a = alpha_of(theta)
    assert a > -1.0
    if a > -0.999:
        assert theta_of(a) == pytest.approx(theta, abs=1e-9)


def test_alpha_tensor_grad_is_sigmoid():
    th = Tensor([[0.3]], requires_grad=True)
    with ad.Tape():
        ad.backward(alpha_of(th))
    assert th.grad[0, 0] == pytest.approx(1 / (1 + math.exp(-0.3)), rel=1e-14)


# ---------------------------------------------------------------- scalar recurrence


def test_scalar_base_cases():
    assert laguerre_poly_scalar(0.7, 0.3, 0) == 1.0
    assert laguerre_poly_scalar(0.7, 0.3, 1) == pytest.approx(0.7 - 1.3)
    b1, c1 = recurrence_coefficients(0.0, 1)
    assert (b1, c1) == (3.0, 1.0)
    assert laguerre_poly_scalar(1.0, 0.0, 2) == -1.0


def test_scalar_rejects_bad_alpha():
    with pytest.raises(ValueError):
        laguerre_poly_scalar(0.5, -1.0, 3)


@pytest.mark.parametrize("alpha", [-0.9, -0.5, 0.0, 1.7])
def test_scalar_matches_series(alpha):
    for k in range(11):
        for x in np.linspace(0.0, 2.0, 101):
            exact = series_monic(x, alpha, k)
            got = laguerre_poly_scalar(float(x), alpha, k)
            assert abs(got - exact) <= 1e-9 * abs(exact), (k, x)


def test_scalar_matches_scipy_classical():
    from scipy.special import eval_genlaguerre

    for k in range(8):
        mono = laguerre_poly_scalar(0.8, 0.4, k)
        assert mono == pytest.approx((-1) ** k * math.factorial(k) * eval_genlaguerre(k, 0.4, 0.8), rel=1e-10)


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.999, 50.0), st.integers(1, 50))
def test_c_k_positive(alpha, k):
    assert recurrence_coefficients(alpha, k)[1] > 0


# ---------------------------------------------------------------- matrix basis


def test_basis_k1_is_layer_norm(rng):
    ds = random_graph(10, 0.3, 1)
    X = Tensor(rng.standard_normal((10, 4)))
    out = laguerre_basis(build_l_low(build_sym_laplacian(ds)), X, THETA_ALPHA_ZERO, 1)
    np.testing.assert_array_equal(out.value, ad.layer_norm(X).value)


def test_basis_single_feature_degenerate():
    L = CsrMatrix.identity(1)
    out = laguerre_basis(L, Tensor([[3.0]]), THETA_ALPHA_ZERO, 4)
    assert out.shape == (1, 4)
    np.testing.assert_array_equal(out.value, 0.0)


def test_basis_shape_and_errors(rng):
    L = build_l_low(build_sym_laplacian(random_graph(6, 0.5, 2)))
    assert laguerre_basis(L, Tensor(rng.standard_normal((6, 3))), 0.2, 5).shape == (6, 15)
    with pytest.raises(ValueError):
        laguerre_basis(L, Tensor(np.ones((6, 3))), 0.2, 0)
    with pytest.raises(ValueError):
        laguerre_basis(L, Tensor(np.ones((5, 3))), 0.2, 2)


def _eigen_oracle(L: CsrMatrix, X: np.ndarray, alpha: float, K: int) -> list[np.ndarray]:
    lam, U = np.linalg.eigh(L.to_dense())
    coeffs = U.T @ X
    return [U @ (np.array([laguerre_poly_scalar(l, alpha, k) for l in lam])[:, None] * coeffs)
            for k in range(K)]


def test_basis_unnormalized_matches_eigen_oracle_two_node(twonode, rng):
    L = build_l_low(build_sym_laplacian(twonode))
    X = rng.standard_normal((2, 2))
    out = laguerre_basis(L, Tensor(X), THETA_ALPHA_ZERO, 3, normalize=False).value
    for k, ref in enumerate(_eigen_oracle(L, X, 0.0, 3)):
        np.testing.assert_allclose(out[:, 2 * k:2 * k + 2], ref, rtol=1e-10, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 10), seed=st.integers(0, 999), alpha=st.floats(-0.95, 2.0),
       high=st.booleans())
def test_basis_oracle_equivalence(n, seed, alpha, high):
    ds = random_graph(n, 0.5, seed)
    Ls = build_sym_laplacian(ds)
    L = build_l_high(Ls) if high else build_l_low(Ls)
    X = np.random.default_rng(seed).standard_normal((n, 2))
    K = 6
    out = laguerre_basis(L, Tensor(X), theta_of(alpha), K, normalize=False).value
    for k, ref in enumerate(_eigen_oracle(L, X, alpha, K)):
        scale = max(np.abs(ref).max(), 1.0)
        np.testing.assert_allclose(out[:, 2 * k:2 * k + 2], ref, rtol=0, atol=1e-10 * scale)


def test_normalization_bounds_growth():
    ds = synth_graph(100, 3, 0.5, 6, seed=0)
    L = build_l_low(build_sym_laplacian(ds))
    X = Tensor(ds.features)
    F, K = ds.feature_dim, 10
    th = theta_of(-0.5)
    norm = laguerre_basis(L, X, th, K).value
    raw = laguerre_basis(L, X, th, K, normalize=False).value
    norm_mag = [np.abs(norm[:, k * F:(k + 1) * F]).max() for k in range(K)]
    raw_mag = [np.abs(raw[:, k * F:(k + 1) * F]).max() for k in range(K)]
    assert max(norm_mag) < 20
    growth = np.array(raw_mag[1:]) / np.array(raw_mag[:-1])
    assert raw_mag[-1] > 1e4 * raw_mag[1]
    assert np.all(growth[2:] > 1.5)


def test_theta_gradient_through_coefficients(rng):
    ds = random_graph(12, 0.4, 4)
    L = build_l_low(build_sym_laplacian(ds))
    X = Tensor(rng.standard_normal((12, 3)), requires_grad=True)
    th = Tensor([[0.1]], requires_grad=True)
    R = rng.standard_normal((12, 12))
    err = grad_check(lambda: (laguerre_basis(L, X, th, 4) * R).sum(), [th, X], h=1e-5)
    assert err < 1e-4


def test_theta_gradient_unnormalized(rng):
    L = build_l_high(build_sym_laplacian(random_graph(8, 0.5, 7)))
    X = Tensor(rng.standard_normal((8, 2)))
    th = Tensor([[-0.4]], requires_grad=True)
    R = rng.standard_normal((8, 10))
    assert grad_check(lambda: (laguerre_basis(L, X, th, 5, normalize=False) * R).sum(), [th]) < 1e-6


# ---------------------------------------------------------------- chebyshev


def test_cheby_k1_identity(rng):
    L = build_sym_laplacian(random_graph(5, 0.5, 0))
    X = rng.standard_normal((5, 3))
    np.testing.assert_array_equal(cheby_basis(L, Tensor(X), 1).value, X)


def test_cheby_two_node(twonode, rng):
    L = build_sym_laplacian(twonode)
    X = rng.standard_normal((2, 3))
    out = cheby_basis(L, Tensor(X), 3).value
    Lt = np.array([[0.0, -1.0], [-1.0, 0.0]])
    np.testing.assert_allclose(out[:, 3:6], Lt @ X, atol=1e-15)
    np.testing.assert_allclose(out[:, 6:9], X, atol=1e-15)


def test_cheby_trig_oracle():
    # diagonal operator with L_sym - I = diag(cos t)
    t = np.linspace(0.0, np.pi, 17)
    L = CsrMatrix.from_scipy(np.diag(np.cos(t) + 1.0))
    K = 9
    out = cheby_basis(L, Tensor(np.ones((t.size, 1))), K).value
    for k in range(K):
        ref = np.cos(k * t)
        np.testing.assert_allclose(out[:, k], ref, rtol=1e-10, atol=1e-12)


def test_cheby_grad(rng):
    L = build_sym_laplacian(random_graph(9, 0.4, 3))
    X = Tensor(rng.standard_normal((9, 2)), requires_grad=True)
    R = rng.standard_normal((9, 8))
    assert grad_check(lambda: (cheby_basis(L, X, 4) * R).sum(), [X]) < 1e-6
