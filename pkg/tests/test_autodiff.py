import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from duallaguerre import autodiff as ad
from duallaguerre.autodiff import AdamState, NonFiniteError, Tape, Tensor, backward, grad_check
from duallaguerre.graph import CsrMatrix, build_sym_laplacian

from conftest import random_graph


def param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def weighted(out: Tensor, seed=99) -> Tensor:
    """Scalar sum(out * R) with fixed random R, so every output entry matters."""
    R = np.random.default_rng(seed).standard_normal(out.shape)
    return (out * R).sum()


# ---------------------------------------------------------------- matmul / spmm


def test_matmul_values():
    M = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(2)), Tensor(M)).value, M)
    np.testing.assert_array_equal(ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).value, [[11.0]])
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_grad(rng):
    a, b = param(rng, 5, 4), param(rng, 4, 3)
    assert grad_check(lambda: weighted(ad.matmul(a, b)), [a, b]) < 1e-6


def test_spmm_identity_and_kernel(twonode):
    X = np.random.default_rng(0).standard_normal((4, 3))
    np.testing.assert_array_equal(ad.spmm(CsrMatrix.identity(4), Tensor(X)).value, X)
    L = build_sym_laplacian(twonode)
    np.testing.assert_array_equal(ad.spmm(L, Tensor([[1.0], [1.0]])).value, [[0.0], [0.0]])


def test_spmm_matches_dense_and_grads(rng):
    L = build_sym_laplacian(random_graph(25, 0.2, 8))
    x = param(rng, 25, 3)
    np.testing.assert_allclose(ad.spmm(L, x).value, L.to_dense() @ x.value, rtol=0, atol=1e-12)
    assert grad_check(lambda: weighted(ad.spmm(L, x)), [x]) < 1e-6


def test_spmm_backward_uses_transpose(rng):
    m = CsrMatrix.from_scipy(np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 3.0]]))
    x = param(rng, 3, 2)
    with Tape():
        backward(ad.spmm(m, x).sum())
    np.testing.assert_allclose(x.grad, m.to_dense().T @ np.ones((2, 2)))
    assert grad_check(lambda: weighted(ad.spmm(m, x)), [x]) < 1e-6


# ---------------------------------------------------------------- elementwise


def test_relu():
    np.testing.assert_array_equal(ad.relu(Tensor([[-1.0, 0.0, 2.0]])).value, [[0.0, 0.0, 2.0]])
    x = Tensor([[0.5, 3.0]], requires_grad=True)
    with Tape():
        out = ad.relu(x)
        backward(out.sum())
    np.testing.assert_array_equal(out.value, x.value)
    np.testing.assert_array_equal(x.grad, [[1.0, 1.0]])


def test_relu_grad_away_from_zero(rng):
    v = rng.standard_normal((6, 5))
    v[np.abs(v) < 0.1] = 0.5
    x = Tensor(v, requires_grad=True)
    assert grad_check(lambda: weighted(ad.relu(x)), [x]) < 1e-6


def test_dropout_eval_and_p0(rng):
    x = param(rng, 3, 4)
    assert ad.dropout(x, 0.5, training=False) is x
    with Tape():
        out = ad.dropout(x, 0.0, training=True, rng=rng)
        backward(out.sum())
    np.testing.assert_array_equal(out.value, x.value)
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))
    with pytest.raises(ValueError):
        ad.dropout(x, 1.0, training=True, rng=rng)


def test_dropout_statistics():
    x = Tensor(np.ones((100, 1000)))
    out = ad.dropout(x, 0.5, training=True, rng=np.random.default_rng(0)).value
    frac = np.mean(out != 0)
    assert 0.49 <= frac <= 0.51
    assert abs(out.mean() - 1.0) < 0.02
    assert set(np.unique(out)) == {0.0, 2.0}


def test_dropout_backward_reuses_mask(rng):
    x = param(rng, 4, 6)
    with Tape():
        out = ad.dropout(x, 0.3, training=True, rng=np.random.default_rng(5))
        backward(out.sum())
    np.testing.assert_array_equal(x.grad, out.value / x.value)


def test_layer_norm_values():
    np.testing.assert_array_equal(ad.layer_norm(Tensor([[5.0, 5.0, 5.0]]), 1e-5).value, [[0.0, 0.0, 0.0]])
    out = ad.layer_norm(Tensor([[1.0, -1.0]]), 1e-5).value
    np.testing.assert_allclose(out, np.array([[1.0, -1.0]]) * math.sqrt(1 / (1 + 1e-5)), rtol=1e-15)


def test_layer_norm_row_stats(rng):
    y = ad.layer_norm(Tensor(rng.standard_normal((5, 7)) * 30 + 4), 1e-5).value
    np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), 1, atol=1e-6)


def test_layer_norm_grad(rng):
    x = param(rng, 6, 8)
    assert grad_check(lambda: weighted(ad.layer_norm(x, 1e-5)), [x]) < 1e-5


def test_layer_norm_chain_grad(rng):
    x, w = param(rng, 6, 5), param(rng, 5, 5)
    f = lambda: weighted(ad.layer_norm(ad.matmul(ad.layer_norm(x), w)))
    assert grad_check(f, [x, w], h=1e-5) < 1e-5


def test_concat_cols(rng):
    a, b = Tensor([[1.0], [2.0]]), Tensor([[3.0], [4.0]])
    np.testing.assert_array_equal(ad.concat_cols([a, b]).value, [[1, 3], [2, 4]])
    assert ad.concat_cols([a]) is a
    with pytest.raises(ValueError):
        ad.concat_cols([a, Tensor([[1.0]])])


def test_concat_backward_slices_exactly(rng):
    parts = [param(rng, 4, w) for w in (2, 3, 1)]
    G = rng.standard_normal((4, 6))
    with Tape():
        out = ad.concat_cols(parts)
        backward((out * G).sum())
    np.testing.assert_array_equal(np.concatenate([p.grad for p in parts], axis=1), G)


def test_log_softmax_nll_values():
    loss = ad.log_softmax_nll(Tensor([[0.0, 0.0]]), [0], [0])
    assert loss.item() == pytest.approx(math.log(2), abs=1e-15)
    loss = ad.log_softmax_nll(Tensor([[1000.0, 0.0]]), [0], [0])
    assert np.isfinite(loss.item()) and loss.item() == pytest.approx(0.0, abs=1e-300)
    with pytest.raises(ValueError, match="empty"):
        ad.log_softmax_nll(Tensor([[0.0, 0.0]]), [0], np.array([False]))


def test_log_softmax_nll_grad(rng):
    x = param(rng, 7, 4)
    labels = rng.integers(0, 4, 7)
    mask = np.array([1, 4, 6])
    assert grad_check(lambda: ad.log_softmax_nll(x, labels, mask), [x]) < 1e-6


def test_log_softmax_normalized(rng):
    lp = ad.log_softmax(Tensor(rng.standard_normal((9, 5)) * 50)).value
    np.testing.assert_allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-12)


def test_softplus():
    assert ad.softplus(Tensor(0.0)).item() == pytest.approx(math.log(2), abs=1e-15)
    assert ad.softplus(Tensor(50.0)).item() == pytest.approx(50.0, abs=1e-15)
    assert np.isfinite(ad.softplus(Tensor(1000.0)).item())
    x = Tensor(0.0, requires_grad=True)
    with Tape():
        backward(ad.softplus(x))
    assert x.grad[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert grad_check(lambda: ad.softplus(x), [x]) < 1e-8


def test_elementwise_broadcast_grads(rng):
    x, s, row = param(rng, 4, 3), param(rng, 1, 1), param(rng, 1, 3)
    assert grad_check(lambda: weighted(x * s - row + 2.0 * x), [x, s, row]) < 1e-6


# ---------------------------------------------------------------- backward


def test_backward_sum_is_ones(rng):
    x = param(rng, 3, 2)
    with Tape():
        backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((3, 2)))


def test_backward_fanout_accumulates(rng):
    x = param(rng, 2, 2)
    with Tape():
        y = x * 1.0
        backward((y + y).sum())
    np.testing.assert_array_equal(x.grad, 2 * np.ones((2, 2)))


def test_backward_rejects_nonscalar(rng):
    x = param(rng, 2, 2)
    with Tape():
        with pytest.raises(ValueError, match="scalar"):
            backward(x * 2.0)


def test_backward_deterministic(rng):
    x, w = param(rng, 5, 4), param(rng, 4, 3)
    with Tape() as tape:
        loss = ad.log_softmax_nll(ad.layer_norm(ad.matmul(x, w)), [0, 1, 2, 0, 1], [0, 2, 3])
        tape.backward(loss)
        g1 = (x.grad.copy(), w.grad.copy())
        x.zero_grad(), w.zero_grad()
        tape.backward(loss)
    np.testing.assert_array_equal(g1[0], x.grad)
    np.testing.assert_array_equal(g1[1], w.grad)


def test_no_tape_no_recording(rng):
    x = param(rng, 2, 2)
    y = x * 2.0
    assert not y.requires_grad and y.is_leaf


# ---------------------------------------------------------------- adam


def test_adam_zero_gradient_no_change():
    p = Tensor(np.array([[1.0, -2.0]]), requires_grad=True)
    st_ = AdamState()
    ad.adam_step([p], [np.zeros((1, 2))], st_)
    np.testing.assert_array_equal(p.value, [[1.0, -2.0]])
    assert st_.step == 1


def test_adam_first_step():
    p = Tensor(np.zeros((2, 3)), requires_grad=True)
    ad.adam_step([p], [np.ones((2, 3))], AdamState(lr=0.01))
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    np.testing.assert_allclose(p.value, -0.01 / (1 + 1e-8), rtol=1e-15)


def test_adam_converges_on_quadratic():
    w = Tensor([[1.0]], requires_grad=True)
    st_ = AdamState(lr=0.01)
    for _ in range(500):
        with Tape():
            backward(ad.square_sum(w))
        ad.adam_step([w], [w.grad], st_)
        w.zero_grad()
    assert abs(w.item()) < 1e-2
    assert st_.step == 500


def test_adam_rejects_nonfinite():
    p = Tensor([[0.0]], requires_grad=True)
    with pytest.raises(NonFiniteError):
        ad.adam_step([p], [np.array([[np.nan]])], AdamState())


# ---------------------------------------------------------------- grad_check


def test_grad_check_linear_is_exact(rng):
    x = param(rng, 3, 3)
    assert grad_check(lambda: (x * 3.0).sum(), [x]) < 1e-9


def test_grad_check_detects_wrong_gradient(rng):
    x = param(rng, 2, 2)

    def broken():
        v = x.value
        return ad._make(np.array([[np.sum(v ** 2)]]), (x,), lambda g: ad._accumulate(x, g * v))

    assert grad_check(broken, [x]) > 0.1


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-5, 5)))
def test_layer_norm_property_grad(v):
    x = Tensor(v, requires_grad=True)
    assert grad_check(lambda: weighted(ad.layer_norm(x, 1e-2)), [x]) < 1e-5
