"""Adaptive generalized-Laguerre filter bases and the Chebyshev baseline basis.

The Laguerre basis uses the monic three-term recurrence

    P_0 = 1,  P_1 = x - b_0,  P_{k+1} = (x - b_k) P_k - c_k P_{k-1}
    b_k = 2k + alpha + 1,     c_k = k (k + alpha)

applied to a sparse operator, with every term row-standardized before it is
stacked and before it feeds the next step. ``alpha = -1 + softplus(theta)``
keeps ``alpha > -1`` for any finite raw parameter.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import CsrMatrix

# theta giving alpha = 0 (standard Laguerre)
THETA_ALPHA_ZERO = math.log(math.e - 1.0)


def alpha_of(theta):
    """Map a raw parameter to ``alpha = -1 + softplus(theta)``.

    A float gives a float; a :class:`Tensor` gives a differentiable Tensor.
    """
    if isinstance(theta, Tensor):
        return ad.softplus(theta) - 1.0
    x = float(theta)
    return -1.0 + max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def theta_of(alpha: float) -> float:
    """Inverse of :func:`alpha_of`."""
    if alpha <= -1.0:
        raise ValueError("alpha must exceed -1")
    y = alpha + 1.0
    return y + math.log(-math.expm1(-y))


def recurrence_coefficients(alpha: float, k: int) -> tuple[float, float]:
    return 2 * k + alpha + 1.0, k * (k + alpha)


def laguerre_poly_scalar(x: float, alpha: float, k: int) -> float:
    """Monic generalized Laguerre polynomial of degree `k`, unnormalized.

    Equals ``(-1)**k * k! * L_k^(alpha)(x)`` for the classical polynomial.
    """
    if alpha <= -1.0:
        raise ValueError(f"alpha must exceed -1, got {alpha}")
    if k < 0:
        raise ValueError("degree must be non-negative")
    p_prev, p = 0.0, 1.0
    for j in range(k):
        b, c = recurrence_coefficients(alpha, j)
        p_prev, p = p, (x - b) * p - c * p_prev
    return p


def _check_finite(t: Tensor, what: str, k: int) -> None:
    if not np.all(np.isfinite(t.value)):
        raise ad.NonFiniteError(
            f"non-finite value in {what} term {k} (max finite |v| "
            f"{np.nanmax(np.abs(np.where(np.isfinite(t.value), t.value, np.nan)), initial=0.0):.3g})"
        )


def laguerre_basis(
    L_op: CsrMatrix,
    X: Tensor,
    theta,
    K: int,
    normalize: bool = True,
    eps: float = 1e-5,
) -> Tensor:
    """Stack degrees ``0 .. K-1`` of the adaptive Laguerre recurrence on `L_op`.

    Parameters
    ----------
    L_op : CsrMatrix
        Square constant operator (``L_low`` or ``L_high``).
    X : Tensor
        ``N x F`` signal.
    theta : Tensor or float
        Raw filter parameter; gradients flow into it through ``b_k`` and ``c_k``.
    K : int
        Number of stacked terms.
    normalize : bool
        Row-standardize each term. ``False`` gives the plain polynomial ``P_k(L) X``,
        which is what the eigen-decomposition oracle checks.

    Returns
    -------
    Tensor
        ``N x (F * K)``; column block ``k`` holds term ``k``.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if L_op.num_rows != L_op.num_cols or L_op.num_cols != X.shape[0]:
        raise ValueError(f"operator {L_op.shape} does not match signal {X.shape}")
    theta = theta if isinstance(theta, Tensor) else Tensor([[float(theta)]])
    alpha = alpha_of(theta)
    norm = (lambda t: ad.layer_norm(t, eps)) if normalize else (lambda t: t)

    terms = [norm(X)]
    if K > 1:
        b0 = alpha + 1.0
        t1 = ad.spmm(L_op, terms[0]) - b0 * terms[0]
        terms.append(norm(t1))
        _check_finite(terms[-1], "Laguerre", 1)
    for k in range(1, K - 1):
        b_k = alpha + (2 * k + 1.0)
        c_k = (alpha + float(k)) * float(k)
        nxt = ad.spmm(L_op, terms[k]) - b_k * terms[k] - c_k * terms[k - 1]
        terms.append(norm(nxt))
        _check_finite(terms[-1], "Laguerre", k + 1)
    return ad.concat_cols(terms)


def cheby_basis(L_sym: CsrMatrix, X: Tensor, K: int) -> Tensor:
    """Chebyshev terms ``T_0 .. T_{K-1}`` of ``L_sym - I`` (lambda_max = 2), unnormalized."""
    if K < 1:
        raise ValueError("K must be >= 1")
    L_shift = L_sym.scaled_shift(1.0, -1.0)
    return cheby_basis_shifted(L_shift, X, K)


def cheby_basis_shifted(L_shift: CsrMatrix, X: Tensor, K: int) -> Tensor:
    """As :func:`cheby_basis`, given the precomputed ``L_sym - I``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    terms = [X]
    if K > 1:
        terms.append(ad.spmm(L_shift, X))
    for k in range(1, K - 1):
        terms.append(2.0 * ad.spmm(L_shift, terms[k]) - terms[k - 1])
    return ad.concat_cols(terms)
