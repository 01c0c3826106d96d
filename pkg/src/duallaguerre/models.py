"""Two-layer polynomial-basis node classifiers: ChebyNet, LaguerreNet, DualLaguerreNet.

Each layer stacks K basis terms of its input and applies a linear map. The
dual variant stacks a low branch (``L_low``, alpha_1) and a high branch
(``L_high``, alpha_2) side by side, doubling the stacked width.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import CsrMatrix, GraphDataset, build_l_high, build_l_low, build_sym_laplacian
from .laguerre import THETA_ALPHA_ZERO, alpha_of, cheby_basis_shifted, laguerre_basis

VARIANTS = ("cheby", "laguerre", "dual_laguerre")


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    K: int = 3
    H: int = 16
    feature_dim: int = 1
    num_classes: int = 2
    dropout_p: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.K < 1 or self.H < 1:
            raise ValueError("K and H must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")

    @property
    def branches(self) -> int:
        return 2 if self.variant == "dual_laguerre" else 1

    @property
    def in_width(self) -> int:
        return self.feature_dim * self.K * self.branches

    @property
    def mid_width(self) -> int:
        """Stacked width entering the output linear layer."""
        return self.H * self.K * self.branches


@dataclass(frozen=True, eq=False)
class Operators:
    """Constant operators a model needs, built once per dataset."""

    L_sym: CsrMatrix
    L_low: CsrMatrix
    L_high: CsrMatrix
    L_cheb: CsrMatrix

    @classmethod
    def from_laplacian(cls, L_sym: CsrMatrix) -> "Operators":
        return cls(L_sym, build_l_low(L_sym), build_l_high(L_sym), L_sym.scaled_shift(1.0, -1.0))

    @classmethod
    def from_dataset(cls, ds: GraphDataset) -> "Operators":
        return cls.from_laplacian(build_sym_laplacian(ds))


@dataclass(eq=False)
class ParamSet:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor
    theta_low: Tensor | None = None
    theta_high: Tensor | None = None

    def named(self) -> dict[str, Tensor]:
        out = {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}
        if self.theta_low is not None:
            out["theta_low"] = self.theta_low
        if self.theta_high is not None:
            out["theta_high"] = self.theta_high
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())

    def weights(self) -> list[Tensor]:
        return [self.W1, self.W2]

    def filter_params(self) -> list[Tensor]:
        return [t for t in (self.theta_low, self.theta_high) if t is not None]

    def alphas(self) -> tuple[float | None, float | None]:
        lo = alpha_of(self.theta_low.item()) if self.theta_low is not None else None
        hi = alpha_of(self.theta_high.item()) if self.theta_high is not None else None
        return lo, hi

    def count(self) -> int:
        return sum(t.value.size for t in self.tensors())

    def copy(self) -> "ParamSet":
        return ParamSet(**{k: Tensor(v.value.copy(), requires_grad=True, name=k) for k, v in self.named().items()})

    def __eq__(self, other):
        if not isinstance(other, ParamSet):
            return NotImplemented
        a, b = self.named(), other.named()
        return a.keys() == b.keys() and all(np.array_equal(a[k].value, b[k].value) for k in a)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, seed: int = 0) -> ParamSet:
    rng = np.random.default_rng(seed)
    W1 = _glorot(rng, cfg.in_width, cfg.H)
    W2 = _glorot(rng, cfg.mid_width, cfg.num_classes)
    ps = ParamSet(
        W1=Tensor(W1, requires_grad=True, name="W1"),
        b1=Tensor(np.zeros((1, cfg.H)), requires_grad=True, name="b1"),
        W2=Tensor(W2, requires_grad=True, name="W2"),
        b2=Tensor(np.zeros((1, cfg.num_classes)), requires_grad=True, name="b2"),
    )
    if cfg.variant in ("laguerre", "dual_laguerre"):
        ps.theta_low = Tensor([[THETA_ALPHA_ZERO]], requires_grad=True, name="theta_low")
    if cfg.variant == "dual_laguerre":
        ps.theta_high = Tensor([[THETA_ALPHA_ZERO]], requires_grad=True, name="theta_high")
    return ps


def stacked_basis(X: Tensor, ops: Operators, ps: ParamSet, cfg: ModelConfig) -> Tensor:
    """Basis stack fed to a layer's linear map (``[Z_low, Z_high]`` for the dual variant)."""
    if cfg.variant == "cheby":
        return cheby_basis_shifted(ops.L_cheb, X, cfg.K)
    low = laguerre_basis(ops.L_low, X, ps.theta_low, cfg.K)
    if cfg.variant == "laguerre":
        return low
    high = laguerre_basis(ops.L_high, X, ps.theta_high, cfg.K)
    return ad.concat_cols([low, high])


def _linear(Z: Tensor, W: Tensor, b: Tensor) -> Tensor:
    if Z.shape[1] != W.shape[0]:
        raise ValueError(f"stacked width {Z.shape[1]} != weight rows {W.shape[0]}")
    return ad.matmul(Z, W) + b


def poly_conv_forward(X: Tensor, L_low: CsrMatrix, W: Tensor, b: Tensor, theta, cfg: ModelConfig) -> Tensor:
    """Single-branch layer. For ``cfg.variant == 'cheby'`` pass ``L_sym`` as the operator."""
    if cfg.variant == "cheby":
        Z = cheby_basis_shifted(L_low.scaled_shift(1.0, -1.0), X, cfg.K)
    else:
        Z = laguerre_basis(L_low, X, theta, cfg.K)
    return _linear(Z, W, b)


def dual_conv_forward(X: Tensor, L_low: CsrMatrix, L_high: CsrMatrix, W: Tensor, b: Tensor,
                      theta_low, theta_high, cfg: ModelConfig) -> Tensor:
    Z = ad.concat_cols([
        laguerre_basis(L_low, X, theta_low, cfg.K),
        laguerre_basis(L_high, X, theta_high, cfg.K),
    ])
    return _linear(Z, W, b)


def model_forward(ops: Operators, X: Tensor, ps: ParamSet, cfg: ModelConfig,
                  mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
    """conv1 -> ReLU -> dropout -> conv2 -> log-softmax; returns N x C log-probabilities."""
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    h = _linear(stacked_basis(X, ops, ps, cfg), ps.W1, ps.b1)
    h = ad.relu(h)
    h = ad.dropout(h, cfg.dropout_p, training=(mode == "train"), rng=rng)
    out = _linear(stacked_basis(h, ops, ps, cfg), ps.W2, ps.b2)
    return ad.log_softmax(out)


# --------------------------------------------------------------------------
# checkpoint format
# --------------------------------------------------------------------------

_MAGIC = b"DLNP"
_VERSION = 1


def save_params(ps: ParamSet, path) -> None:
    """Write a flat named-array file.

    Layout (little-endian): ``b"DLNP"``, u32 version, u32 count, then per array:
    u16 name length, UTF-8 name, u8 ndim, ndim x u32 shape, float64 payload.
    """
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(ps.named()))]
    for name, t in ps.named().items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", t.value.ndim) + struct.pack(f"<{t.value.ndim}I", *t.value.shape))
        chunks.append(t.value.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path) -> ParamSet:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC:
        raise ValueError(f"{path}: not a parameter file")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    pos = 12
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        size = int(np.prod(shape))
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(buf):
        raise ValueError(f"{path}: {len(buf) - pos} trailing bytes")
    return ParamSet(**{k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()})
