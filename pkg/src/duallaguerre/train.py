"""Full-batch training, k-fold cross-validation and K/H sweeps."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, NonFiniteError, Tape, Tensor
from .graph import GraphDataset, SplitSet
from .models import ModelConfig, Operators, init_params, model_forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "dual_laguerre"
    epochs: int = 200
    lr: float = 0.01
    weight_decay: float = 5e-4
    dropout_p: float = 0.5
    K: int = 3
    H: int = 16
    seed: int = 0
    patience: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")

    def model_config(self, ds: GraphDataset) -> ModelConfig:
        return ModelConfig(self.variant, self.K, self.H, ds.feature_dim, ds.num_classes, self.dropout_p)


@dataclass
class RunResult:
    variant: str
    train_loss: list[float]
    val_acc: list[float]
    test_acc: list[float]
    best_val_epoch: int
    test_at_best_val: float
    learned_alpha_low: float | None
    learned_alpha_high: float | None
    wall_time: float
    seed: int = 0
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "RunResult":
        return cls(**d)

    def same_outcome(self, other: "RunResult") -> bool:
        """Equality on every field except wall-clock time."""
        a, b = self.to_json(), other.to_json()
        a.pop("wall_time")
        b.pop("wall_time")
        return a == b


@dataclass
class FoldSummary:
    runs: list[RunResult]
    mean: float
    std: float
    mean_alpha_low: float | None
    mean_alpha_high: float | None

    @classmethod
    def from_runs(cls, runs: Sequence[RunResult]) -> "FoldSummary":
        accs = np.array([r.test_at_best_val for r in runs])
        std = float(np.std(accs, ddof=1)) if accs.size > 1 else 0.0

        def mean_of(vals):
            vals = [v for v in vals if v is not None]
            return float(np.mean(vals)) if vals else None

        return cls(
            list(runs),
            float(np.mean(accs)),
            std,
            mean_of(r.learned_alpha_low for r in runs),
            mean_of(r.learned_alpha_high for r in runs),
        )

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "mean_alpha_low": self.mean_alpha_low,
            "mean_alpha_high": self.mean_alpha_high,
            "runs": [r.to_json() for r in self.runs],
        }

    @classmethod
    def from_json(cls, d: dict) -> "FoldSummary":
        return cls([RunResult.from_json(r) for r in d["runs"]], d["mean"], d["std"],
                   d["mean_alpha_low"], d["mean_alpha_high"])


def evaluate_accuracy(log_probs, labels, mask) -> float:
    """Masked argmax accuracy; ``np.argmax`` breaks ties toward the lowest class id."""
    lp = log_probs.value if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    m = np.asarray(mask)
    idx = np.flatnonzero(m) if m.dtype == bool else m.astype(np.int64).ravel()
    if idx.size == 0:
        raise ValueError("empty mask")
    pred = np.argmax(lp[idx], axis=1)
    return float(np.mean(pred == np.asarray(labels)[idx]))


def training_loss(ops: Operators, X: Tensor, ps, mcfg: ModelConfig, labels, train_ids,
                  weight_decay: float, rng: np.random.Generator) -> Tensor:
    """Masked NLL in train mode plus ``weight_decay / 2 * (|W1|^2 + |W2|^2)``.

    Biases and filter parameters are not decayed.
    """
    out = model_forward(ops, X, ps, mcfg, mode="train", rng=rng)
    loss = ad.nll(out, labels, train_ids)
    if weight_decay:
        reg = ad.square_sum(ps.W1) + ad.square_sum(ps.W2)
        loss = loss + (0.5 * weight_decay) * reg
    return loss


def train_run(ds: GraphDataset, split: SplitSet, cfg: TrainConfig,
              ops: Operators | None = None) -> RunResult:
    """Train one model on one split and select the epoch with best validation accuracy."""
    t0 = time.perf_counter()
    ops = ops or Operators.from_dataset(ds)
    mcfg = cfg.model_config(ds)
    ps = init_params(mcfg, cfg.seed)
    params = ps.tensors()
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    opt = AdamState(lr=cfg.lr)
    X = Tensor(ds.features)
    labels = ds.labels

    losses, vals, tests = [], [], []
    best_val, best_epoch, since_best = -1.0, 0, 0
    for epoch in range(cfg.epochs):
        for p in params:
            p.grad = None
        with Tape() as tape:
            loss = training_loss(ops, X, ps, mcfg, labels, split.train_ids, cfg.weight_decay, rng)
            lval = loss.item()
            if not np.isfinite(lval):
                raise NonFiniteError(
                    f"non-finite loss at epoch {epoch} ({cfg.variant}, seed {cfg.seed}); "
                    f"alphas={ps.alphas()}"
                )
            tape.backward(loss)
            tape.clear()
        try:
            ad.adam_step(params, [p.grad for p in params], opt)
        except NonFiniteError as exc:
            raise NonFiniteError(f"epoch {epoch}: {exc}") from exc

        logp = model_forward(ops, X, ps, mcfg, mode="eval")
        va = evaluate_accuracy(logp, labels, split.val_ids)
        te = evaluate_accuracy(logp, labels, split.test_ids)
        losses.append(lval)
        vals.append(va)
        tests.append(te)
        if va > best_val:
            best_val, best_epoch, since_best = va, epoch, 0
        else:
            since_best += 1
            if cfg.patience and since_best >= cfg.patience:
                break

    a_lo, a_hi = ps.alphas()
    return RunResult(
        variant=cfg.variant,
        train_loss=losses,
        val_acc=vals,
        test_acc=tests,
        best_val_epoch=best_epoch,
        test_at_best_val=tests[best_epoch],
        learned_alpha_low=a_lo,
        learned_alpha_high=a_hi,
        wall_time=time.perf_counter() - t0,
        seed=cfg.seed,
        config=asdict(cfg),
    )


def cross_validate(ds: GraphDataset, folds: Sequence[SplitSet], cfg: TrainConfig,
                   workers: int = 1, ops: Operators | None = None) -> FoldSummary:
    """Run one training per fold with seed ``cfg.seed + fold_index``."""
    if not folds:
        raise ValueError("need at least one fold")
    ops = ops or Operators.from_dataset(ds)
    cfgs = [replace(cfg, seed=cfg.seed + i) for i in range(len(folds))]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(lambda fc: train_run(ds, fc[0], fc[1], ops), zip(folds, cfgs)))
    else:
        runs = [train_run(ds, f, c, ops) for f, c in zip(folds, cfgs)]
    summary = FoldSummary.from_runs(runs)
    log.info("%s: %.4f +- %.4f over %d folds", cfg.variant, summary.mean, summary.std, len(runs))
    return summary


def sweep_axis(ds: GraphDataset, folds: Sequence[SplitSet], base_cfg: TrainConfig, axis: str,
               values: Sequence[int], workers: int = 1) -> list[tuple[int, FoldSummary]]:
    """Cross-validate once per value of ``axis`` ('K' or 'H'), in the given order."""
    if axis not in ("K", "H"):
        raise ValueError("axis must be 'K' or 'H'")
    if not values:
        raise ValueError("values must be non-empty")
    ops = Operators.from_dataset(ds)
    return [(v, cross_validate(ds, folds, replace(base_cfg, **{axis: int(v)}), workers, ops))
            for v in values]
