"""Dual adaptive Laguerre spectral filters (DualLaguerreNet) with LaguerreNet and ChebyNet baselines."""

from .autodiff import AdamState, Tape, Tensor, adam_step, backward, grad_check
from .graph import (
    CsrMatrix,
    GraphDataset,
    SplitSet,
    build_l_high,
    build_l_low,
    build_sym_laplacian,
    load_dataset,
    make_folds,
    save_dataset,
    synth_graph,
)
from .laguerre import alpha_of, cheby_basis, laguerre_basis, laguerre_poly_scalar
from .models import ModelConfig, Operators, ParamSet, init_params, model_forward
from .train import FoldSummary, RunResult, TrainConfig, cross_validate, evaluate_accuracy, sweep_axis, train_run

__version__ = "0.1.0"
