"""Command-line entry point: ``duallaguerre <subcommand> ...``.

Exit codes: 0 success, 1 a run/cell failed, 2 bad arguments or spec.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .graph import DatasetError, GraphDataset, load_dataset, make_folds, planetoid_split, save_dataset, synth_graph, twonode_dataset
from .models import VARIANTS
from .train import TrainConfig, train_run

EXIT_OK, EXIT_FAILED, EXIT_BAD_SPEC = 0, 1, 2

log = logging.getLogger("duallaguerre")


def _add_train_flags(p: argparse.ArgumentParser, multi_variant: bool) -> None:
    p.add_argument("--dataset", required=True, action="append",
                   help="dataset container directory (repeatable)")
    p.add_argument("--variant", default="dual_laguerre",
                   help=f"{'comma-separated ' if multi_variant else ''}variant from {', '.join(VARIANTS)}")
    p.add_argument("--k", type=int, default=3, help="stacked polynomial terms K")
    p.add_argument("--hidden", type=int, default=16, help="hidden width H")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")


def _train_overrides(a) -> dict:
    return {"K": a.k, "H": a.hidden, "lr": a.lr, "weight_decay": a.weight_decay,
            "dropout_p": a.dropout, "epochs": a.epochs, "patience": a.patience, "seed": a.seed}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duallaguerre", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="write a fixture or synthetic dataset container")
    p.add_argument("--kind", choices=["twonode", "synth"], default="synth")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default=None)
    p.add_argument("--nodes", type=int, default=183)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--homophily", type=float, default=0.1)
    p.add_argument("--degree", type=float, default=4.0)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", choices=["none", "folds", "planetoid"], default="none",
                   help="embed splits: seeded 60/20/20 folds, or one sparse-label split")
    p.add_argument("--folds", type=int, default=10)

    p = sub.add_parser("train", help="single training run")
    _add_train_flags(p, multi_variant=False)
    p.add_argument("--fold-index", type=int, default=0,
                   help="container split to use (seeded 60/20/20 split when the container has none)")

    for name, helptext in (("cv", "k-fold cross-validation"), ("sweep", "K or H sweep")):
        p = sub.add_parser(name, help=helptext)
        _add_train_flags(p, multi_variant=True)
        p.add_argument("--folds", type=int, default=10)
        p.add_argument("--split", choices=["auto", "folds", "container"], default="auto")
        p.add_argument("--fold-seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--no-figures", action="store_true")
        if name == "sweep":
            p.add_argument("--axis", choices=["K", "H"], required=True)
            p.add_argument("--values", required=True, help="comma-separated values, e.g. 2,3,5,7,10")

    p = sub.add_parser("suite", help="run an experiment spec JSON file")
    p.add_argument("spec")

    p = sub.add_parser("report", help="print tables for a results directory")
    p.add_argument("results")
    return parser


def _prepare(a) -> int:
    if a.kind == "twonode":
        ds = twonode_dataset()
    else:
        ds = synth_graph(a.nodes, a.classes, a.homophily, a.degree, a.feature_dim, a.seed,
                         feature_noise=a.noise, name=a.name or Path(a.out).name)
        if a.splits != "none":
            splits = (make_folds(ds.num_nodes, a.folds, seed=a.seed, labels=ds.labels)
                      if a.splits == "folds" else [planetoid_split(ds.labels, seed=a.seed)])
            ds = GraphDataset(ds.num_nodes, ds.edges, ds.features, ds.labels, ds.num_classes,
                              tuple(splits), name=ds.name)
    save_dataset(ds, a.out)
    print(f"wrote {a.out}: {ds.num_nodes} nodes, {ds.num_edges} edges, "
          f"edge homophily {ds.edge_homophily():.3f}, {len(ds.splits)} splits")
    return EXIT_OK


def _train(a) -> int:
    from .experiments import _write_csv, _write_json

    ds = load_dataset(a.dataset[0])
    try:
        cfg = TrainConfig(variant=a.variant, **_train_overrides(a))
        cfg.model_config(ds)
    except ValueError as exc:
        print(f"bad arguments: {exc}", file=sys.stderr)
        return EXIT_BAD_SPEC
    if ds.splits:
        split = ds.splits[a.fold_index % len(ds.splits)]
    else:
        split = make_folds(ds.num_nodes, a.fold_index + 1, seed=a.seed, labels=ds.labels)[a.fold_index]
    res = train_run(ds, split, cfg)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    rec = res.to_json()
    rec.pop("wall_time")
    _write_json(out / "run.json", rec)
    _write_csv(out / "curves.csv", ["epoch", "train_loss", "val_acc", "test_acc"],
               [[e, repr(l), repr(v), repr(t)] for e, (l, v, t)
                in enumerate(zip(res.train_loss, res.val_acc, res.test_acc))])
    alphas = " ".join(f"{k}={v:.4f}" for k, v in
                      (("alpha_1", res.learned_alpha_low), ("alpha_2", res.learned_alpha_high)) if v is not None)
    print(f"{cfg.variant}: test@best-val {res.test_at_best_val:.4f} "
          f"(epoch {res.best_val_epoch}) {alphas} [{res.wall_time:.1f}s]")
    return EXIT_OK


def _suite_from_args(a) -> dict:
    spec = {
        "datasets": a.dataset,
        "variants": [v.strip() for v in a.variant.split(",") if v.strip()],
        "out": a.out,
        "folds": a.folds,
        "split": a.split,
        "fold_seed": a.fold_seed,
        "train": _train_overrides(a),
        "workers": a.workers,
        "figures": not a.no_figures,
    }
    if a.command == "sweep":
        try:
            spec["sweeps"] = {a.axis: [int(x) for x in a.values.split(",")]}
        except ValueError as exc:
            from .experiments import SpecError

            raise SpecError(f"bad --values: {exc}") from exc
    return spec


def _run_suite(spec_dict: dict) -> int:
    from .experiments import ExperimentSpec, SpecError, emit_report, run_suite

    try:
        spec = ExperimentSpec.from_json(spec_dict)
    except SpecError as exc:
        print(f"bad spec: {exc}", file=sys.stderr)
        return EXIT_BAD_SPEC
    result = run_suite(spec)
    print(emit_report(spec.out))
    if result["failures"]:
        for f in result["failures"]:
            print(f"FAILED {f['cell']}: {f['error']}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if a.command == "prepare-data":
            return _prepare(a)
        if a.command == "train":
            return _train(a)
        if a.command in ("cv", "sweep"):
            from .experiments import SpecError

            try:
                spec = _suite_from_args(a)
            except SpecError as exc:
                print(f"bad spec: {exc}", file=sys.stderr)
                return EXIT_BAD_SPEC
            return _run_suite(spec)
        if a.command == "suite":
            try:
                spec = json.loads(Path(a.spec).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                print(f"bad spec file {a.spec}: {exc}", file=sys.stderr)
                return EXIT_BAD_SPEC
            return _run_suite(spec)
        if a.command == "report":
            from .experiments import emit_report

            try:
                print(emit_report(a.results))
            except ValueError as exc:
                print(str(exc), file=sys.stderr)
                return EXIT_BAD_SPEC
            return EXIT_OK
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_BAD_SPEC
    except (ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_BAD_SPEC


if __name__ == "__main__":
    sys.exit(main())
