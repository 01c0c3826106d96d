"""Experiment suites: run (dataset x variant x sweep) cells and write the report bundle.

Bundle layout under ``out``::

    runs/<dataset>__<variant>[__<axis>=<value>].json   one FoldSummary per cell
    tables/accuracy.csv      dataset,variant,K,H,folds,mean,std,source
    tables/alphas.csv        dataset,variant,alpha_low,alpha_high,source
    tables/sweep_K.csv       dataset,variant,K,mean,std,source   (likewise sweep_H.csv)
    plots/curves.csv         dataset,variant,fold,epoch,train_loss,val_acc,test_acc
    plots/k_sweep.csv        dataset,variant,K,fold,test_acc      (likewise h_sweep.csv)
    figures/*.png            rendered from the plots/ data
    failures.json            [{"cell": ..., "error": ...}]

Run JSONs omit wall-clock time so a rerun of the same spec is byte-identical.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .graph import GraphDataset, SplitSet, load_dataset, make_folds
from .train import FoldSummary, TrainConfig, cross_validate

log = logging.getLogger(__name__)

HETEROPHILY_FRACTIONS = (0.6, 0.2, 0.2)


class SpecError(ValueError):
    """Unusable experiment specification (CLI exit code 2)."""


@dataclass
class ExperimentSpec:
    datasets: list[str]
    variants: list[str]
    out: str
    folds: int = 10
    split: str = "auto"
    fold_seed: int = 0
    train: dict[str, Any] = field(default_factory=dict)
    sweeps: dict[str, list[int]] = field(default_factory=dict)
    workers: int = 1
    figures: bool = True

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        if "dataset" in d:
            d.setdefault("datasets", [])
            d["datasets"] = [d.pop("dataset")] + list(d["datasets"])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown spec keys: {sorted(unknown)}")
        try:
            spec = cls(**d)
        except TypeError as exc:
            raise SpecError(str(exc)) from exc
        spec.validate()
        return spec

    def validate(self) -> None:
        if not self.datasets:
            raise SpecError("no datasets given")
        for p in self.datasets:
            if not (Path(p) / "graph.json").is_file():
                raise SpecError(f"dataset container not found: {p}")
        if not self.variants:
            raise SpecError("no variants given")
        if self.folds < 1:
            raise SpecError("folds must be >= 1")
        if self.split not in ("auto", "folds", "container"):
            raise SpecError("split must be auto, folds or container")
        for axis, vals in self.sweeps.items():
            if axis not in ("K", "H") or not vals:
                raise SpecError(f"bad sweep {axis}: {vals}")
        try:
            self.base_config()
        except (TypeError, ValueError) as exc:
            raise SpecError(f"bad training overrides: {exc}") from exc
        from .models import VARIANTS

        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise SpecError(f"unknown variants {bad}")
        out = Path(self.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise SpecError(f"output directory not writable: {exc}") from exc

    def base_config(self) -> TrainConfig:
        return TrainConfig(**self.train)


def folds_for(ds: GraphDataset, spec: ExperimentSpec) -> list[SplitSet]:
    """Container splits when present (cycled to ``spec.folds``), else seeded 60/20/20 folds."""
    use_container = spec.split == "container" or (spec.split == "auto" and ds.splits)
    if use_container:
        if not ds.splits:
            raise SpecError(f"{ds.name}: container has no splits")
        return [ds.splits[i % len(ds.splits)] for i in range(spec.folds)]
    return make_folds(ds.num_nodes, spec.folds, HETEROPHILY_FRACTIONS, spec.fold_seed, labels=ds.labels)


def _summary_record(summary: FoldSummary) -> dict:
    rec = summary.to_json()
    for r in rec["runs"]:
        r.pop("wall_time", None)
    return rec


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def cell_name(dataset: str, variant: str, axis: str | None = None, value: int | None = None) -> str:
    base = f"{dataset}__{variant}"
    return base if axis is None else f"{base}__{axis}={value}"


def run_suite(spec: ExperimentSpec) -> dict:
    """Execute every cell of `spec` and write the bundle; returns ``{"cells", "failures"}``."""
    spec.validate()
    out = Path(spec.out)
    for sub in ("runs", "tables", "plots"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    base = spec.base_config()

    cells = []
    failures = []
    for path in spec.datasets:
        ds = load_dataset(path)
        name = ds.name or Path(path).name
        folds = folds_for(ds, spec)
        plan = [(v, None, None, base) for v in spec.variants]
        for axis, values in spec.sweeps.items():
            plan += [(v, axis, int(x), replace(base, **{axis: int(x)}))
                     for v in spec.variants for x in values]
        for variant, axis, value, cfg in plan:
            cname = cell_name(name, variant, axis, value)
            try:
                summary = cross_validate(ds, folds, replace(cfg, variant=variant), workers=spec.workers)
            except Exception as exc:  # recorded in the failures manifest
                log.error("cell %s failed: %s", cname, exc)
                failures.append({"cell": cname, "error": f"{type(exc).__name__}: {exc}"})
                continue
            record = {
                "dataset": name,
                "variant": variant,
                "axis": axis,
                "value": value,
                "config": asdict(replace(cfg, variant=variant)),
                "summary": _summary_record(summary),
            }
            _write_json(out / "runs" / f"{cname}.json", record)
            cells.append(record)

    write_tables(out, cells)
    _write_json(out / "failures.json", failures)
    if spec.figures:
        from .plotting import render_figures

        render_figures(out)
    return {"cells": cells, "failures": failures}


def write_tables(out: Path, cells: list[dict]) -> None:
    acc, alphas, curves = [], [], []
    sweeps: dict[str, tuple[list, list]] = {"K": ([], []), "H": ([], [])}
    for rec in cells:
        src = f"runs/{cell_name(rec['dataset'], rec['variant'], rec['axis'], rec['value'])}.json"
        s = rec["summary"]
        cfg = rec["config"]
        if rec["axis"] is None:
            acc.append([rec["dataset"], rec["variant"], cfg["K"], cfg["H"], len(s["runs"]),
                        _fmt(s["mean"]), _fmt(s["std"]), src])
            if s["mean_alpha_low"] is not None:
                alphas.append([rec["dataset"], rec["variant"], _fmt(s["mean_alpha_low"]),
                               _fmt(s["mean_alpha_high"]), src])
            for i, r in enumerate(s["runs"]):
                for e, (l, va, te) in enumerate(zip(r["train_loss"], r["val_acc"], r["test_acc"])):
                    curves.append([rec["dataset"], rec["variant"], i, e, _fmt(l), _fmt(va), _fmt(te)])
        else:
            table, plot = sweeps[rec["axis"]]
            table.append([rec["dataset"], rec["variant"], rec["value"], _fmt(s["mean"]), _fmt(s["std"]), src])
            for i, r in enumerate(s["runs"]):
                plot.append([rec["dataset"], rec["variant"], rec["value"], i, _fmt(r["test_at_best_val"])])

    _write_csv(out / "tables" / "accuracy.csv",
               ["dataset", "variant", "K", "H", "folds", "mean", "std", "source"], acc)
    _write_csv(out / "tables" / "alphas.csv",
               ["dataset", "variant", "alpha_low", "alpha_high", "source"], alphas)
    _write_csv(out / "plots" / "curves.csv",
               ["dataset", "variant", "fold", "epoch", "train_loss", "val_acc", "test_acc"], curves)
    for axis, (table, plot) in sweeps.items():
        _write_csv(out / "tables" / f"sweep_{axis}.csv",
                   ["dataset", "variant", axis, "mean", "std", "source"], table)
        _write_csv(out / "plots" / f"{axis.lower()}_sweep.csv",
                   ["dataset", "variant", axis, "fold", "test_acc"], plot)


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------


def _load_records(results_dir: Path) -> list[dict]:
    runs_dir = results_dir / "runs" if (results_dir / "runs").is_dir() else results_dir
    records = []
    for p in sorted(runs_dir.glob("*.json")):
        if p.name == "failures.json":
            continue
        try:
            rec = json.loads(p.read_text(encoding="utf-8"))
            rec["summary"]["mean"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"malformed result file {p.name}: {exc}") from exc
        records.append(rec)
    return records


def _num(x, spec=".4f") -> str:
    return "-" if x is None or (isinstance(x, float) and math.isnan(x)) else format(x, spec)


def _align(rows: list[list[str]]) -> list[str]:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]


def emit_report(results_dir) -> str:
    """Aligned accuracy, learned-alpha and sweep tables for a results directory."""
    records = _load_records(Path(results_dir))
    if not records:
        return "no results"
    lines = []
    main = [r for r in records if r.get("axis") is None]
    if main:
        rows = [["dataset", "variant", "folds", "mean±std", "alpha_1", "alpha_2"]]
        for r in main:
            s = r["summary"]
            rows.append([r["dataset"], r["variant"], str(len(s["runs"])),
                         f"{_num(s['mean'])}±{_num(s['std'])}",
                         _num(s["mean_alpha_low"]), _num(s["mean_alpha_high"])])
        lines += ["Test accuracy (best-validation epoch)", *_align(rows), ""]
    for axis in ("K", "H"):
        sw = [r for r in records if r.get("axis") == axis]
        if not sw:
            continue
        rows = [["dataset", "variant", axis, "mean±std"]]
        for r in sorted(sw, key=lambda r: (r["dataset"], r["variant"], r["value"])):
            s = r["summary"]
            rows.append([r["dataset"], r["variant"], str(r["value"]), f"{_num(s['mean'])}±{_num(s['std'])}"])
        lines += [f"Test accuracy vs {axis}", *_align(rows), ""]
    return "\n".join(lines).rstrip()
