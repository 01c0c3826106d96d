"""Graph storage, the on-disk dataset container, Laplacian operators and splits.

The container is a directory holding four files::

    graph.json      {"num_nodes", "num_edges", "feature_dim", "num_classes", "splits"}
    edges.u32le     2*E little-endian uint32, pairs (u, v)
    features.f32le  N*F little-endian float32, row-major
    labels.u32le    N little-endian uint32
"""

from __future__ import annotations

import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

GRAPH_JSON = "graph.json"
EDGES_FILE = "edges.u32le"
FEATURES_FILE = "features.f32le"
LABELS_FILE = "labels.u32le"


class DatasetError(ValueError):
    """Invalid or unreadable dataset container."""

    def __init__(self, message: str, file: str | None = None, index: int | None = None):
        self.file = file
        self.index = index
        where = ""
        if file is not None:
            where = f" [{file}" + (f" @ index {index}" if index is not None else "") + "]"
        super().__init__(message + where)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SplitSet:
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray

    def __post_init__(self):
        for name in ("train_ids", "val_ids", "test_ids"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.int64)))

    def validate(self, num_nodes: int) -> None:
        parts = (self.train_ids, self.val_ids, self.test_ids)
        for name, ids in zip(("train", "val", "test"), parts):
            if ids.size == 0:
                raise DatasetError(f"{name} split is empty", GRAPH_JSON)
            if ids.min() < 0 or ids.max() >= num_nodes:
                bad = int(np.flatnonzero((ids < 0) | (ids >= num_nodes))[0])
                raise DatasetError(f"{name} id {int(ids[bad])} out of range", GRAPH_JSON, bad)
            if np.unique(ids).size != ids.size:
                raise DatasetError(f"{name} split has duplicate ids", GRAPH_JSON)
        allids = np.concatenate(parts)
        if np.unique(allids).size != allids.size:
            raise DatasetError("splits are not pairwise disjoint", GRAPH_JSON)

    def to_json(self) -> dict:
        return {
            "train": self.train_ids.tolist(),
            "val": self.val_ids.tolist(),
            "test": self.test_ids.tolist(),
        }

    def __eq__(self, other):
        if not isinstance(other, SplitSet):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("train_ids", "val_ids", "test_ids")
        )


def canonical_edges(edges, num_nodes: int | None = None) -> np.ndarray:
    """Symmetrize, dedupe and drop self-loops; rows are (u, v) with u < v, sorted."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if num_nodes is not None and e.size:
        bad = np.flatnonzero((e < 0).any(axis=1) | (e >= num_nodes).any(axis=1))
        if bad.size:
            i = int(bad[0])
            raise DatasetError(
                f"edge ({e[i, 0]}, {e[i, 1]}) out of range for num_nodes={num_nodes}",
                EDGES_FILE,
                i,
            )
    e = e[e[:, 0] != e[:, 1]]
    e = np.sort(e, axis=1)
    if e.size:
        e = np.unique(e, axis=0)
    return e.reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class GraphDataset:
    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    splits: tuple[SplitSet, ...] = ()
    name: str = ""

    def __post_init__(self):
        n = int(self.num_nodes)
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "num_classes", int(self.num_classes))
        object.__setattr__(self, "edges", _frozen(canonical_edges(self.edges, n)))
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise DatasetError(f"features must be {n} x F, got {feats.shape}", FEATURES_FILE)
        if not np.all(np.isfinite(feats)):
            bad = int(np.flatnonzero(~np.isfinite(feats.ravel()))[0])
            raise DatasetError("non-finite feature value", FEATURES_FILE, bad)
        object.__setattr__(self, "features", _frozen(feats))
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if labels.shape != (n,):
            raise DatasetError(f"expected {n} labels, got {labels.size}", LABELS_FILE)
        bad = np.flatnonzero((labels < 0) | (labels >= self.num_classes))
        if bad.size:
            i = int(bad[0])
            raise DatasetError(
                f"label {labels[i]} outside [0, {self.num_classes})", LABELS_FILE, i
            )
        object.__setattr__(self, "labels", _frozen(labels))
        splits = tuple(s if isinstance(s, SplitSet) else SplitSet(*s) for s in self.splits)
        for s in splits:
            s.validate(n)
        object.__setattr__(self, "splits", splits)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def edge_homophily(self) -> float:
        """Fraction of edges joining same-label endpoints (nan when edgeless)."""
        if self.num_edges == 0:
            return float("nan")
        lab = self.labels
        return float(np.mean(lab[self.edges[:, 0]] == lab[self.edges[:, 1]]))

    def __eq__(self, other):
        if not isinstance(other, GraphDataset):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.num_classes == other.num_classes
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and self.splits == other.splits
        )


# --------------------------------------------------------------------------
# container I/O
# --------------------------------------------------------------------------


def _read_array(path: Path, dtype: str, count: int) -> np.ndarray:
    if not path.is_file():
        raise DatasetError("missing file", path.name)
    raw = path.read_bytes()
    expected = count * np.dtype(dtype).itemsize
    if len(raw) != expected:
        raise DatasetError(f"byte length {len(raw)} != declared {expected}", path.name)
    return np.frombuffer(raw, dtype=dtype, count=count)


def load_dataset(path) -> GraphDataset:
    path = Path(path)
    meta_path = path / GRAPH_JSON
    if not meta_path.is_file():
        raise DatasetError("missing file", GRAPH_JSON)
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        n = int(meta["num_nodes"])
        e = int(meta["num_edges"])
        f = int(meta["feature_dim"])
        c = int(meta["num_classes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed header: {exc}", GRAPH_JSON) from exc

    edges = _read_array(path / EDGES_FILE, "<u4", 2 * e).astype(np.int64).reshape(e, 2)
    feats = _read_array(path / FEATURES_FILE, "<f4", n * f).astype(np.float64).reshape(n, f)
    labels = _read_array(path / LABELS_FILE, "<u4", n).astype(np.int64)
    splits = []
    for i, s in enumerate(meta.get("splits", [])):
        try:
            splits.append(SplitSet(s["train"], s["val"], s["test"]))
        except KeyError as exc:
            raise DatasetError(f"split missing key {exc}", GRAPH_JSON, i) from exc
    return GraphDataset(n, edges, feats, labels, c, tuple(splits), name=meta.get("name", path.name))


def save_dataset(ds: GraphDataset, path) -> None:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create directory: {exc}", str(path)) from exc
    if not os.access(path, os.W_OK):
        raise DatasetError("directory not writable", str(path))
    meta = {
        "name": ds.name,
        "num_nodes": ds.num_nodes,
        "num_edges": ds.num_edges,
        "feature_dim": ds.feature_dim,
        "num_classes": ds.num_classes,
        "splits": [s.to_json() for s in ds.splits],
    }
    feats32 = ds.features.astype("<f4")
    if not np.array_equal(feats32.astype(np.float64), ds.features):
        log.warning("features are not float32-representable; container stores rounded values")
    (path / GRAPH_JSON).write_text(json.dumps(meta), encoding="utf-8")
    (path / EDGES_FILE).write_bytes(ds.edges.astype("<u4").tobytes())
    (path / FEATURES_FILE).write_bytes(feats32.tobytes())
    (path / LABELS_FILE).write_bytes(ds.labels.astype("<u4").tobytes())


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    num_rows: int
    num_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    _scipy: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        rp = _frozen(np.asarray(self.row_ptr, dtype=np.int64))
        ci = _frozen(np.asarray(self.col_idx, dtype=np.int64))
        vals = _frozen(np.asarray(self.values, dtype=np.float64))
        if rp.shape != (self.num_rows + 1,) or rp[0] != 0 or np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must be monotone with num_rows+1 entries starting at 0")
        if rp[-1] != ci.size or ci.size != vals.size:
            raise ValueError("row_ptr[-1] must equal nnz")
        if ci.size and (ci.min() < 0 or ci.max() >= self.num_cols):
            raise ValueError("col_idx out of bounds")
        for r in range(self.num_rows):
            seg = ci[rp[r]:rp[r + 1]]
            if seg.size > 1 and np.any(np.diff(seg) <= 0):
                raise ValueError(f"col_idx not strictly increasing in row {r}")
        object.__setattr__(self, "row_ptr", rp)
        object.__setattr__(self, "col_idx", ci)
        object.__setattr__(self, "values", vals)
        object.__setattr__(
            self,
            "_scipy",
            sp.csr_matrix((vals, ci, rp), shape=(self.num_rows, self.num_cols)),
        )

    @classmethod
    def from_scipy(cls, m) -> "CsrMatrix":
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def identity(cls, n: int, scale: float = 1.0) -> "CsrMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.full(n, float(scale)))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_rows, self.num_cols)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def matmul(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._scipy @ x)

    def rmatmul(self, g: np.ndarray) -> np.ndarray:
        """Transpose product s^T @ g."""
        return np.asarray(self._scipy.T @ g)

    def to_dense(self) -> np.ndarray:
        return self._scipy.toarray()

    def is_structurally_symmetric(self) -> bool:
        pat = self._scipy.copy()
        pat.data = np.ones_like(pat.data)
        return (pat != pat.T).nnz == 0

    def scaled_shift(self, scale: float, shift: float) -> "CsrMatrix":
        """scale * self + shift * I, with every diagonal entry stored explicitly."""
        n = self.num_rows
        m = sp.csr_matrix(self._scipy * scale) + sp.csr_matrix(
            (np.full(n, float(shift)), (np.arange(n), np.arange(n))), shape=(n, n)
        )
        m.sort_indices()
        return CsrMatrix(n, n, m.indptr, m.indices, m.data)


def build_sym_laplacian(ds: GraphDataset) -> CsrMatrix:
    """L_sym = I - D^{-1/2} A D^{-1/2}; degree-0 nodes get d^{-1/2} = 0 (row e_i)."""
    n = ds.num_nodes
    u, v = ds.edges[:, 0], ds.edges[:, 1]
    deg = np.bincount(np.concatenate([u, v]), minlength=n).astype(np.float64)
    dinv = np.zeros(n)
    nz = deg > 0
    dinv[nz] = 1.0 / np.sqrt(deg[nz])
    w = -dinv[u] * dinv[v]
    rows = np.concatenate([u, v, np.arange(n)])
    cols = np.concatenate([v, u, np.arange(n)])
    vals = np.concatenate([w, w, np.ones(n)])
    return CsrMatrix.from_scipy(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))


def build_l_low(L_sym: CsrMatrix) -> CsrMatrix:
    return CsrMatrix(L_sym.num_rows, L_sym.num_cols, L_sym.row_ptr, L_sym.col_idx, 0.5 * L_sym.values)


def build_l_high(L_sym: CsrMatrix) -> CsrMatrix:
    # 0.5 * (2I - L_sym) = I - 0.5 * L_sym
    return L_sym.scaled_shift(-0.5, 1.0)


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------


def _split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    n_train = int(math.floor(fractions[0] * n + 0.5))
    n_val = int(math.floor(fractions[1] * n + 0.5))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def _apportion(total: int, weights: np.ndarray) -> np.ndarray:
    """Largest-remainder allocation of `total` proportional to `weights` (ties to lower index)."""
    exact = total * weights / weights.sum()
    base = np.floor(exact).astype(np.int64)
    order = np.argsort(-(exact - base), kind="stable")
    base[order[: total - base.sum()]] += 1
    return base


def make_folds(
    num_nodes: int,
    k: int,
    fractions: Sequence[float] = (0.6, 0.2, 0.2),
    seed: int = 0,
    labels: np.ndarray | None = None,
) -> list[SplitSet]:
    """Draw `k` independent random train/val/test splits.

    Global sizes are ``round(f_train*n)``, ``round(f_val*n)`` and the remainder.
    With `labels`, each class contributes to every part in proportion to its size
    (largest remainder), so global sizes are unchanged by stratification. A class
    with fewer members than `k` disables stratification with a warning.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError("fractions must be three non-negative numbers summing to 1")
    n_train, n_val, n_test = _split_sizes(num_nodes, fractions)
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split sizes {(n_train, n_val, n_test)} leave an empty part")

    classes = None
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        _, counts = np.unique(labels, return_counts=True)
        if counts.min() < k:
            warnings.warn(
                f"class with {counts.min()} members < {k} folds; using unstratified splits",
                RuntimeWarning,
                stacklevel=2,
            )
        else:
            classes = [np.flatnonzero(labels == c) for c in np.unique(labels)]

    rng = np.random.default_rng(seed)
    folds = []
    for _ in range(k):
        if classes is None:
            perm = rng.permutation(num_nodes)
            tr, va, te = np.split(perm, [n_train, n_train + n_val])
        else:
            sizes = np.array([c.size for c in classes], dtype=np.float64)
            tr_c = _apportion(n_train, sizes)
            va_c = _apportion(n_val, sizes - tr_c) if n_val else np.zeros_like(tr_c)
            va_c = np.minimum(va_c, sizes.astype(np.int64) - tr_c)
            tr, va, te = [], [], []
            for members, a, b in zip(classes, tr_c, va_c):
                p = rng.permutation(members)
                tr.append(p[:a])
                va.append(p[a:a + b])
                te.append(p[a + b:])
            tr, va, te = (np.sort(np.concatenate(x)) for x in (tr, va, te))
        folds.append(SplitSet(np.sort(tr), np.sort(va), np.sort(te)))
    return folds


def planetoid_split(labels: np.ndarray, per_class: int = 20, num_val: int = 500,
                    num_test: int = 1000, seed: int = 0) -> SplitSet:
    """Sparse-label split: `per_class` training nodes per class, then val/test from the rest."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train = []
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        train.append(members[:per_class])
    train = np.sort(np.concatenate(train))
    rest = rng.permutation(np.setdiff1d(np.arange(labels.size), train))
    num_val = min(num_val, rest.size - 1)
    num_test = min(num_test, rest.size - num_val)
    return SplitSet(train, np.sort(rest[:num_val]), np.sort(rest[num_val:num_val + num_test]))


# --------------------------------------------------------------------------
# synthetic graphs
# --------------------------------------------------------------------------


def synth_graph(
    n: int,
    num_classes: int,
    homophily: float,
    avg_degree: float,
    feature_dim: int = 16,
    seed: int = 0,
    feature_noise: float = 0.5,
    name: str = "",
) -> GraphDataset:
    """Stochastic-block-style labelled graph with a tunable edge homophily ratio.

    Each edge picks a uniform endpoint ``u``; with probability `homophily` its partner
    is drawn from ``u``'s class, otherwise from the other classes. Sampling continues
    until ``round(n * avg_degree / 2)`` distinct edges exist. Features are the class
    one-hot (in the first `num_classes` columns) plus Gaussian noise, rounded to
    float32 so the graph survives the container round trip bit-for-bit.
    """
    if n < num_classes or num_classes < 1:
        raise ValueError("need n >= num_classes >= 1")
    if avg_degree >= n:
        raise ValueError(f"avg_degree {avg_degree} must be < n = {n}")
    if not 0.0 <= homophily <= 1.0:
        raise ValueError("homophily must lie in [0, 1]")
    if feature_dim < num_classes:
        raise ValueError("feature_dim must be >= num_classes")
    if num_classes == 1 and homophily < 1.0:
        raise ValueError("a single class admits no cross-class edges")

    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes)
    members = [np.flatnonzero(labels == c) for c in range(num_classes)]
    others = [np.flatnonzero(labels != c) for c in range(num_classes)]

    target = int(round(n * avg_degree / 2))
    max_same = sum(m.size * (m.size - 1) // 2 for m in members)
    max_cross = n * (n - 1) // 2 - max_same
    if homophily == 1.0:
        target = min(target, max_same)
    elif homophily == 0.0:
        target = min(target, max_cross)

    seen: set[tuple[int, int]] = set()
    edges = []
    attempts = 0
    while len(edges) < target and attempts < 50 * target + 1000:
        attempts += 1
        u = int(rng.integers(n))
        c = labels[u]
        if rng.random() < homophily:
            pool = members[c]
            if pool.size < 2:
                continue
            v = int(pool[rng.integers(pool.size)])
            if v == u:
                continue
        else:
            pool = others[c]
            v = int(pool[rng.integers(pool.size)])
        key = (u, v) if u < v else (v, u)
        if key in seen:
            continue
        seen.add(key)
        edges.append(key)

    feats = np.zeros((n, feature_dim))
    feats[np.arange(n), labels] = 1.0
    feats += feature_noise * rng.standard_normal((n, feature_dim))
    feats = feats.astype(np.float32).astype(np.float64)
    return GraphDataset(n, np.array(edges, dtype=np.int64).reshape(-1, 2), feats, labels,
                        num_classes, (), name=name)


def twonode_dataset() -> GraphDataset:
    """Minimal fixture: 2 nodes, 1 edge, 2 features, 2 classes, one split."""
    return GraphDataset(
        2,
        [(0, 1)],
        np.array([[1.0, 0.5], [-0.25, 2.0]]),
        [0, 1],
        2,
        name="twonode",
    )
