"""Regression random forests grown with the L2 split criterion.

Each tree is fitted on a size-N multinomial bootstrap of the training table;
the multiplicities ``counts[b, t]`` are kept, since both the quantile-forest
weights and the out-of-bag estimates are defined through them. Randomness is
keyed by ``(seed, tree)`` for the bootstrap and ``(seed, tree, node)`` for
covariate sampling, so the forest does not depend on the number of threads.
"""

from __future__ import annotations

import base64
import json
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from ._seeding import derive_seed
from .reftable import QueryPoint, ReferenceTable

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    tree_count: int = 500
    mtry: int | None = None
    min_node_size: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")

    def resolved_mtry(self, k: int) -> int:
        m = max(1, k // 3) if self.mtry is None else self.mtry
        if m > k:
            raise ValueError(f"mtry={m} exceeds the number of statistics k={k}")
        return m


def default_threads() -> int:
    env = os.environ.get("ABCF_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# responses


def resolve_response(table: ReferenceTable, response) -> tuple[str, np.ndarray]:
    """Turn a response selector into (name, values).

    Accepts a parameter name, ``"a/b"`` (ratio of two parameter columns),
    ``"a*b"`` (product), ``"log:a"``, or a ``(name, callable)`` pair where the
    callable maps the table to a vector.
    """
    if isinstance(response, tuple):
        name, fn = response
        values = np.asarray(fn(table), dtype=float)
    elif isinstance(response, str):
        name = response
        if response.startswith("log:"):
            values = np.log(table.param(response[4:]))
        elif "/" in response:
            a, b = response.split("/", 1)
            values = table.param(a) / table.param(b)
        elif "*" in response:
            a, b = response.split("*", 1)
            values = table.param(a) * table.param(b)
        else:
            values = table.param(response)
    else:
        raise TypeError(f"unsupported response selector {response!r}")
    if values.shape != (len(table),) or not np.all(np.isfinite(values)):
        raise ValueError(f"response {name!r} must give one finite value per record")
    return name, values


# ---------------------------------------------------------------------------
# trees and forests


@dataclass(frozen=True)
class Tree:
    """Read-only view of one tree; leaves have ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray
    rss: np.ndarray
    counts: np.ndarray
    train_leaf: np.ndarray

    root = 0

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def members(self, leaf: int) -> tuple[np.ndarray, np.ndarray]:
        """Training indices in ``leaf`` and their bootstrap multiplicities."""
        t = np.flatnonzero((self.train_leaf == leaf) & (self.counts > 0))
        return t, self.counts[t]

    def decrease(self) -> np.ndarray:
        """RSS decrease of each internal node (0 on leaves)."""
        out = np.zeros(self.n_nodes)
        internal = self.feature >= 0
        l, r = self.left[internal], self.right[internal]
        out[internal] = np.maximum(self.rss[internal] - self.rss[l] - self.rss[r], 0.0)
        return out


def assign_leaf(tree: Tree, query) -> int:
    x = _as_matrix(query, None)
    if x.shape[0] != 1:
        raise ValueError("assign_leaf takes a single query")
    if tree.n_nodes and x.shape[1] <= int(tree.feature.max(initial=-1)):
        raise ValueError("query dimension is smaller than the tree's covariates")
    return int(_kernels.apply_tree(tree.feature, tree.threshold, tree.left, tree.right, x)[0])


def _as_matrix(query, k: int | None) -> np.ndarray:
    if isinstance(query, QueryPoint):
        query = query.stats
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(query, dtype=np.float64)))
    if k is not None and x.shape[1] != k:
        raise ValueError(f"query has {x.shape[1]} statistics, forest expects {k}")
    if not np.all(np.isfinite(x)):
        raise ValueError("query contains non-finite values")
    return x


@dataclass(eq=False)
class Forest:
    config: ForestConfig
    stat_names: tuple[str, ...]
    response_name: str
    responses: np.ndarray          # (N,)
    train_stats: np.ndarray        # (N, k)
    counts: np.ndarray             # (B, N) bootstrap multiplicities
    offsets: np.ndarray            # (B + 1,) node offsets into the flat arrays
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray
    rss: np.ndarray
    train_leaf: np.ndarray         # (B, N) local leaf of every training record
    _members: tuple | None = field(default=None, repr=False)

    @property
    def tree_count(self) -> int:
        return self.counts.shape[0]

    @property
    def n_train(self) -> int:
        return self.counts.shape[1]

    @property
    def n_stats(self) -> int:
        return len(self.stat_names)

    def tree(self, b: int) -> Tree:
        s, e = self.offsets[b], self.offsets[b + 1]
        return Tree(
            self.feature[s:e], self.threshold[s:e], self.left[s:e], self.right[s:e],
            self.value[s:e], self.weight[s:e], self.rss[s:e],
            self.counts[b], self.train_leaf[b],
        )

    def apply(self, X) -> np.ndarray:
        """(B, m) local leaf index of each query in each tree."""
        X = _as_matrix(X, self.n_stats)
        return _kernels.apply_forest(self.offsets, self.feature, self.threshold, self.left, self.right, X)

    def predict(self, X) -> np.ndarray:
        leaf = self.apply(X)
        return _kernels.leaf_values(leaf, self.offsets, self.value).mean(axis=0)

    def weights_matrix(self, X) -> np.ndarray:
        """(m, N) quantile-forest weights for each query row."""
        leaf = self.apply(X)
        if self._members is None:
            self._members = _kernels.leaf_members(self.offsets, self.train_leaf, self.counts)
        start, members = self._members
        return _kernels.forest_weights_csr(leaf, self.offsets, self.counts, self.weight, start, members)

    def first(self, count: int) -> "Forest":
        """The first ``count`` trees; equal to a forest trained with ``tree_count=count``."""
        if not 1 <= count <= self.tree_count:
            raise ValueError(f"count must lie in [1, {self.tree_count}]")
        end = self.offsets[count]
        return Forest(
            config=replace(self.config, tree_count=count),
            stat_names=self.stat_names,
            response_name=self.response_name,
            responses=self.responses,
            train_stats=self.train_stats,
            counts=self.counts[:count].copy(),
            offsets=self.offsets[: count + 1].copy(),
            feature=self.feature[:end].copy(),
            threshold=self.threshold[:end].copy(),
            left=self.left[:end].copy(),
            right=self.right[:end].copy(),
            value=self.value[:end].copy(),
            weight=self.weight[:end].copy(),
            rss=self.rss[:end].copy(),
            train_leaf=self.train_leaf[:count].copy(),
        )

    def node_decrease(self) -> np.ndarray:
        return np.concatenate([self.tree(b).decrease() for b in range(self.tree_count)])

    # -- serialization -------------------------------------------------------

    _ARRAYS = (
        "responses", "train_stats", "counts", "offsets", "feature", "threshold",
        "left", "right", "value", "weight", "rss", "train_leaf",
    )

    def to_dict(self) -> dict:
        return {
            "format": "abcf-forest",
            "version": FORMAT_VERSION,
            "config": asdict(self.config),
            "seed": self.config.seed,
            "stat_names": list(self.stat_names),
            "response_name": self.response_name,
            "arrays": {name: _encode(getattr(self, name)) for name in self._ARRAYS},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        if d.get("format") != "abcf-forest":
            raise ValueError("not a forest file")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported forest format version {d.get('version')}")
        arrays = {name: _decode(d["arrays"][name]) for name in cls._ARRAYS}
        return cls(
            config=ForestConfig(**d["config"]),
            stat_names=tuple(d["stat_names"]),
            response_name=d["response_name"],
            **arrays,
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Forest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _encode(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {
        "dtype": a.dtype.str,
        "shape": list(a.shape),
        "data": base64.b64encode(zlib.compress(a.tobytes(), 6)).decode("ascii"),
    }


def _decode(d: dict) -> np.ndarray:
    raw = zlib.decompress(base64.b64decode(d["data"]))
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()


# ---------------------------------------------------------------------------
# training


def bootstrap_counts(n: int, tree_count: int, seed: int) -> np.ndarray:
    counts = np.empty((tree_count, n), dtype=np.int32)
    for b in range(tree_count):
        rng = np.random.default_rng(derive_seed(seed, "bootstrap", b))
        counts[b] = np.bincount(rng.integers(0, n, size=n), minlength=n)
    return counts


def fit(
    X: np.ndarray,
    y: np.ndarray,
    config: ForestConfig,
    stat_names: Sequence[str] | None = None,
    response_name: str = "response",
    threads: int | None = None,
) -> Forest:
    """Fit a forest on covariates ``X`` (N x k) and response ``y``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (N, k) and y must be (N,)")
    n, k = X.shape
    if n < 2:
        raise ValueError("training needs at least two records")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data contain non-finite values")
    stat_names = tuple(stat_names) if stat_names is not None else tuple(f"x{j}" for j in range(k))
    if len(stat_names) != k:
        raise ValueError("stat_names does not match X")
    mtry = config.resolved_mtry(k)
    B = config.tree_count

    counts = bootstrap_counts(n, B, config.seed)
    Xt = np.ascontiguousarray(X.T)
    order = np.ascontiguousarray(np.argsort(Xt, axis=1, kind="stable").astype(np.int32))
    node_seed = np.uint64(derive_seed(config.seed, "nodes"))

    def grow(b):
        return _kernels.grow_tree(Xt, y, counts[b], order, mtry, config.min_node_size, node_seed, b)

    threads = threads or default_threads()
    if threads > 1 and B > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(grow, range(B)))
    else:
        trees = [grow(b) for b in range(B)]

    sizes = np.array([t[0].size for t in trees], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    cols = [np.concatenate([t[i] for t in trees]) for i in range(7)]
    forest = Forest(
        config=config,
        stat_names=stat_names,
        response_name=response_name,
        responses=y.copy(),
        train_stats=X.copy(),
        counts=counts,
        offsets=offsets,
        feature=cols[0],
        threshold=cols[1],
        left=cols[2],
        right=cols[3],
        value=cols[4],
        weight=cols[5],
        rss=cols[6],
        train_leaf=np.empty((0, n), dtype=np.int32),
    )
    forest.train_leaf = _kernels.apply_forest(
        offsets, forest.feature, forest.threshold, forest.left, forest.right, X
    )
    return forest


def train(
    table: ReferenceTable,
    response,
    config: ForestConfig = ForestConfig(),
    threads: int | None = None,
) -> Forest:
    """Fit a forest predicting ``response`` from the table's statistics."""
    name, y = resolve_response(table, response)
    return fit(table.stats, y, config, table.stat_names, name, threads)


def predict_mean(forest: Forest, query) -> float:
    return float(forest.predict(_as_matrix(query, forest.n_stats))[0])
