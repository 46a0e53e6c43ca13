"""Random forest membership model: bagged CART with Gini splits.

Each tree is grown on a bootstrap resample; at every node only ``mtry``
randomly chosen features are considered. Predictions average the leaf
class-1 proportions across trees. Probabilities for the training rows are
out-of-bag averages (rows in-bag for every tree fall back to the all-tree
average), matching how bagged ensembles are evaluated on their own data;
new rows use all trees.

Reproducibility contract: everything derives from one 64-bit seed through
counter-based substreams (per-tree bootstrap streams and per-node feature
draws), so results do not depend on thread count or tree order.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..data_model import DataTable
from ..errors import DataError, DegenerateFeaturesError
from . import _tree
from .base import RANDOM_FOREST, MembershipModel
from .logistic import _check_classes


@dataclass(frozen=True)
class ForestConfig:
    """Hyperparameters mirroring the usual bagged-CART defaults."""

    n_trees: int = 500
    mtry: int | None = None  # default floor(sqrt(n_features))
    min_leaf: int = 1
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.min_leaf < 1:
            raise DataError("n_trees and min_leaf must be positive")
        if self.mtry is not None and self.mtry < 1:
            raise DataError("mtry must be positive")
        if self.max_depth is not None and self.max_depth < 1:
            raise DataError("max_depth must be positive")


@dataclass
class Forest:
    """Packed ensemble: per-tree node arrays concatenated with offsets."""

    features: np.ndarray
    thresholds: np.ndarray
    lefts: np.ndarray
    rights: np.ndarray
    values: np.ndarray
    offsets: np.ndarray
    feature_names: tuple[str, ...]

    @property
    def n_trees(self) -> int:
        return self.offsets.shape[0] - 1

    def mean_leaf_values(self, X: np.ndarray) -> np.ndarray:
        return _tree.forest_mean_leaf_values(
            X, self.features, self.thresholds, self.lefts, self.rights, self.values, self.offsets
        )


def feature_matrix(table: DataTable, variables=None):
    """Numeric features for the trees: continuous as-is, categoricals one-hot.

    Trees do not need reference coding, so every level gets an indicator.
    """
    if variables is None:
        variables = [v.name for v in table.schema]
    names: list[str] = []
    cols: list[np.ndarray] = []
    for name in variables:
        var = table.var(name)
        col = table.column(name)
        if var.is_categorical:
            for code, level in enumerate(var.levels):
                names.append(f"{name}={level}")
                cols.append((col == code).astype(np.float64))
        else:
            names.append(name)
            cols.append(col.astype(np.float64))
    return names, np.column_stack(cols)


def _tree_seeds(seed: int, n_trees: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(n_trees, dtype=np.uint64)


def fit_random_forest(
    table: DataTable,
    C,
    cfg: ForestConfig = ForestConfig(),
    variables=None,
) -> MembershipModel:
    """Fit the bagged ensemble P(C=1 | features)."""
    C = _check_classes(C)
    y = C.astype(np.int64)
    if table.n < 2:
        raise DataError("need at least two rows")
    names, X = feature_matrix(table, variables)
    if all(X[:, j].max() == X[:, j].min() for j in range(X.shape[1])):
        raise DegenerateFeaturesError("all candidate features are constant")

    n, q = X.shape
    mtry = cfg.mtry if cfg.mtry is not None else max(1, math.floor(math.sqrt(q)))
    if mtry > q:
        raise DataError(f"mtry={mtry} exceeds the {q} available features")
    max_depth = -1 if cfg.max_depth is None else cfg.max_depth
    seeds = _tree_seeds(cfg.seed, cfg.n_trees)

    max_nodes = 2 * n + 1
    feat = np.empty(max_nodes, dtype=np.int64)
    thr = np.empty(max_nodes)
    lft = np.empty(max_nodes, dtype=np.int64)
    rgt = np.empty(max_nodes, dtype=np.int64)
    val = np.empty(max_nodes)

    chunks = {k: [] for k in ("feat", "thr", "lft", "rgt", "val")}
    sizes = np.empty(cfg.n_trees, dtype=np.int64)
    in_bag = np.zeros((cfg.n_trees, n), dtype=np.int16)
    for t in range(cfg.n_trees):
        rng = np.random.Generator(np.random.Philox(key=seeds[t]))
        boot = rng.integers(0, n, size=n)
        np.add.at(in_bag[t], boot, 1)
        n_nodes = _tree.grow_tree(
            X, y, boot, mtry, cfg.min_leaf, max_depth, seeds[t], feat, thr, lft, rgt, val
        )
        sizes[t] = n_nodes
        chunks["feat"].append(feat[:n_nodes].copy())
        chunks["thr"].append(thr[:n_nodes].copy())
        chunks["lft"].append(lft[:n_nodes].copy())
        chunks["rgt"].append(rgt[:n_nodes].copy())
        chunks["val"].append(val[:n_nodes].copy())

    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    forest = Forest(
        features=np.concatenate(chunks["feat"]),
        thresholds=np.concatenate(chunks["thr"]),
        lefts=np.concatenate(chunks["lft"]),
        rights=np.concatenate(chunks["rgt"]),
        values=np.concatenate(chunks["val"]),
        offsets=offsets,
        feature_names=tuple(names),
    )

    oob_sum, oob_cnt = _tree.forest_oob_leaf_values(
        X,
        forest.features,
        forest.thresholds,
        forest.lefts,
        forest.rights,
        forest.values,
        forest.offsets,
        in_bag,
    )
    has_oob = oob_cnt > 0
    fitted = forest.mean_leaf_values(X)  # fallback for always-in-bag rows
    fitted[has_oob] = oob_sum[has_oob] / oob_cnt[has_oob]
    oob_error = float(np.mean((fitted[has_oob] > 0.5) != (y[has_oob] == 1))) if has_oob.any() else math.nan

    return MembershipModel(
        method=RANDOM_FOREST,
        parameters={
            "forest": forest,
            "fitted_probabilities": fitted,
            "feature_names": list(names),
            "variables": [v.name for v in table.schema] if variables is None else list(variables),
            "config": cfg,
        },
        design=None,
        diagnostics={
            "oob_error": oob_error,
            "oob_coverage": float(np.mean(has_oob)),
            "mean_nodes": float(sizes.mean()),
        },
    )


def forest_probabilities(model: MembershipModel, table: DataTable | None) -> np.ndarray:
    if table is None:
        return model.parameters["fitted_probabilities"].copy()
    _, X = feature_matrix(table, model.parameters["variables"])
    if X.shape[1] != len(model.parameters["feature_names"]):
        raise DataError("feature columns do not match the fitted forest")
    return model.parameters["forest"].mean_leaf_values(X)
