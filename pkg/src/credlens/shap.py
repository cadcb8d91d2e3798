"""Per-prediction feature contributions for the boosted ensemble.

Contributions are Shapley values of the conditional-expectation game in
which off-path branches are weighted by training cover ratios. They live on
the margin (log-odds) scale, where they are exactly additive:
base_value + sum(phi) equals the predicted margin.

`brute_force_shap` evaluates the same game by full subset enumeration and
exists to cross-check the fast path.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from math import factorial

import numpy as np

from . import gbdt, kernels
from .errors import SchemaMismatch, TooManyFeatures, ZeroCover
from .gbdt import GbdtModel, _check_vector
from .tabular import TabularDataset

BRUTE_FORCE_MAX_FEATURES = 20


@dataclass
class ShapVector:
    phi: np.ndarray
    base_value: float


@dataclass
class ContributionMatrix:
    phi: np.ndarray            # (n_rows, n_features), margin scale
    base_value: float
    feature_names: list[str]
    instance_ids: np.ndarray
    model_proba: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.phi.shape[0]


def _check_covers(model: GbdtModel) -> None:
    for t, tree in enumerate(model.trees):
        if (tree.cover <= 0.0).any():
            raise ZeroCover(f"tree {t} has a node with nonpositive cover")


def expected_margin(model: GbdtModel) -> float:
    """Cover-weighted mean margin: each leaf weighted by the product of
    child/parent cover ratios along its path."""
    _check_covers(model)
    total = model.base_score
    for tree in model.trees:
        stack = [(0, 1.0)]
        while stack:
            i, prob = stack.pop()
            if tree.feature[i] < 0:
                total += prob * tree.value[i]
            else:
                l, r = tree.left[i], tree.right[i]
                stack.append((r, prob * tree.cover[r] / tree.cover[i]))
                stack.append((l, prob * tree.cover[l] / tree.cover[i]))
    return float(total)


def tree_shap(model: GbdtModel, x) -> ShapVector:
    """Exact contributions via the polynomial-time path algorithm."""
    x = _check_vector(model, x)
    _check_covers(model)
    X = np.ascontiguousarray(x[None, :])
    phi = np.zeros((1, model.n_features))
    for tree in model.trees:
        kernels.tree_shap_matrix(tree.left, tree.right, tree.feature,
                                 tree.threshold, tree.value, tree.cover, X, phi)
    return ShapVector(phi[0], expected_margin(model))


def _subset_expectation(tree, x, mask: int) -> float:
    # features in `mask` follow x; the rest average over children by cover
    def walk(i: int) -> float:
        f = tree.feature[i]
        if f < 0:
            return float(tree.value[i])
        if (mask >> f) & 1:
            return walk(tree.left[i] if x[f] < tree.threshold[i] else tree.right[i])
        l, r = tree.left[i], tree.right[i]
        return (tree.cover[l] * walk(l) + tree.cover[r] * walk(r)) / tree.cover[i]

    return walk(0)


def brute_force_shap(model: GbdtModel, x) -> ShapVector:
    """Shapley values by enumerating all feature subsets. Testing oracle;
    conditioning rule is identical to tree_shap's."""
    x = _check_vector(model, x)
    _check_covers(model)
    d = model.n_features
    if d > BRUTE_FORCE_MAX_FEATURES:
        raise TooManyFeatures(f"{d} features; enumeration is capped at {BRUTE_FORCE_MAX_FEATURES}")

    v = np.empty(2 ** d)
    for mask in range(2 ** d):
        v[mask] = model.base_score + sum(
            _subset_expectation(tree, x, mask) for tree in model.trees)

    weight = [factorial(s) * factorial(d - 1 - s) / factorial(d) for s in range(d)]
    phi = np.zeros(d)
    for mask in range(2 ** d):
        s = bin(mask).count("1")
        if s == d:
            continue
        w = weight[s]
        for i in range(d):
            if not (mask >> i) & 1:
                phi[i] += w * (v[mask | (1 << i)] - v[mask])
    return ShapVector(phi, float(v[0]))


def contribution_matrix(model: GbdtModel, ds: TabularDataset,
                        instance_ids=None) -> ContributionMatrix:
    """tree_shap for every dataset row, plus the model's probabilities."""
    if list(ds.schema.feature_names) != list(model.feature_names):
        raise SchemaMismatch("dataset features do not match the model")
    X = np.ascontiguousarray(ds.matrix())
    base = expected_margin(model)
    phi = np.zeros((X.shape[0], model.n_features))
    for tree in model.trees:
        kernels.tree_shap_matrix(tree.left, tree.right, tree.feature,
                                 tree.threshold, tree.value, tree.cover, X, phi)
    if X.shape[0]:
        margins = gbdt.predict_margin_matrix(model, X)
        err = np.abs(base + phi.sum(axis=1) - margins)
        tol = 1e-9 * np.maximum(1.0, np.abs(margins))
        assert (err <= tol).all(), f"additivity violated: worst error {err.max()}"
        proba = gbdt._sigmoid(margins)
    else:
        proba = np.empty(0)
    if instance_ids is None:
        instance_ids = np.arange(X.shape[0])
    return ContributionMatrix(phi, base, list(model.feature_names),
                              np.asarray(instance_ids), proba)


def write_contributions_csv(cm: ContributionMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_id", *cm.feature_names, "base_value", "model_proba"])
        for i in range(cm.n_rows):
            writer.writerow([
                int(cm.instance_ids[i]),
                *(repr(v) for v in cm.phi[i]),
                repr(cm.base_value),
                repr(float(cm.model_proba[i])),
            ])
