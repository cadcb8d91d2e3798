"""Gradient-boosted regression trees with logistic loss.

Second-order boosting with exact greedy splits over sorted unique values.
Trees are additive on the log-odds (margin) scale; every node stores its
cover (sum of training hessians routed through it), which the SHAP module
uses as conditional-probability weights.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import CorruptModel, DataError, DimensionMismatch, NonFiniteInput, VersionMismatch

MODEL_FORMAT_VERSION = 1

GOOD, BAD = "Good", "Bad"


def label_name(code: int) -> str:
    return BAD if code == 1 else GOOD


@dataclass(frozen=True)
class TrainParams:
    n_trees: int = 300
    max_depth: int = 4
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise DataError("n_trees must be at least 1")
        if self.max_depth < 1:
            raise DataError("max_depth must be at least 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise DataError("learning_rate must be in (0, 1]")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise DataError("regularization parameters must be nonnegative")


@dataclass
class Tree:
    """One regression tree in flat arrays. feature < 0 marks a leaf; rows with
    x[feature] < threshold go left."""

    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def to_node(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"weight": float(self.value[i]), "cover": float(self.cover[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "cover": float(self.cover[i]),
            "left": self.to_node(self.left[i]),
            "right": self.to_node(self.right[i]),
        }

    @classmethod
    def from_node(cls, node: dict) -> "Tree":
        left, right, feature, threshold, value, cover = [], [], [], [], [], []

        def walk(rec) -> int:
            i = len(feature)
            if "weight" in rec:
                feature.append(-1)
                threshold.append(0.0)
                value.append(float(rec["weight"]))
                cover.append(float(rec["cover"]))
                left.append(-1)
                right.append(-1)
                return i
            feature.append(int(rec["feature"]))
            threshold.append(float(rec["threshold"]))
            value.append(0.0)
            cover.append(float(rec["cover"]))
            left.append(-1)
            right.append(-1)
            left[i] = walk(rec["left"])
            right[i] = walk(rec["right"])
            return i

        walk(node)
        return cls(
            np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
            np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
            np.array(value, dtype=np.float64), np.array(cover, dtype=np.float64),
        )


@dataclass
class GbdtModel:
    trees: list[Tree]
    base_score: float
    learning_rate: float
    feature_names: list[str]
    params: TrainParams
    train_logloss: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


def _sigmoid(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _logloss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-15, 1.0 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


class _TreeBuilder:
    def __init__(self, X, g, h, params: TrainParams):
        self.X = X
        self.g = g
        self.h = h
        self.p = params
        self.left: list[int] = []
        self.right: list[int] = []
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.value: list[float] = []
        self.cover: list[float] = []

    def _new_node(self) -> int:
        for a in (self.left, self.right, self.feature):
            a.append(-1)
        for a in (self.threshold, self.value, self.cover):
            a.append(0.0)
        return len(self.feature) - 1

    def build(self, rows: np.ndarray, depth: int) -> int:
        i = self._new_node()
        g_sum = float(self.g[rows].sum())
        h_sum = float(self.h[rows].sum())
        self.cover[i] = h_sum

        best_gain, best_f, best_thr = 0.0, -1, 0.0
        if depth < self.p.max_depth and len(rows) >= 2:
            Xn = self.X[rows]
            gn = self.g[rows]
            hn = self.h[rows]
            for f in range(self.X.shape[1]):
                order = np.argsort(Xn[:, f], kind="stable")
                gain, thr = kernels.best_split(
                    np.ascontiguousarray(Xn[order, f]),
                    np.ascontiguousarray(gn[order]),
                    np.ascontiguousarray(hn[order]),
                    g_sum, h_sum,
                    self.p.reg_lambda, self.p.gamma, self.p.min_child_weight,
                )
                if gain > best_gain:
                    best_gain, best_f, best_thr = gain, f, thr

        if best_f < 0:
            self.value[i] = -g_sum / (h_sum + self.p.reg_lambda) * self.p.learning_rate
            return i
        self.feature[i] = best_f
        self.threshold[i] = best_thr
        mask = self.X[rows, best_f] < best_thr
        self.left[i] = self.build(rows[mask], depth + 1)
        self.right[i] = self.build(rows[~mask], depth + 1)
        return i

    def tree(self) -> Tree:
        return Tree(
            np.array(self.left, dtype=np.int64), np.array(self.right, dtype=np.int64),
            np.array(self.feature, dtype=np.int64), np.array(self.threshold, dtype=np.float64),
            np.array(self.value, dtype=np.float64), np.array(self.cover, dtype=np.float64),
        )


def train(X: np.ndarray, y: np.ndarray, feature_names, params: TrainParams) -> GbdtModel:
    """Fit the boosted ensemble; training log-loss must not increase."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(y) != X.shape[0]:
        raise DimensionMismatch(f"X {X.shape} vs y {y.shape}")
    if len(feature_names) != X.shape[1]:
        raise DimensionMismatch("feature_names does not match X width")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise NonFiniteInput("training data contains NaN or inf")

    p_mean = float(np.clip(y.mean(), 1e-12, 1.0 - 1e-12))
    base_score = float(np.log(p_mean / (1.0 - p_mean)))
    margins = np.full(X.shape[0], base_score)
    rows = np.arange(X.shape[0])

    trees: list[Tree] = []
    losses: list[float] = [_logloss(y, _sigmoid(margins))]
    for _ in range(params.n_trees):
        prob = _sigmoid(margins)
        g = prob - y
        h = prob * (1.0 - prob)
        builder = _TreeBuilder(X, g, h, params)
        builder.build(rows, 0)
        tree = builder.tree()
        trees.append(tree)
        kernels.margin_matrix(tree.left, tree.right, tree.feature,
                              tree.threshold, tree.value, X, margins)
        losses.append(_logloss(y, _sigmoid(margins)))
        assert losses[-1] <= losses[-2] + 1e-12, (
            f"log-loss rose at round {len(trees)}: {losses[-2]} -> {losses[-1]}")

    return GbdtModel(trees, base_score, params.learning_rate, list(feature_names),
                     params, losses[1:])


def _check_vector(model: GbdtModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise DimensionMismatch(f"expected {model.n_features} features, got {x.shape}")
    if not np.isfinite(x).all():
        raise NonFiniteInput("instance contains NaN or inf")
    return x


def predict_margin(model: GbdtModel, x) -> float:
    x = _check_vector(model, x)
    return float(predict_margin_matrix(model, x[None, :])[0])


def predict_margin_matrix(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DimensionMismatch(f"expected width {model.n_features}, got {X.shape}")
    out = np.full(X.shape[0], model.base_score)
    for tree in model.trees:
        kernels.margin_matrix(tree.left, tree.right, tree.feature,
                              tree.threshold, tree.value, X, out)
    return out


def predict_proba(model: GbdtModel, x) -> float:
    return float(_sigmoid(np.array([predict_margin(model, x)]))[0])


def predict_proba_matrix(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    return _sigmoid(predict_margin_matrix(model, X))


def predict_label(model: GbdtModel, x, cutoff: float = 0.5) -> int:
    """1 = Bad (default predicted), 0 = Good."""
    return int(predict_proba(model, x) >= cutoff)


def predict_label_matrix(model: GbdtModel, X: np.ndarray, cutoff: float = 0.5) -> np.ndarray:
    return (predict_proba_matrix(model, X) >= cutoff).astype(np.int8)


def label_fn(model: GbdtModel, cutoff: float = 0.5):
    """Matrix-in, labels-out closure for the model-agnostic explainers."""
    return lambda X: predict_label_matrix(model, X, cutoff)


def save_model(model: GbdtModel, path) -> None:
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "feature_names": model.feature_names,
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "params": asdict(model.params),
        "train_logloss": model.train_logloss,
        "trees": [t.to_node() for t in model.trees],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> GbdtModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CorruptModel(str(e)) from None
    if not isinstance(doc, dict) or "version" not in doc:
        raise CorruptModel("missing version field")
    if doc["version"] != MODEL_FORMAT_VERSION:
        raise VersionMismatch(f"model format {doc['version']!r} not supported")
    try:
        params = TrainParams(**doc["params"])
        trees = [Tree.from_node(rec) for rec in doc["trees"]]
        return GbdtModel(trees, float(doc["base_score"]), float(doc["learning_rate"]),
                         list(doc["feature_names"]), params,
                         [float(v) for v in doc.get("train_logloss", [])])
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptModel(f"malformed model document: {e}") from None
