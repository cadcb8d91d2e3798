"""Global interpretation tree distilled from the contribution matrix.

Recursive partitioning over raw feature values, guided by the mean absolute
contribution of each feature within a node and scored by variance reduction
of the model's predicted probability. The tree explains the model, so the
split target is always the model's probability, never the ground truth.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import EmptyMatrix, LengthMismatch, NoMatchingRule
from .shap import ContributionMatrix
from .tabular import TabularDataset


@dataclass(frozen=True)
class GirpParams:
    max_depth: int = 3
    min_leaf: int = 50
    top_k_features: int = 10
    n_thresholds: int = 32
    min_reduction: float = 1e-6


@dataclass
class InterpretationNode:
    support: int
    mean_proba: float
    n_high: int                      # instances with model_proba >= 0.5
    feature_index: int = -1          # -1 marks a leaf
    threshold: float = 0.0
    left: "InterpretationNode | None" = None
    right: "InterpretationNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature_index < 0

    @property
    def default_rate(self) -> float:
        return self.mean_proba


@dataclass(frozen=True)
class Rule:
    conditions: tuple[tuple[int, str, float], ...]   # (feature, "<" | ">=", threshold)
    default_rate: float
    support: int


@dataclass
class RuleSet:
    rules: list[Rule]
    feature_names: list[str]


def _candidate_thresholds(vals: np.ndarray, k: int) -> np.ndarray:
    """Up to k cut points: node-local quantiles snapped to midpoints between
    adjacent distinct values, so both sides of every cut are nonempty."""
    u = np.unique(vals)
    if len(u) < 2:
        return np.empty(0)
    qs = np.quantile(vals, np.linspace(0.0, 1.0, k + 2)[1:-1])
    pos = np.clip(np.searchsorted(u, qs, side="right"), 1, len(u) - 1)
    return np.unique((u[pos - 1] + u[pos]) / 2.0)


def build_tree(cm: ContributionMatrix, ds: TabularDataset,
               params: GirpParams = GirpParams()) -> InterpretationNode:
    if cm.n_rows == 0:
        raise EmptyMatrix("contribution matrix has no rows")
    if cm.n_rows != ds.n_rows:
        raise LengthMismatch(f"{cm.n_rows} contribution rows vs {ds.n_rows} dataset rows")
    X = ds.matrix()
    proba = cm.model_proba
    abs_phi = np.abs(cm.phi)

    def grow(idx: np.ndarray, depth: int) -> InterpretationNode:
        p = proba[idx]
        node = InterpretationNode(len(idx), float(p.mean()), int((p >= 0.5).sum()))
        if depth >= params.max_depth or len(idx) < params.min_leaf:
            return node

        ranked = np.argsort(-abs_phi[idx].mean(axis=0), kind="stable")
        candidates = np.sort(ranked[: params.top_k_features])
        parent_var = float(p.var())
        n = len(idx)
        best_red, best_f, best_thr = -np.inf, -1, 0.0
        for f in candidates:
            vals = X[idx, f]
            for thr in _candidate_thresholds(vals, params.n_thresholds):
                mask = vals < thr
                nl = int(mask.sum())
                pl, pr = p[mask], p[~mask]
                red = parent_var - (nl * pl.var() + (n - nl) * pr.var()) / n
                if red > best_red:
                    best_red, best_f, best_thr = red, int(f), float(thr)
        if best_f < 0 or best_red < params.min_reduction:
            return node

        mask = X[idx, best_f] < best_thr
        node.feature_index = best_f
        node.threshold = best_thr
        node.left = grow(idx[mask], depth + 1)
        node.right = grow(idx[~mask], depth + 1)
        return node

    return grow(np.arange(ds.n_rows), 0)


def _rates_differ(left: InterpretationNode, right: InterpretationNode,
                  alpha: float, min_rate_gap: float) -> bool:
    if abs(left.mean_proba - right.mean_proba) < min_rate_gap:
        return False
    n1, n2 = left.support, right.support
    pooled = (left.n_high + right.n_high) / (n1 + n2)
    se = np.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    if se == 0.0:
        return False
    z = (left.n_high / n1 - right.n_high / n2) / se
    return abs(z) > NormalDist().inv_cdf(1.0 - alpha / 2.0)


def prune_tree(tree: InterpretationNode, alpha: float = 0.05,
               min_rate_gap: float = 0.05) -> InterpretationNode:
    """Collapse splits whose children's default rates are statistically or
    practically indistinguishable; cascades bottom-up to a fixpoint."""

    def walk(node: InterpretationNode) -> InterpretationNode:
        if node.is_leaf:
            return InterpretationNode(node.support, node.mean_proba, node.n_high)
        left, right = walk(node.left), walk(node.right)
        if left.is_leaf and right.is_leaf and not _rates_differ(left, right, alpha, min_rate_gap):
            return InterpretationNode(node.support, node.mean_proba, node.n_high)
        out = InterpretationNode(node.support, node.mean_proba, node.n_high,
                                 node.feature_index, node.threshold, left, right)
        return out

    return walk(tree)


def extract_rules(tree: InterpretationNode, feature_names) -> RuleSet:
    """One rule per leaf, left-to-right; repeated bounds on a feature merge
    into the tightest interval."""
    rules: list[Rule] = []

    def walk(node: InterpretationNode, path: list[tuple[int, str, float]]):
        if node.is_leaf:
            rules.append(Rule(_merge_conditions(path), node.mean_proba, node.support))
            return
        walk(node.left, path + [(node.feature_index, "<", node.threshold)])
        walk(node.right, path + [(node.feature_index, ">=", node.threshold)])

    walk(tree, [])
    return RuleSet(rules, list(feature_names))


def _merge_conditions(path) -> tuple[tuple[int, str, float], ...]:
    upper: dict[int, float] = {}
    lower: dict[int, float] = {}
    order: list[int] = []
    for f, op, thr in path:
        if f not in order:
            order.append(f)
        if op == "<":
            upper[f] = min(upper.get(f, np.inf), thr)
        else:
            lower[f] = max(lower.get(f, -np.inf), thr)
    out = []
    for f in order:
        if f in lower:
            out.append((f, ">=", lower[f]))
        if f in upper:
            out.append((f, "<", upper[f]))
    return tuple(out)


def rule_satisfied(rule: Rule, x: np.ndarray) -> bool:
    for f, op, thr in rule.conditions:
        if op == "<":
            if not x[f] < thr:
                return False
        elif not x[f] >= thr:
            return False
    return True


def tree_classify(tree_or_rules, x, cutoff: float = 0.5) -> int:
    """1 = Bad when the matched leaf's default rate clears the cutoff."""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(tree_or_rules, InterpretationNode):
        node = tree_or_rules
        while not node.is_leaf:
            node = node.left if x[node.feature_index] < node.threshold else node.right
        return int(node.default_rate >= cutoff)
    matches = [r for r in tree_or_rules.rules if rule_satisfied(r, x)]
    if len(matches) != 1:
        raise NoMatchingRule(f"{len(matches)} rules matched; rule set does not tile the space")
    return int(matches[0].default_rate >= cutoff)


def classify_matrix(tree: InterpretationNode, X: np.ndarray, cutoff: float = 0.5) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    rates = np.empty(X.shape[0])

    def walk(node: InterpretationNode, idx: np.ndarray):
        if node.is_leaf:
            rates[idx] = node.default_rate
            return
        mask = X[idx, node.feature_index] < node.threshold
        walk(node.left, idx[mask])
        walk(node.right, idx[~mask])

    walk(tree, np.arange(X.shape[0]))
    return (rates >= cutoff).astype(np.int8)


def format_condition(name: str, op: str, threshold: float) -> str:
    """Indicator columns named feature=category render as equalities."""
    if "=" in name and 0.0 < threshold < 1.0:
        base, _, cat = name.partition("=")
        return f"{base} = {cat}" if op == ">=" else f"{base} != {cat}"
    return f"{name} {op} {threshold:.4g}"


def render_tree(tree: InterpretationNode, feature_names) -> str:
    """Plain-text tree (yes branch above no branch) plus the rule listing."""
    lines: list[str] = []

    def walk(node: InterpretationNode, indent: int, label: str):
        pad = "  " * indent
        if node.is_leaf:
            lines.append(f"{pad}{label}default rate {node.default_rate:.4f}  [n={node.support}]")
            return
        cond = format_condition(feature_names[node.feature_index], "<", node.threshold)
        lines.append(f"{pad}{label}{cond}  [n={node.support}, rate={node.mean_proba:.4f}]")
        walk(node.left, indent + 1, "yes: ")
        walk(node.right, indent + 1, "no:  ")

    walk(tree, 0, "")
    rules = extract_rules(tree, feature_names)
    lines.append("")
    lines.append("Rules:")
    for i, rule in enumerate(rules.rules, start=1):
        if rule.conditions:
            cond = " AND ".join(format_condition(feature_names[f], op, t)
                                for f, op, t in rule.conditions)
        else:
            cond = "always"
        lines.append(f"  {i}. IF {cond} THEN default rate {rule.default_rate:.4f}  [n={rule.support}]")
    return "\n".join(lines) + "\n"


def tree_to_json(tree: InterpretationNode, feature_names) -> dict:
    def walk(node: InterpretationNode) -> dict:
        if node.is_leaf:
            return {"default_rate": node.default_rate, "support": node.support}
        return {
            "feature": feature_names[node.feature_index],
            "threshold": node.threshold,
            "support": node.support,
            "mean_proba": node.mean_proba,
            "left": walk(node.left),
            "right": walk(node.right),
        }

    return walk(tree)


def rules_to_json(rules: RuleSet) -> list[dict]:
    return [
        {
            "conditions": [
                {"feature": rules.feature_names[f], "op": op, "threshold": thr}
                for f, op, thr in r.conditions
            ],
            "default_rate": r.default_rate,
            "support": r.support,
        }
        for r in rules.rules
    ]


def write_rules_csv(rules: RuleSet, path) -> None:
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["conditions", "default_rate", "support"])
        for r in rules.rules:
            cond = " AND ".join(format_condition(rules.feature_names[f], op, t)
                                for f, op, t in r.conditions)
            writer.writerow([cond, repr(r.default_rate), r.support])


def save_tree_json(tree: InterpretationNode, feature_names, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tree_to_json(tree, feature_names), fh, indent=1)
        fh.write("\n")
