"""Classification quality and explanation-quality scoring.

Explanation completeness is always fidelity to the MODEL's labels, not the
ground truth: it measures how well the rules reproduce the classifier. The
Type-I/Type-II convention used throughout is embedded in every report so the
numbers are unambiguous.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import Anchor
from .errors import EmptyRuleSet, LengthMismatch, NoMatchingRule
from .girp import Rule, RuleSet, rule_satisfied
from .tabular import TabularDataset

TYPE_ERROR_CONVENTION = (
    "positive class = Bad; Type-I = Good loan rejected (false positive), "
    "Type-II = Bad loan accepted (false negative)"
)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class ExplanationMetrics:
    n_unique_rules: int
    avg_conditions: float
    consistent: bool
    completeness_pct: float


def confusion(model_labels, reference_labels) -> ConfusionCounts:
    m = np.asarray(model_labels)
    r = np.asarray(reference_labels)
    if len(m) != len(r) or len(m) == 0:
        raise LengthMismatch(f"{len(m)} predictions vs {len(r)} labels")
    return ConfusionCounts(
        tp=int(((m == 1) & (r == 1)).sum()),
        fp=int(((m == 1) & (r == 0)).sum()),
        tn=int(((m == 0) & (r == 0)).sum()),
        fn=int(((m == 0) & (r == 1)).sum()),
    )


def f1_report(cc: ConfusionCounts) -> dict:
    precision = cc.tp / (cc.tp + cc.fp) if cc.tp + cc.fp else 0.0
    recall = cc.tp / (cc.tp + cc.fn) if cc.tp + cc.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "accuracy": (cc.tp + cc.tn) / cc.total,
    }


def type_errors(cc: ConfusionCounts) -> dict:
    return {"type1": cc.fp, "type2": cc.fn, "convention": TYPE_ERROR_CONVENTION}


def _intervals(rule: Rule) -> dict[int, tuple[float, float]]:
    # half-open [lo, hi) box implied by the rule's conditions
    box: dict[int, tuple[float, float]] = {}
    for f, op, thr in rule.conditions:
        lo, hi = box.get(f, (-np.inf, np.inf))
        if op == "<":
            hi = min(hi, thr)
        else:
            lo = max(lo, thr)
        box[f] = (lo, hi)
    return box


def _rules_overlap(a: Rule, b: Rule) -> bool:
    box_a, box_b = _intervals(a), _intervals(b)
    for f in set(box_a) | set(box_b):
        lo_a, hi_a = box_a.get(f, (-np.inf, np.inf))
        lo_b, hi_b = box_b.get(f, (-np.inf, np.inf))
        if max(lo_a, lo_b) >= min(hi_a, hi_b):
            return False
    return True


def rules_consistent(rules: RuleSet, cutoff: float = 0.5) -> bool:
    """No two rules with different consequent classes share any point."""
    rs = rules.rules
    for i in range(len(rs)):
        for j in range(i + 1, len(rs)):
            if (rs[i].default_rate >= cutoff) != (rs[j].default_rate >= cutoff):
                if _rules_overlap(rs[i], rs[j]):
                    return False
    return True


def _classify_rows(rules: RuleSet, X: np.ndarray, cutoff: float) -> np.ndarray:
    n = X.shape[0]
    hits = np.zeros(n, dtype=np.int64)
    out = np.zeros(n, dtype=np.int8)
    for rule in rules.rules:
        mask = np.ones(n, dtype=bool)
        for f, op, thr in rule.conditions:
            mask &= X[:, f] < thr if op == "<" else X[:, f] >= thr
        hits += mask
        out[mask] = int(rule.default_rate >= cutoff)
    if (hits != 1).any():
        bad = int(np.flatnonzero(hits != 1)[0])
        raise NoMatchingRule(f"row {bad} matched {int(hits[bad])} rules")
    return out


def rule_metrics(rules: RuleSet, predict_fn, ds: TabularDataset,
                 cutoff: float = 0.5) -> ExplanationMetrics:
    """Score a global rule set: size, complexity, consistency, and fidelity
    of its labels to the model's labels on the given rows."""
    if not rules.rules:
        raise EmptyRuleSet("no rules to score")
    normalized = {tuple(sorted(r.conditions)) for r in rules.rules}
    avg_conditions = float(np.mean([len(r.conditions) for r in rules.rules]))
    consistent = rules_consistent(rules, cutoff)
    X = ds.matrix()
    rule_labels = _classify_rows(rules, X, cutoff)
    model_labels = np.asarray(predict_fn(X))
    completeness = 100.0 * float((rule_labels == model_labels).mean())
    return ExplanationMetrics(len(normalized), avg_conditions, consistent, completeness)


def anchor_batch_metrics(anchor_list: list[Anchor], predict_fn, X: np.ndarray) -> ExplanationMetrics:
    """Score a per-instance anchor batch (one anchor per row of X)."""
    if len(anchor_list) != X.shape[0]:
        raise LengthMismatch(f"{len(anchor_list)} anchors vs {X.shape[0]} instances")
    if not anchor_list:
        raise EmptyRuleSet("no anchors to score")
    model_labels = np.asarray(predict_fn(X))
    agree = [a.predicted_class == int(model_labels[i]) for i, a in enumerate(anchor_list)]
    self_satisfied = all(
        all(p.satisfied(X[i, p.feature_index : p.feature_index + 1])[0] for p in a.predicates)
        for i, a in enumerate(anchor_list)
    )
    keys = {
        tuple((p.feature_index, p.kind, p.lo, p.hi, p.code) for p in a.predicates)
        for a in anchor_list
    }
    return ExplanationMetrics(
        n_unique_rules=len(keys),
        avg_conditions=float(np.mean([len(a.predicates) for a in anchor_list])),
        consistent=self_satisfied,
        completeness_pct=100.0 * float(np.mean(agree)),
    )


def explanation_metrics_json(em: ExplanationMetrics) -> dict:
    return {
        "number_of_unique_rules": em.n_unique_rules,
        "average_number_of_rule_conditions": em.avg_conditions,
        "consistency_of_rules": "Yes" if em.consistent else "No",
        "completeness_rate_pct": em.completeness_pct,
    }


def classification_report_json(cc: ConfusionCounts) -> dict:
    return {
        "counts": {"tp": cc.tp, "fp": cc.fp, "tn": cc.tn, "fn": cc.fn},
        **f1_report(cc),
        "type_errors": type_errors(cc),
    }
