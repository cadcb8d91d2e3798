"""Local anchor rules: conjunctions of predicates built from one instance
that keep the model's prediction with high probability under perturbation.

Perturbations redraw unanchored features from random training rows while
anchored features keep the instance's raw values. Candidate predicates are
raced as bandit arms with Bernoulli KL confidence bounds; after the greedy
search, the shortest prefix of the anchor that still clears the precision
threshold replaces it.

Model access goes through a `predict_fn`: a callable mapping an (n, d)
float matrix to an (n,) array of 0/1 labels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, EmptyTrainingSet

ARM_BUDGET = 10_000  # samples per candidate arm before the race is cut short


@dataclass
class Discretizer:
    edges: list[np.ndarray]          # quartile edges per feature; empty = pass-through
    passthrough: np.ndarray          # bool per feature (binary/one-hot columns)


@dataclass(frozen=True)
class Predicate:
    feature_index: int
    kind: str                        # "bin" | "category"
    lo: float = -np.inf              # bin: lo < v <= hi
    hi: float = np.inf
    code: float = 0.0                # category: v == code

    def satisfied(self, values: np.ndarray) -> np.ndarray:
        if self.kind == "category":
            return values == self.code
        return (values > self.lo) & (values <= self.hi)


@dataclass
class Anchor:
    predicates: tuple[Predicate, ...]
    precision_estimate: float
    precision_lcb: float
    precision_ucb: float
    coverage_estimate: float
    n_samples_used: int
    predicted_class: int
    satisfied: bool                  # precision lcb cleared the threshold
    budget_exhausted: bool = False
    minimized: bool = False

    def __post_init__(self):
        feats = [p.feature_index for p in self.predicates]
        if len(feats) != len(set(feats)):
            raise DataError("anchor predicates must use distinct features")


def fit_discretizer(train_X: np.ndarray) -> Discretizer:
    """Quartile edges per numeric feature; 0/1 columns pass through."""
    train_X = np.asarray(train_X, dtype=np.float64)
    edges: list[np.ndarray] = []
    passthrough = np.zeros(train_X.shape[1], dtype=bool)
    for f in range(train_X.shape[1]):
        col = train_X[:, f]
        distinct = np.unique(col)
        if len(distinct) < 2 or np.isin(distinct, (0.0, 1.0)).all():
            passthrough[f] = True
            edges.append(np.empty(0))
            continue
        edges.append(np.unique(np.quantile(col, (0.25, 0.5, 0.75))))
    return Discretizer(edges, passthrough)


def predicate_for(x: np.ndarray, f: int, disc: Discretizer) -> Predicate:
    """The predicate the instance itself satisfies on feature f."""
    if disc.passthrough[f]:
        return Predicate(f, "category", code=float(x[f]))
    e = disc.edges[f]
    b = int(np.searchsorted(e, x[f], side="left"))
    lo = float(e[b - 1]) if b > 0 else -np.inf
    hi = float(e[b]) if b < len(e) else np.inf
    return Predicate(f, "bin", lo=lo, hi=hi)


def rule_coverage(rule, X: np.ndarray) -> float:
    if X.shape[0] == 0:
        return 0.0
    mask = np.ones(X.shape[0], dtype=bool)
    for p in rule:
        mask &= p.satisfied(X[:, p.feature_index])
    return float(mask.mean())


def sample_perturbations(x, rule, train_X: np.ndarray, n: int, seed: int) -> np.ndarray:
    """n uniformly drawn training rows with the rule's features overwritten
    by the instance's raw values."""
    if train_X.shape[0] == 0:
        raise EmptyTrainingSet("perturbation sampling needs training rows")
    if n < 1:
        raise DataError("need at least one sample")
    rng = np.random.default_rng(seed)
    samples = train_X[rng.integers(0, train_X.shape[0], size=n)].copy()
    for p in rule:
        samples[:, p.feature_index] = x[p.feature_index]
    return samples


def _kl_bernoulli(p: float, q: float) -> float:
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    q = min(max(q, 1e-12), 1.0 - 1e-12)
    return p * math.log(p / q) + (1.0 - p) * math.log((1.0 - p) / (1.0 - q))


def _kl_bound(p_hat: float, level: float, upper: bool) -> float:
    lo, hi = (p_hat, 1.0) if upper else (0.0, p_hat)
    for _ in range(34):
        q = (lo + hi) / 2.0
        if _kl_bernoulli(p_hat, q) > level:
            if upper:
                hi = q
            else:
                lo = q
        else:
            if upper:
                lo = q
            else:
                hi = q
    return (lo + hi) / 2.0


def kl_confidence(p_hat: float, n: int, delta: float) -> tuple[float, float]:
    """Bernoulli confidence interval from the Chernoff-KL inequality."""
    level = math.log(1.0 / delta) / n
    return _kl_bound(p_hat, level, upper=False), _kl_bound(p_hat, level, upper=True)


def estimate_precision(predict_fn, x, rule, train_X, n: int, seed: int,
                       delta: float = 0.05):
    """Fraction of rule-respecting perturbations that keep the instance's
    predicted class, with (lcb, ucb) at confidence delta."""
    x = np.asarray(x, dtype=np.float64)
    target = int(predict_fn(x[None, :])[0])
    samples = sample_perturbations(x, rule, train_X, n, seed)
    est = float((np.asarray(predict_fn(samples)) == target).mean())
    lcb, ucb = kl_confidence(est, n, delta)
    return est, lcb, ucb


@dataclass
class _Arm:
    rule: tuple[Predicate, ...]
    n: int = 0
    hits: int = 0
    est: float = 0.0
    lcb: float = 0.0
    ucb: float = 1.0
    seed_ctr: int = field(default=0, repr=False)

    def update(self, level: float):
        self.est = self.hits / self.n if self.n else 0.0
        self.lcb = _kl_bound(self.est, level / self.n, upper=False) if self.n else 0.0
        self.ucb = _kl_bound(self.est, level / self.n, upper=True) if self.n else 1.0


def find_anchor(predict_fn, x, train_X, tau: float = 0.9, delta: float = 0.05,
                beam: int = 1, batch: int = 100, max_len: int | None = None,
                seed: int = 0) -> Anchor:
    """Greedy (or beam) anchor construction.

    Each round races the one-predicate extensions of the current rule(s) as
    bandit arms, sampling the leader and the strongest challenger until the
    bounds separate or the per-arm budget runs out; the winner is kept. The
    search stops when the rule's precision lower bound reaches tau or every
    feature is anchored (the result is then flagged unsatisfied).
    """
    if not 0.0 <= tau < 1.0:
        raise DataError(f"tau {tau} outside [0, 1)")
    x = np.asarray(x, dtype=np.float64)
    train_X = np.asarray(train_X, dtype=np.float64)
    if train_X.shape[0] == 0:
        raise EmptyTrainingSet("anchor search needs training rows")
    d = train_X.shape[1]
    if max_len is None:
        max_len = d
    disc = fit_discretizer(train_X)
    target = int(predict_fn(x[None, :])[0])
    rng_counter = [0]
    total_samples = [0]

    def draw(arm: _Arm, n: int):
        samples = sample_perturbations(x, arm.rule, train_X, n,
                                       np.random.SeedSequence([seed, rng_counter[0]]).generate_state(1)[0])
        rng_counter[0] += 1
        total_samples[0] += n
        arm.n += n
        arm.hits += int((np.asarray(predict_fn(samples)) == target).sum())

    def finish(rule_arm: _Arm, satisfied: bool, budget_exhausted: bool) -> Anchor:
        for p in rule_arm.rule:  # the instance must satisfy its own anchor
            assert p.satisfied(x[p.feature_index : p.feature_index + 1])[0]
        return Anchor(rule_arm.rule, rule_arm.est, rule_arm.lcb, rule_arm.ucb,
                      rule_coverage(rule_arm.rule, train_X), total_samples[0],
                      target, satisfied, budget_exhausted)

    level = math.log(1.0 / delta)
    empty = _Arm(())
    draw(empty, batch)
    empty.update(level)
    if empty.lcb >= tau:
        return finish(empty, True, False)

    frontier = [empty]
    budget_hit = False
    while True:
        arms = []
        for parent in frontier:
            used = {p.feature_index for p in parent.rule}
            for f in range(d):
                if f not in used:
                    arms.append(_Arm(parent.rule + (predicate_for(x, f, disc),)))
        if not arms or len(frontier[0].rule) >= max_len:
            best = max(frontier, key=lambda a: (a.est, -len(a.rule)))
            return finish(best, False, budget_hit)

        arm_level = level + math.log(len(arms))  # union bound over the race
        for arm in arms:
            draw(arm, batch)
            arm.update(arm_level)
        while True:
            arms.sort(key=lambda a: (-a.est, tuple(p.feature_index for p in a.rule)))
            leader = arms[0]
            rest = arms[1:]
            challenger = max(rest, key=lambda a: a.ucb) if rest else None
            if challenger is None or leader.lcb >= challenger.ucb:
                break
            if leader.n >= ARM_BUDGET and challenger.n >= ARM_BUDGET:
                budget_hit = True
                break
            if leader.n < ARM_BUDGET:
                draw(leader, batch)
                leader.update(arm_level)
            if challenger.n < ARM_BUDGET:
                draw(challenger, batch)
                challenger.update(arm_level)
            arms = [a for a in arms if a.ucb >= leader.lcb]  # eliminated arms drop out

        winners = arms[: max(1, beam)]
        best = winners[0]
        best.update(level)  # final bound without the race-wide correction
        if best.lcb >= tau:
            return finish(best, True, budget_hit)
        if len(best.rule) >= max_len:
            return finish(best, False, budget_hit)
        frontier = winners


def minimize_anchor(anchor: Anchor, predict_fn, x, train_X, tau: float,
                    n: int = 500, seed: int = 0) -> Anchor:
    """Shortest prefix of the anchor whose fresh-sample precision still
    clears tau; the full anchor is returned unchanged when none does."""
    if not anchor.predicates:
        raise DataError("cannot minimize an empty anchor")
    x = np.asarray(x, dtype=np.float64)
    used = 0
    for length in range(1, len(anchor.predicates) + 1):
        prefix = anchor.predicates[:length]
        est, lcb, ucb = estimate_precision(
            predict_fn, x, prefix, train_X, n,
            int(np.random.SeedSequence([seed, length]).generate_state(1)[0]))
        used += n
        if est >= tau:
            return Anchor(prefix, est, lcb, ucb, rule_coverage(prefix, train_X),
                          anchor.n_samples_used + used, anchor.predicted_class,
                          anchor.satisfied, anchor.budget_exhausted, minimized=True)
    return replace(anchor, n_samples_used=anchor.n_samples_used + used)


def format_predicate(pred: Predicate, feature_names) -> str:
    name = feature_names[pred.feature_index]
    if pred.kind == "category":
        if "=" in name:
            base, _, cat = name.partition("=")
            return f"{base} = {cat}" if pred.code == 1.0 else f"{base} != {cat}"
        return f"{name} = {pred.code:g}"
    if pred.lo == -np.inf:
        return f"{name} <= {pred.hi:.4g}"
    if pred.hi == np.inf:
        return f"{name} > {pred.lo:.4g}"
    return f"{pred.lo:.4g} < {name} <= {pred.hi:.4g}"


def render_anchor(anchor: Anchor, feature_names, prediction: str) -> str:
    if not anchor.predicates:
        return f"Predicted as {prediction} (no conditions required)"
    conds = " AND ".join(format_predicate(p, feature_names) for p in anchor.predicates)
    return f"Predicted as {prediction} because: {conds}"


def anchor_to_json(anchor: Anchor, feature_names, instance_id) -> dict:
    return {
        "instance_id": int(instance_id),
        "predicted_class": "Bad" if anchor.predicted_class == 1 else "Good",
        "predicates": [
            {
                "feature": feature_names[p.feature_index],
                "kind": p.kind,
                "lo": None if p.lo == -np.inf else p.lo,
                "hi": None if p.hi == np.inf else p.hi,
                "code": p.code if p.kind == "category" else None,
                "text": format_predicate(p, feature_names),
            }
            for p in anchor.predicates
        ],
        "precision": anchor.precision_estimate,
        "lcb": anchor.precision_lcb,
        "coverage": anchor.coverage_estimate,
        "minimized": anchor.minimized,
        "satisfied": anchor.satisfied,
        "budget_exhausted": anchor.budget_exhausted,
        "n_samples": anchor.n_samples_used,
    }
