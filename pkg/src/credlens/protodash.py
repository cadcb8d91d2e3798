"""Prototype explanations: weighted training instances selected greedily so
their kernel mixture matches the query point.

The selection objective is l(w) = w'mu - 0.5 w'Kw with w >= 0, where mu holds
RBF similarities between the query and each candidate and K is the candidate
Gram matrix; maximizing it minimizes the kernel discrepancy between the query
and the weighted prototype set. Each greedy step adds the candidate with the
largest objective gradient, then re-solves the weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionMismatch, EmptyCandidates, KTooLarge


@dataclass(frozen=True)
class KernelParams:
    gamma: float
    mean: np.ndarray          # standardization stats, fitted on training data
    std: np.ndarray

    def __post_init__(self):
        if self.gamma <= 0:
            raise DataError("gamma must be positive")


def fit_kernel_params(train_X: np.ndarray, gamma: float | None = None) -> KernelParams:
    """Standardization stats plus the default bandwidth 1/n_features."""
    train_X = np.asarray(train_X, dtype=np.float64)
    mean = train_X.mean(axis=0)
    std = train_X.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    if gamma is None:
        gamma = 1.0 / train_X.shape[1]
    return KernelParams(float(gamma), mean, std)


def standardize(X: np.ndarray, params: KernelParams) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - params.mean) / params.std


def rbf_kernel(a: np.ndarray, b: np.ndarray, params: KernelParams) -> float:
    """exp(-gamma * ||a - b||^2) on already-standardized vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    return float(np.exp(-params.gamma * np.sum((a - b) ** 2)))


def _rbf_to_point(Xs: np.ndarray, point: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * ((Xs - point) ** 2).sum(axis=1))


@dataclass
class PrototypeSet:
    indices: list[int]               # row ids, selection order
    weights: np.ndarray              # aligned with indices, >= 0
    objective_trace: list[float]     # objective after each greedy step
    query_id: int
    gamma: float


def solve_weights(mu: np.ndarray, K: np.ndarray, w0: np.ndarray | None = None,
                  tol: float = 1e-8, max_sweeps: int = 10_000) -> np.ndarray:
    """argmax_{w>=0} w'mu - 0.5 w'Kw by projected coordinate ascent."""
    mu = np.asarray(mu, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    k = len(mu)
    w = np.zeros(k) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    for _ in range(max_sweeps):
        biggest = 0.0
        for i in range(k):
            new = max(0.0, (mu[i] - K[i] @ w + K[i, i] * w[i]) / K[i, i])
            biggest = max(biggest, abs(new - w[i]))
            w[i] = new
        if biggest < tol:
            break
    return w


def _objective(w: np.ndarray, mu: np.ndarray, K: np.ndarray) -> float:
    return float(w @ mu - 0.5 * w @ K @ w)


def select_prototypes(x, candidates, m: int = 6,
                      params: KernelParams | None = None,
                      candidate_ids=None, query_id: int = -1) -> PrototypeSet:
    """Greedy selection of up to m weighted prototypes for the query x."""
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise EmptyCandidates("need a nonempty candidate matrix")
    if m < 1:
        raise DataError("m must be at least 1")
    if params is None:
        params = fit_kernel_params(candidates)
    if candidate_ids is None:
        candidate_ids = np.arange(candidates.shape[0])

    Xs = standardize(candidates, params)
    xs = standardize(np.asarray(x, dtype=np.float64)[None, :], params)[0]
    if xs.shape[0] != Xs.shape[1]:
        raise DimensionMismatch(f"query width {xs.shape[0]} vs candidates {Xs.shape[1]}")
    mu = _rbf_to_point(Xs, xs, params.gamma)

    chosen: list[int] = []
    w = np.zeros(0)
    kernel_cols = np.empty((candidates.shape[0], 0))
    K_sel = np.empty((0, 0))
    trace: list[float] = []
    grad = mu.copy()
    for _ in range(min(m, candidates.shape[0])):
        masked = grad.copy()
        masked[chosen] = -np.inf
        j = int(np.argmax(masked))
        if masked[j] <= 0.0:
            break
        col = _rbf_to_point(Xs, Xs[j], params.gamma)
        K_sel = np.pad(K_sel, ((0, 1), (0, 1)))
        K_sel[-1, :-1] = K_sel[:-1, -1] = col[chosen]
        K_sel[-1, -1] = col[j]
        kernel_cols = np.column_stack([kernel_cols, col])
        chosen.append(j)
        w = solve_weights(mu[chosen], K_sel, w0=np.append(w, 0.0))
        obj = _objective(w, mu[chosen], K_sel)
        assert not trace or obj >= trace[-1] - 1e-12, "greedy objective decreased"
        trace.append(obj)
        grad = mu - kernel_cols @ w

    ids = [int(candidate_ids[j]) for j in chosen]
    return PrototypeSet(ids, w, trace, int(query_id), params.gamma)


def top_k(ps: PrototypeSet, k: int = 2) -> PrototypeSet:
    """Keep the k heaviest prototypes (ties break toward the lower row id)."""
    if k > len(ps.indices):
        raise KTooLarge(f"k={k} but only {len(ps.indices)} prototypes selected")
    order = sorted(range(len(ps.indices)), key=lambda i: (-ps.weights[i], ps.indices[i]))[:k]
    return PrototypeSet([ps.indices[i] for i in order], ps.weights[order],
                        list(ps.objective_trace), ps.query_id, ps.gamma)


def display_percentages(ps: PrototypeSet) -> np.ndarray:
    total = ps.weights.sum()
    if total == 0.0:
        return np.zeros(len(ps.weights))
    return 100.0 * ps.weights / total


def render_prototypes(x, ps: PrototypeSet, feature_names, rows, classes) -> str:
    """Side-by-side table: query then one column per prototype. `rows` and
    `classes` are the prototype raw feature rows and their dataset classes,
    aligned with ps.indices. Cells equal to the query value are marked *."""
    letters = [chr(ord("A") + i) for i in range(len(ps.indices))]
    headers = ["", "Loan application"] + [f"Prototype {c}" for c in letters]
    pct = display_percentages(ps)
    x = np.asarray(x, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)

    body: list[list[str]] = []
    body.append(["Target class", ""] + ["Bad" if c == 1 else "Good" for c in classes])
    body.append(["Prototype weight", ""] + [f"{p:.0f}%" for p in pct])
    for f, name in enumerate(feature_names):
        cells = [name, f"{x[f]:.6g}"]
        for r in range(rows.shape[0]):
            mark = " *" if rows[r, f] == x[f] else ""
            cells.append(f"{rows[r, f]:.6g}{mark}")
        body.append(cells)

    widths = [max(len(line[c]) for line in [headers] + body) for c in range(len(headers))]
    out = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    out.append("  ".join("-" * w for w in widths))
    for line in body:
        out.append("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip())
    return "\n".join(out) + "\n"


def prototypes_to_json(ps: PrototypeSet, classes, m: int, k: int) -> dict:
    pct = display_percentages(ps)
    return {
        "query_id": ps.query_id,
        "prototypes": [
            {
                "row_id": rid,
                "class": "Bad" if cls == 1 else "Good",
                "raw_weight": float(wt),
                "display_pct": float(p),
            }
            for rid, cls, wt, p in zip(ps.indices, classes, ps.weights, pct)
        ],
        "gamma": ps.gamma,
        "m": m,
        "k": k,
    }
