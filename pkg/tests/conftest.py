"""Shared fixtures: synthetic loan data, trained models, random small trees.

The loan generator stands in for a real HELOC-style extract: integer-coded
scores, sentinel codes for missing values, empty cells, a couple of
all-sentinel rows, and labels from a noisy interaction rule so that tree
models have real structure to find.
"""
import csv
import json

import numpy as np
import pytest

from credlens import cli, gbdt, tabular
from credlens.gbdt import GbdtModel, TrainParams, Tree

NUMERIC_FEATURES = ["risk_score", "utilization", "credit_age", "income",
                    "loan_amnt", "inq_6m", "open_acc", "term_months"]
CATEGORICAL_FEATURES = ["home_ownership", "purpose"]
TARGET = "RiskPerformance"


def loan_columns(n, seed):
    rng = np.random.default_rng(seed)
    cols = {
        "risk_score": rng.integers(30, 96, n).astype(float),
        "utilization": rng.integers(0, 101, n).astype(float),
        "credit_age": rng.integers(200, 9000, n).astype(float),
        "income": rng.integers(20, 200, n).astype(float) * 1000.0,
        "loan_amnt": rng.integers(2, 40, n).astype(float) * 1000.0,
        "inq_6m": rng.integers(0, 6, n).astype(float),
        "open_acc": rng.integers(1, 20, n).astype(float),
        "term_months": rng.choice([36.0, 60.0], n),
        "home_ownership": rng.choice(["MORTGAGE", "OWN", "RENT"], n, p=[0.5, 0.2, 0.3]),
        "purpose": rng.choice(["car", "house", "other"], n),
    }
    bad = (
        (cols["risk_score"] < 48)
        | ((cols["risk_score"] < 62) & (cols["utilization"] > 45))
        | ((cols["utilization"] > 80) & (cols["credit_age"] < 2000))
    )
    flip = rng.random(n) < 0.06
    labels = np.where(flip, ~bad, bad).astype(int)
    return cols, labels, rng


def write_loan_csv(path, n=2400, seed=0, dirty=True):
    """Loan CSV with the header deliberately out of schema order."""
    cols, labels, rng = loan_columns(n, seed)
    cells = {k: [f"{v:g}" for v in cols[k]] for k in NUMERIC_FEATURES}
    for k in CATEGORICAL_FEATURES:
        cells[k] = list(cols[k])
    if dirty:
        for idx in rng.choice(n, n // 50, replace=False):
            cells["risk_score"][idx] = "-9"
        for idx in rng.choice(n, n // 100, replace=False):
            cells["utilization"][idx] = "-8"
        for idx in rng.choice(n, n // 50, replace=False):
            cells["income"][idx] = ""
        for idx in rng.choice(n, n // 200, replace=False):
            cells["credit_age"][idx] = "N/A"
        for idx in rng.choice(n, n // 100, replace=False):
            cells["home_ownership"][idx] = ""
    header = ["loan_amnt", TARGET, "risk_score", "home_ownership", "utilization",
              "credit_age", "income", "inq_6m", "open_acc", "term_months", "purpose"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(n):
            row = {k: cells[k][i] for k in cells}
            row[TARGET] = "Bad" if labels[i] else "Good"
            writer.writerow([row[h] for h in header])
        if dirty:  # all-sentinel rows must be dropped by preprocessing
            for _ in range(3):
                row = {k: "-9" for k in NUMERIC_FEATURES}
                row.update({k: "OWN" if k == "home_ownership" else "car"
                            for k in CATEGORICAL_FEATURES})
                row[TARGET] = "Bad"
                writer.writerow([row[h] for h in header])
    return n + (3 if dirty else 0)


def loan_schema():
    names = tuple(NUMERIC_FEATURES + CATEGORICAL_FEATURES)
    kinds = tuple([tabular.FeatureKind.NUMERIC] * len(NUMERIC_FEATURES)
                  + [tabular.FeatureKind.CATEGORICAL] * len(CATEGORICAL_FEATURES))
    return tabular.Schema(names, kinds, TARGET, "Bad")


def loan_config(input_csv, workdir, seed=11, n_trees=80, girp_depth=3):
    return {
        "seed": seed,
        "paths": {"input_csv": str(input_csv), "workdir": str(workdir)},
        "schema": {
            "target_name": TARGET,
            "positive_label": "Bad",
            "features": (
                [{"name": n, "kind": "numeric"} for n in NUMERIC_FEATURES]
                + [{"name": n, "kind": "categorical"} for n in CATEGORICAL_FEATURES]
            ),
        },
        "preprocess": {
            "special_values": [-9, -8, -7],
            "scaling": "none",
            "resampling": "oversample",
            "split_ratio": 0.75,
            "k_folds": 3,
            "derived_ratios": [["loan_to_income", "loan_amnt", "income"]],
        },
        "train": {"n_trees": n_trees, "max_depth": 4, "learning_rate": 0.2},
        "girp": {"max_depth": girp_depth, "min_leaf": 50, "top_k_features": 10},
        "anchor": {"tau": 0.9, "delta": 0.05, "batch": 100, "n_min": 300},
        "protodash": {"m": 6, "k": 2},
    }


def run_cli(args):
    """Run the CLI in-process; returns the exit code."""
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="session")
def loan_run(tmp_path_factory):
    """Preprocessed + trained pipeline artifacts, shared across the session."""
    root = tmp_path_factory.mktemp("loanrun")
    input_csv = root / "loans.csv"
    write_loan_csv(input_csv, n=2400, seed=0)
    workdir = root / "out"
    config = root / "config.json"
    config.write_text(json.dumps(loan_config(input_csv, workdir)))
    assert run_cli(["preprocess", "--config", config]) == 0
    assert run_cli(["train", "--config", config]) == 0
    cfg = cli.load_config(str(config))
    train_ds = cli._read_dataset_csv(str(workdir / "train.csv"))
    test_ds = cli._read_dataset_csv(str(workdir / "test.csv"))
    model = gbdt.load_model(str(workdir / "model.json"))
    return {
        "config_path": config,
        "cfg": cfg,
        "workdir": workdir,
        "input_csv": input_csv,
        "model": model,
        "train_ds": train_ds,
        "test_ds": test_ds,
    }


def random_tree(rng, d, max_depth, leaf_prob=0.25):
    """Random tree with internally consistent covers; repeated features on a
    path are allowed on purpose (they stress the SHAP path bookkeeping)."""
    left, right, feature, threshold, value, cover = [], [], [], [], [], []

    def grow(depth, cov):
        i = len(feature)
        for a in (left, right, feature):
            a.append(-1)
        threshold.append(0.0)
        value.append(0.0)
        cover.append(cov)
        if depth >= max_depth or rng.random() < leaf_prob or cov < 2.0:
            value[i] = float(rng.normal())
            return i
        feature[i] = int(rng.integers(d))
        threshold[i] = float(rng.normal())
        frac = rng.uniform(0.2, 0.8)
        left[i] = grow(depth + 1, cov * frac)
        right[i] = grow(depth + 1, cov * (1.0 - frac))
        return i

    grow(0, 100.0)
    return Tree(np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
                np.array(value, dtype=np.float64), np.array(cover, dtype=np.float64))


def random_model(rng, d, n_trees, max_depth):
    trees = [random_tree(rng, d, max_depth) for _ in range(n_trees)]
    return GbdtModel(trees, float(rng.normal()), 0.1,
                     [f"f{i}" for i in range(d)], TrainParams())


def dataset_from_matrix(X, y=None, names=None):
    """Wrap a plain numeric matrix as a TabularDataset."""
    X = np.asarray(X, dtype=np.float64)
    if names is None:
        names = [f"f{i}" for i in range(X.shape[1])]
    if y is None:
        y = np.zeros(X.shape[0], dtype=np.int8)
    schema = tabular.Schema(tuple(names),
                            tuple([tabular.FeatureKind.NUMERIC] * X.shape[1]),
                            "label", "Bad")
    cols = [np.ascontiguousarray(X[:, j]) for j in range(X.shape[1])]
    return tabular.TabularDataset(schema, cols, np.asarray(y, dtype=np.int8))


def fit_linear_baseline(X, y, epochs=400, lr=0.5, seed=0):
    """Plain full-batch logistic regression on standardized features; the
    reference point the boosted model has to beat."""
    X = np.asarray(X, dtype=np.float64)
    mean, std = X.mean(axis=0), X.std(axis=0)
    std = np.where(std == 0, 1.0, std)
    Z = (X - mean) / std
    rng = np.random.default_rng(seed)
    w = rng.normal(scale=0.01, size=Z.shape[1])
    b = 0.0
    for _ in range(epochs):
        p = 1.0 / (1.0 + np.exp(-(Z @ w + b)))
        g = p - y
        w -= lr * (Z.T @ g) / len(y)
        b -= lr * float(g.mean())

    def predict(Xq):
        Zq = (np.asarray(Xq, dtype=np.float64) - mean) / std
        return (1.0 / (1.0 + np.exp(-(Zq @ w + b))) >= 0.5).astype(np.int8)

    return predict
