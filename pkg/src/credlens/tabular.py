"""Loan-data loading and preprocessing.

All operations are pure: they take a dataset and return a new one, with the
step recorded in the dataset's provenance list. Randomness enters only
through explicit seeds.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    AllMissingColumn,
    DataError,
    EmptyFile,
    MissingColumn,
    SingleClassDataset,
    TooManyFolds,
    UnknownFeature,
    UnknownTargetValue,
)

MISSING_CODE = -1  # categorical cell with no value (pre-imputation)
MISSING_CATEGORY = "(missing)"


class FeatureKind(enum.Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Schema:
    feature_names: tuple[str, ...]
    kinds: tuple[FeatureKind, ...]
    target_name: str
    positive_label: str

    def __post_init__(self):
        if len(self.feature_names) != len(set(self.feature_names)):
            raise DataError("duplicate feature names in schema")
        if self.target_name in self.feature_names:
            raise DataError(f"target {self.target_name!r} is also a feature")
        if len(self.kinds) != len(self.feature_names):
            raise DataError("kinds and feature_names length mismatch")

    def index_of(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise UnknownFeature(name) from None


@dataclass
class TabularDataset:
    """Columnar dataset: numeric columns are float64 (NaN = missing),
    categorical columns are int32 codes into a per-feature code table."""

    schema: Schema
    columns: list[np.ndarray]
    labels: np.ndarray
    code_tables: dict[str, list[str]] = field(default_factory=dict)
    provenance: list[dict] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return len(self.schema.feature_names)

    def column(self, name: str) -> np.ndarray:
        return self.columns[self.schema.index_of(name)]

    def matrix(self) -> np.ndarray:
        """Row-major float matrix; only valid once every column is numeric."""
        if any(k is not FeatureKind.NUMERIC for k in self.schema.kinds):
            raise DataError("dataset still has categorical columns")
        return np.column_stack(self.columns) if self.columns else np.empty((self.n_rows, 0))

    def take(self, indices) -> "TabularDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return replace(
            self,
            columns=[c[idx] for c in self.columns],
            labels=self.labels[idx],
            code_tables={k: list(v) for k, v in self.code_tables.items()},
            provenance=list(self.provenance),
        )

    def _stamped(self, step: str, **info) -> list[dict]:
        return list(self.provenance) + [{"step": step, **info}]


@dataclass(frozen=True)
class PreprocessPlan:
    special_values: tuple[float, ...] = ()
    scaling: str = "none"            # none | minmax | standard
    resampling: str = "none"         # none | oversample
    split_ratio: float = 0.75
    k_folds: int = 10
    seed: int = 0
    derived_ratios: tuple[tuple[str, str, str], ...] = ()

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise DataError(f"split_ratio {self.split_ratio} outside (0, 1)")
        if self.k_folds < 2:
            raise DataError("k_folds must be at least 2")
        if self.scaling not in ("none", "minmax", "standard"):
            raise DataError(f"unknown scaling {self.scaling!r}")
        if self.resampling not in ("none", "oversample"):
            raise DataError(f"unknown resampling {self.resampling!r}")
        for s in self.special_values:
            if not math.isfinite(s):
                raise DataError("special values must be finite")


@dataclass
class SplitIndices:
    train: np.ndarray
    test: np.ndarray
    folds: list[tuple[np.ndarray, np.ndarray]] | None = None


@dataclass
class ScalerStats:
    method: str                      # none | minmax | standard
    lo: np.ndarray                   # min or mean, per feature
    hi: np.ndarray                   # max or stddev, per feature
    constant: np.ndarray             # bool mask: feature passes through


def load_csv(path, schema: Schema, target_map: dict[str, str] | None = None) -> TabularDataset:
    """Parse a CSV file against a declared schema.

    Header order is free. Unparseable numeric cells and empty cells become
    missing. `target_map` (optional) renames raw target values before the
    binary mapping; raw values absent from the map drop the row.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(str(path)) from None
        rows = [r for r in reader if r]

    col_of = {name: i for i, name in enumerate(header)}
    for name in schema.feature_names:
        if name not in col_of:
            raise MissingColumn(name)
    if schema.target_name not in col_of:
        raise MissingColumn(schema.target_name)

    raw_targets = [r[col_of[schema.target_name]] for r in rows]
    if target_map is not None:
        keep = [i for i, t in enumerate(raw_targets) if t in target_map]
        rows = [rows[i] for i in keep]
        raw_targets = [target_map[raw_targets[i]] for i in keep]

    distinct = sorted(set(raw_targets))
    others = [t for t in distinct if t != schema.positive_label]
    if len(others) > 1:
        raise UnknownTargetValue(f"target values {others!r} cannot all map to the negative class")
    labels = np.array([1 if t == schema.positive_label else 0 for t in raw_targets], dtype=np.int8)

    columns: list[np.ndarray] = []
    code_tables: dict[str, list[str]] = {}
    for name, kind in zip(schema.feature_names, schema.kinds):
        cells = [r[col_of[name]] for r in rows]
        if kind is FeatureKind.NUMERIC:
            col = np.empty(len(cells), dtype=np.float64)
            for i, c in enumerate(cells):
                try:
                    col[i] = float(c)
                except ValueError:
                    col[i] = np.nan
            columns.append(col)
        else:
            table: list[str] = []
            seen: dict[str, int] = {}
            col = np.empty(len(cells), dtype=np.int32)
            for i, c in enumerate(cells):
                if c == "":
                    col[i] = MISSING_CODE
                    continue
                if c not in seen:
                    seen[c] = len(table)
                    table.append(c)
                col[i] = seen[c]
            columns.append(col)
            code_tables[name] = table

    ds = TabularDataset(schema, columns, labels, code_tables)
    ds.provenance.append({"step": "load_csv", "rows": ds.n_rows})
    return ds


def apply_special_values(ds: TabularDataset, sentinels) -> TabularDataset:
    """Turn sentinel-coded numeric cells into missing values and drop rows
    that were sentinel across every numeric feature."""
    sentinels = [float(s) for s in sentinels]
    for s in sentinels:
        if not math.isfinite(s):
            raise DataError("sentinels must be finite")
    if not sentinels:
        return replace(ds, provenance=ds._stamped("special_values", cells=0, rows_dropped=0))

    numeric_idx = [i for i, k in enumerate(ds.schema.kinds) if k is FeatureKind.NUMERIC]
    masks = []
    columns = [c.copy() for c in ds.columns]
    cells = 0
    for i in numeric_idx:
        m = np.isin(columns[i], sentinels)
        columns[i][m] = np.nan
        cells += int(m.sum())
        masks.append(m)

    if numeric_idx:
        all_sentinel = np.logical_and.reduce(masks)
        keep = ~all_sentinel
        columns = [c[keep] for c in columns]
        labels = ds.labels[keep]
        dropped = int(all_sentinel.sum())
    else:
        labels = ds.labels.copy()
        dropped = 0
    return TabularDataset(
        ds.schema, columns, labels, {k: list(v) for k, v in ds.code_tables.items()},
        ds._stamped("special_values", cells=cells, rows_dropped=dropped),
    )


def impute(ds: TabularDataset) -> TabularDataset:
    """Mean-impute numeric missing cells; give categorical missing cells a
    fresh category code."""
    columns = []
    code_tables = {k: list(v) for k, v in ds.code_tables.items()}
    n_numeric = 0
    n_categorical = 0
    for name, kind, col in zip(ds.schema.feature_names, ds.schema.kinds, ds.columns):
        if kind is FeatureKind.NUMERIC:
            nan = np.isnan(col)
            if nan.all() and len(col):
                raise AllMissingColumn(name)
            if nan.any():
                col = col.copy()
                col[nan] = col[~nan].mean()
                n_numeric += int(nan.sum())
        else:
            missing = col == MISSING_CODE
            if missing.any():
                table = code_tables[name]
                cat = MISSING_CATEGORY
                while cat in table:
                    cat += "_"
                code = len(table)
                table.append(cat)
                col = col.copy()
                col[missing] = code
                n_categorical += int(missing.sum())
        columns.append(col)
    return TabularDataset(
        ds.schema, columns, ds.labels.copy(), code_tables,
        ds._stamped("impute", numeric_cells=n_numeric, categorical_cells=n_categorical),
    )


def one_hot(ds: TabularDataset) -> TabularDataset:
    """Expand each categorical feature into one 0/1 column per category,
    named ``<feature>=<category>``."""
    names: list[str] = []
    kinds: list[FeatureKind] = []
    columns: list[np.ndarray] = []
    expanded = 0
    for name, kind, col in zip(ds.schema.feature_names, ds.schema.kinds, ds.columns):
        if kind is FeatureKind.NUMERIC:
            names.append(name)
            kinds.append(kind)
            columns.append(col.copy())
            continue
        table = ds.code_tables[name]
        if (col == MISSING_CODE).any():
            raise DataError(f"one_hot before impute: {name} still has missing cells")
        for code, cat in enumerate(table):
            names.append(f"{name}={cat}")
            kinds.append(FeatureKind.NUMERIC)
            columns.append((col == code).astype(np.float64))
        expanded += 1
    schema = Schema(tuple(names), tuple(kinds), ds.schema.target_name, ds.schema.positive_label)
    return TabularDataset(
        schema, columns, ds.labels.copy(), {},
        ds._stamped("one_hot", features_expanded=expanded),
    )


def derive_ratios(ds: TabularDataset, defs) -> TabularDataset:
    """Append ratio columns (numerator / denominator); zero denominators
    yield missing values for the caller to re-impute."""
    if not defs:
        return replace(ds, provenance=ds._stamped("derive_ratios", added=0))
    names = list(ds.schema.feature_names)
    kinds = list(ds.schema.kinds)
    columns = [c.copy() for c in ds.columns]
    for new_name, num, den in defs:
        ni, di = ds.schema.index_of(num), ds.schema.index_of(den)
        if ds.schema.kinds[ni] is not FeatureKind.NUMERIC or ds.schema.kinds[di] is not FeatureKind.NUMERIC:
            raise UnknownFeature(f"ratio {new_name}: operands must be numeric")
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = columns[ni] / columns[di]
        ratio[columns[di] == 0.0] = np.nan
        names.append(new_name)
        kinds.append(FeatureKind.NUMERIC)
        columns.append(ratio)
    schema = Schema(tuple(names), tuple(kinds), ds.schema.target_name, ds.schema.positive_label)
    return TabularDataset(
        schema, columns, ds.labels.copy(), {k: list(v) for k, v in ds.code_tables.items()},
        ds._stamped("derive_ratios", added=len(defs)),
    )


def stratified_split(ds: TabularDataset, ratio: float, seed: int) -> SplitIndices:
    """Seeded per-class shuffle, `ratio` of each class into train."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"ratio {ratio} outside (0, 1)")
    classes = np.unique(ds.labels)
    if len(classes) < 2:
        raise SingleClassDataset("stratified split needs both classes")
    rng = np.random.default_rng(seed)
    train_parts, test_parts = [], []
    for c in classes:
        idx = np.flatnonzero(ds.labels == c)
        perm = rng.permutation(idx)
        n_train = int(round(ratio * len(idx)))
        train_parts.append(perm[:n_train])
        test_parts.append(perm[n_train:])
    train = np.sort(np.concatenate(train_parts))
    test = np.sort(np.concatenate(test_parts))
    return SplitIndices(train=train, test=test)


def stratified_kfold(ds: TabularDataset, train: np.ndarray, k: int, seed: int):
    """Split training rows into k stratified (train, validation) folds."""
    labels = ds.labels[train]
    classes, counts = np.unique(labels, return_counts=True)
    if k > counts.min():
        raise TooManyFolds(f"k={k} exceeds minority class count {counts.min()}")
    rng = np.random.default_rng(seed)
    val_parts: list[list[np.ndarray]] = [[] for _ in range(k)]
    for c in classes:
        idx = train[labels == c]
        perm = rng.permutation(idx)
        for fold_i, chunk in enumerate(np.array_split(perm, k)):
            val_parts[fold_i].append(chunk)
    folds = []
    for parts in val_parts:
        val = np.sort(np.concatenate(parts))
        tr = np.setdiff1d(train, val)
        folds.append((tr, val))
    return folds


def fit_scaler(ds: TabularDataset, method: str) -> ScalerStats:
    """Fit per-feature scaling stats; call on training rows only."""
    if method not in ("none", "minmax", "standard"):
        raise DataError(f"unknown scaling method {method!r}")
    X = ds.matrix()
    if method == "minmax":
        lo, hi = X.min(axis=0), X.max(axis=0)
        constant = hi == lo
    elif method == "standard":
        lo, hi = X.mean(axis=0), X.std(axis=0)
        constant = hi == 0.0
    else:
        d = ds.n_features
        lo, hi, constant = np.zeros(d), np.ones(d), np.ones(d, dtype=bool)
    return ScalerStats(method, lo, hi, constant)


def apply_scaler(ds: TabularDataset, stats: ScalerStats) -> TabularDataset:
    if stats.method == "none":
        return replace(ds, provenance=ds._stamped("scale", method="none"))
    columns = []
    for j, col in enumerate(ds.columns):
        if stats.constant[j]:
            columns.append(col.copy())
        elif stats.method == "minmax":
            columns.append((col - stats.lo[j]) / (stats.hi[j] - stats.lo[j]))
        else:
            columns.append((col - stats.lo[j]) / stats.hi[j])
    return TabularDataset(
        ds.schema, columns, ds.labels.copy(), {k: list(v) for k, v in ds.code_tables.items()},
        ds._stamped("scale", method=stats.method),
    )


def invert_scaler(ds: TabularDataset, stats: ScalerStats) -> TabularDataset:
    """Undo apply_scaler (used to check the transform is information-preserving)."""
    if stats.method == "none":
        return replace(ds, provenance=ds._stamped("unscale", method="none"))
    columns = []
    for j, col in enumerate(ds.columns):
        if stats.constant[j]:
            columns.append(col.copy())
        elif stats.method == "minmax":
            columns.append(col * (stats.hi[j] - stats.lo[j]) + stats.lo[j])
        else:
            columns.append(col * stats.hi[j] + stats.lo[j])
    return TabularDataset(
        ds.schema, columns, ds.labels.copy(), {k: list(v) for k, v in ds.code_tables.items()},
        ds._stamped("unscale", method=stats.method),
    )


def random_oversample(ds: TabularDataset, seed: int) -> TabularDataset:
    """Duplicate seeded draws of the minority class until classes balance."""
    classes, counts = np.unique(ds.labels, return_counts=True)
    if len(classes) < 2:
        raise SingleClassDataset("oversampling needs both classes")
    if counts[0] == counts[1]:
        return replace(ds, provenance=ds._stamped("oversample", added=0))
    minority = classes[np.argmin(counts)]
    deficit = int(abs(counts[0] - counts[1]))
    rng = np.random.default_rng(seed)
    pool = np.flatnonzero(ds.labels == minority)
    extra = rng.choice(pool, size=deficit, replace=True)
    idx = np.concatenate([np.arange(ds.n_rows), extra])
    out = ds.take(idx)
    out.provenance = ds._stamped("oversample", added=deficit)
    return out


def assert_clean(ds: TabularDataset) -> None:
    """Post-preprocessing invariant: all numeric, nothing missing."""
    for name, kind, col in zip(ds.schema.feature_names, ds.schema.kinds, ds.columns):
        if kind is not FeatureKind.NUMERIC:
            raise DataError(f"column {name} still categorical")
        if np.isnan(col).any():
            raise DataError(f"column {name} still has missing values")
