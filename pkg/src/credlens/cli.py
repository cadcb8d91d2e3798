"""Command-line pipeline: preprocess, train, evaluate, explain, report.

Everything is driven by a JSON config plus a handful of flag overrides; all
artifacts are JSON/CSV/text files in --outdir, and every command is
reproducible byte-for-byte given the same config and seed.

Exit codes: 2 config error, 3 data error, 4 missing artifact.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import csv
import functools
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__, anchors, gbdt, girp, metrics, protodash, shap, tabular
from .errors import ConfigError, CredlensError, DataError, MissingArtifact
from .seeding import derive_seed

_SCALINGS = {"none": "none", "minmax": "minmax", "standard": "standard"}


def _take(section: dict, allowed: dict, where: str) -> dict:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    out = dict(allowed)
    out.update(section)
    return out


@dataclass
class RunConfig:
    seed: int = 0
    input_csv: str | None = None
    workdir: str = "."
    schema: tabular.Schema | None = None
    target_map: dict[str, str] | None = None
    feature_whitelist: list[str] | None = None
    plan: tabular.PreprocessPlan = field(default_factory=tabular.PreprocessPlan)
    train: gbdt.TrainParams = field(default_factory=gbdt.TrainParams)
    girp: girp.GirpParams = field(default_factory=girp.GirpParams)
    prune_alpha: float = 0.05
    min_rate_gap: float = 0.05
    cutoff: float = 0.5
    tau: float = 0.9
    delta: float = 0.05
    beam: int = 1
    batch: int = 100
    n_min: int = 500
    max_len: int | None = None
    proto_m: int = 6
    proto_k: int = 2
    proto_gamma: float | None = None


def load_config(path: str | None) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
    try:
        return _parse_config(doc)
    except (TypeError, ValueError, DataError) as e:
        raise ConfigError(str(e)) from None


def _parse_config(doc: dict) -> RunConfig:
    top = _take(doc, {
        "seed": 0, "paths": {}, "schema": None, "preprocess": {}, "train": {},
        "girp": {}, "anchor": {}, "protodash": {},
    }, "config")
    cfg = RunConfig(seed=int(top["seed"]))

    paths = _take(top["paths"], {"input_csv": None, "workdir": "."}, "paths")
    cfg.input_csv = paths["input_csv"]
    cfg.workdir = paths["workdir"]

    if top["schema"] is not None:
        sc = _take(top["schema"], {
            "target_name": None, "positive_label": None, "features": [],
            "target_map": None, "feature_whitelist": None,
        }, "schema")
        if not sc["target_name"] or not sc["positive_label"] or not sc["features"]:
            raise ConfigError("schema needs target_name, positive_label and features")
        names, kinds = [], []
        for feat in sc["features"]:
            f = _take(feat, {"name": None, "kind": "numeric"}, "schema.features")
            if f["kind"] not in ("numeric", "categorical"):
                raise ConfigError(f"feature kind {f['kind']!r} unknown")
            names.append(f["name"])
            kinds.append(tabular.FeatureKind(f["kind"]))
        cfg.schema = tabular.Schema(tuple(names), tuple(kinds),
                                    sc["target_name"], sc["positive_label"])
        cfg.target_map = sc["target_map"]
        cfg.feature_whitelist = sc["feature_whitelist"]

    pp = _take(top["preprocess"], {
        "special_values": [], "scaling": "none", "resampling": "none",
        "split_ratio": 0.75, "k_folds": 10, "derived_ratios": [],
    }, "preprocess")
    if pp["scaling"] not in _SCALINGS:
        raise ConfigError(f"unknown scaling {pp['scaling']!r}")
    cfg.plan = tabular.PreprocessPlan(
        special_values=tuple(float(v) for v in pp["special_values"]),
        scaling=pp["scaling"], resampling=pp["resampling"],
        split_ratio=float(pp["split_ratio"]), k_folds=int(pp["k_folds"]),
        seed=cfg.seed, derived_ratios=tuple(tuple(r) for r in pp["derived_ratios"]),
    )

    tr = _take(top["train"], {
        "n_trees": 300, "max_depth": 4, "learning_rate": 0.1, "reg_lambda": 1.0,
        "gamma": 0.0, "min_child_weight": 1.0,
    }, "train")
    cfg.train = gbdt.TrainParams(
        n_trees=int(tr["n_trees"]), max_depth=int(tr["max_depth"]),
        learning_rate=float(tr["learning_rate"]), reg_lambda=float(tr["reg_lambda"]),
        gamma=float(tr["gamma"]), min_child_weight=float(tr["min_child_weight"]),
        seed=cfg.seed,
    )

    gp = _take(top["girp"], {
        "max_depth": 3, "min_leaf": 50, "top_k_features": 10,
        "prune_alpha": 0.05, "min_rate_gap": 0.05, "cutoff": 0.5,
    }, "girp")
    cfg.girp = girp.GirpParams(max_depth=int(gp["max_depth"]), min_leaf=int(gp["min_leaf"]),
                               top_k_features=int(gp["top_k_features"]))
    cfg.prune_alpha = float(gp["prune_alpha"])
    cfg.min_rate_gap = float(gp["min_rate_gap"])
    cfg.cutoff = float(gp["cutoff"])

    an = _take(top["anchor"], {
        "tau": 0.9, "delta": 0.05, "beam": 1, "batch": 100, "n_min": 500, "max_len": None,
    }, "anchor")
    cfg.tau, cfg.delta = float(an["tau"]), float(an["delta"])
    cfg.beam, cfg.batch = int(an["beam"]), int(an["batch"])
    cfg.n_min = int(an["n_min"])
    cfg.max_len = None if an["max_len"] is None else int(an["max_len"])

    pd = _take(top["protodash"], {"m": 6, "k": 2, "gamma": None}, "protodash")
    cfg.proto_m, cfg.proto_k = int(pd["m"]), int(pd["k"])
    cfg.proto_gamma = None if pd["gamma"] is None else float(pd["gamma"])
    return cfg


# -- artifact I/O --------------------------------------------------------------

def _write_json(path: str, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_dataset_csv(ds: tabular.TabularDataset, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.schema.feature_names) + [ds.schema.target_name])
        X = ds.matrix()
        for i in range(ds.n_rows):
            writer.writerow([repr(v) for v in X[i]] + [int(ds.labels[i])])


def _read_dataset_csv(path: str) -> tabular.TabularDataset:
    if not os.path.exists(path):
        raise MissingArtifact(f"{path} not found; run the earlier pipeline stages first")
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    names = tuple(header[:-1])
    schema = tabular.Schema(names, tuple([tabular.FeatureKind.NUMERIC] * len(names)),
                            header[-1], "1")
    return tabular.load_csv(path, schema)


def _load_model(workdir: str) -> gbdt.GbdtModel:
    path = os.path.join(workdir, "model.json")
    if not os.path.exists(path):
        raise MissingArtifact("model.json not found; run `train` first")
    return gbdt.load_model(path)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- commands ------------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig) -> None:
    if cfg.schema is None:
        raise ConfigError("preprocess needs a schema in the config")
    if cfg.input_csv is None:
        raise ConfigError("preprocess needs paths.input_csv (or --input)")
    ds = tabular.load_csv(cfg.input_csv, cfg.schema, cfg.target_map)
    if cfg.feature_whitelist:
        keep = [i for i, n in enumerate(ds.schema.feature_names) if n in cfg.feature_whitelist]
        schema = tabular.Schema(
            tuple(ds.schema.feature_names[i] for i in keep),
            tuple(ds.schema.kinds[i] for i in keep),
            ds.schema.target_name, ds.schema.positive_label)
        ds = tabular.TabularDataset(schema, [ds.columns[i] for i in keep], ds.labels,
                                    {n: t for n, t in ds.code_tables.items()
                                     if n in schema.feature_names},
                                    ds.provenance + [{"step": "whitelist", "kept": len(keep)}])
    ds = tabular.apply_special_values(ds, cfg.plan.special_values)
    ds = tabular.impute(ds)
    ds = tabular.one_hot(ds)
    ds = tabular.derive_ratios(ds, cfg.plan.derived_ratios)
    if cfg.plan.derived_ratios:
        ds = tabular.impute(ds)
    split = tabular.stratified_split(ds, cfg.plan.split_ratio, derive_seed(cfg.seed, "split"))
    train_ds, test_ds = ds.take(split.train), ds.take(split.test)
    if cfg.plan.scaling != "none":
        stats = tabular.fit_scaler(train_ds, cfg.plan.scaling)
        train_ds = tabular.apply_scaler(train_ds, stats)
        test_ds = tabular.apply_scaler(test_ds, stats)
    if cfg.plan.resampling == "oversample":
        train_ds = tabular.random_oversample(train_ds, derive_seed(cfg.seed, "oversample"))
    tabular.assert_clean(train_ds)
    tabular.assert_clean(test_ds)

    os.makedirs(cfg.workdir, exist_ok=True)
    _write_dataset_csv(train_ds, os.path.join(cfg.workdir, "train.csv"))
    _write_dataset_csv(test_ds, os.path.join(cfg.workdir, "test.csv"))
    _write_json(os.path.join(cfg.workdir, "provenance.json"), {
        "steps": train_ds.provenance,
        "n_train": train_ds.n_rows,
        "n_test": test_ds.n_rows,
        "seed": cfg.seed,
    })
    _log(f"preprocess: {train_ds.n_rows} train rows, {test_ds.n_rows} test rows")


def cmd_train(cfg: RunConfig) -> None:
    train_ds = _read_dataset_csv(os.path.join(cfg.workdir, "train.csv"))
    X, y = train_ds.matrix(), train_ds.labels
    folds = tabular.stratified_kfold(train_ds, np.arange(train_ds.n_rows),
                                     cfg.plan.k_folds, derive_seed(cfg.seed, "kfold"))
    fold_reports = []
    for fi, (tr, val) in enumerate(folds):
        model = gbdt.train(X[tr], y[tr], train_ds.schema.feature_names, cfg.train)
        cc = metrics.confusion(gbdt.predict_label_matrix(model, X[val]), y[val])
        fold_reports.append({"fold": fi, **metrics.f1_report(cc)})
    model = gbdt.train(X, y, train_ds.schema.feature_names, cfg.train)
    gbdt.save_model(model, os.path.join(cfg.workdir, "model.json"))
    _write_json(os.path.join(cfg.workdir, "cv_summary.json"), {
        "folds": fold_reports,
        "mean_f1": float(np.mean([r["f1"] for r in fold_reports])),
        "mean_accuracy": float(np.mean([r["accuracy"] for r in fold_reports])),
        "final_train_logloss": model.train_logloss[-1],
    })
    _log(f"train: {cfg.train.n_trees} trees, cv mean f1 "
         f"{np.mean([r['f1'] for r in fold_reports]):.4f}")


def cmd_evaluate(cfg: RunConfig) -> None:
    model = _load_model(cfg.workdir)
    test_ds = _read_dataset_csv(os.path.join(cfg.workdir, "test.csv"))
    cc = metrics.confusion(gbdt.predict_label_matrix(model, test_ds.matrix(), cfg.cutoff),
                           test_ds.labels)
    _write_json(os.path.join(cfg.workdir, "evaluation.json"),
                metrics.classification_report_json(cc))
    _log(f"evaluate: f1 {metrics.f1_report(cc)['f1']:.4f} on {cc.total} test rows")


def cmd_explain_global(cfg: RunConfig) -> None:
    model = _load_model(cfg.workdir)
    train_ds = _read_dataset_csv(os.path.join(cfg.workdir, "train.csv"))
    test_ds = _read_dataset_csv(os.path.join(cfg.workdir, "test.csv"))
    cm = shap.contribution_matrix(model, train_ds)
    shap.write_contributions_csv(cm, os.path.join(cfg.workdir, "contributions.csv"))
    tree = girp.build_tree(cm, train_ds, cfg.girp)
    tree = girp.prune_tree(tree, cfg.prune_alpha, cfg.min_rate_gap)
    rules = girp.extract_rules(tree, train_ds.schema.feature_names)
    girp.save_tree_json(tree, train_ds.schema.feature_names,
                        os.path.join(cfg.workdir, "interpretation_tree.json"))
    with open(os.path.join(cfg.workdir, "interpretation_tree.txt"), "w", encoding="utf-8") as fh:
        fh.write(girp.render_tree(tree, train_ds.schema.feature_names))
    girp.write_rules_csv(rules, os.path.join(cfg.workdir, "rules.csv"))
    label_fn = gbdt.label_fn(model, cfg.cutoff)
    doc = {
        "train": metrics.explanation_metrics_json(
            metrics.rule_metrics(rules, label_fn, train_ds, cfg.cutoff)),
        "test": metrics.explanation_metrics_json(
            metrics.rule_metrics(rules, label_fn, test_ds, cfg.cutoff)),
        "rules": girp.rules_to_json(rules),
    }
    _write_json(os.path.join(cfg.workdir, "global_metrics.json"), doc)
    _log(f"explain global: {len(rules.rules)} rules, "
         f"test completeness {doc['test']['completeness_rate_pct']:.2f}%")


def _anchor_for_instance(workdir: str, cfg: RunConfig, instance: int):
    model = _cached_model(workdir)
    train_X = _cached_matrix(workdir, "train.csv")
    test_ds = _cached_dataset(workdir, "test.csv")
    x = test_ds.matrix()[instance]
    label_fn = gbdt.label_fn(model, cfg.cutoff)
    anchor = anchors.find_anchor(label_fn, x, train_X, cfg.tau, cfg.delta, cfg.beam,
                                 cfg.batch, cfg.max_len,
                                 derive_seed(cfg.seed, "anchor", instance))
    if anchor.predicates:
        anchor = anchors.minimize_anchor(anchor, label_fn, x, train_X, cfg.tau,
                                         cfg.n_min, derive_seed(cfg.seed, "minimize", instance))
    return anchor


@functools.lru_cache(maxsize=2)
def _cached_model(workdir: str):
    return _load_model(workdir)


@functools.lru_cache(maxsize=4)
def _cached_dataset(workdir: str, name: str):
    return _read_dataset_csv(os.path.join(workdir, name))


@functools.lru_cache(maxsize=4)
def _cached_matrix(workdir: str, name: str):
    return np.ascontiguousarray(_cached_dataset(workdir, name).matrix())


def _anchor_worker(args):
    workdir, cfg, instance = args
    return instance, _anchor_for_instance(workdir, cfg, instance)


def cmd_explain_anchor(cfg: RunConfig, instance: int | None, explain_all: bool,
                       limit: int | None, jobs: int) -> None:
    test_ds = _cached_dataset(cfg.workdir, "test.csv")
    names = test_ds.schema.feature_names
    if explain_all:
        ids = list(range(test_ds.n_rows if limit is None else min(limit, test_ds.n_rows)))
    elif instance is None:
        raise ConfigError("explain anchor needs --instance or --all")
    else:
        if not 0 <= instance < test_ds.n_rows:
            raise DataError(f"instance {instance} outside test set of {test_ds.n_rows}")
        ids = [instance]

    tasks = [(cfg.workdir, cfg, i) for i in ids]
    if jobs > 1 and len(ids) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_anchor_worker, tasks))
    else:
        results = dict(map(_anchor_worker, tasks))

    model = _cached_model(cfg.workdir)
    docs = []
    for i in ids:
        a = results[i]
        docs.append(anchors.anchor_to_json(a, names, i))
        text = anchors.render_anchor(a, names, gbdt.label_name(a.predicted_class))
        with open(os.path.join(cfg.workdir, f"anchor_{i}.txt"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    _write_json(os.path.join(cfg.workdir, "anchors.json"), docs)
    if len(ids) > 1:
        X = _cached_matrix(cfg.workdir, "test.csv")[ids]
        em = metrics.anchor_batch_metrics([results[i] for i in ids],
                                          gbdt.label_fn(model, cfg.cutoff), X)
        _write_json(os.path.join(cfg.workdir, "anchor_metrics.json"),
                    metrics.explanation_metrics_json(em))
        with open(os.path.join(cfg.workdir, "anchors.csv"), "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["instance_id", "predicted_class", "n_conditions",
                             "precision", "coverage", "minimized"])
            for i in ids:
                a = results[i]
                writer.writerow([i, gbdt.label_name(a.predicted_class), len(a.predicates),
                                 repr(a.precision_estimate), repr(a.coverage_estimate),
                                 a.minimized])
        _log(f"explain anchor: {len(ids)} instances, mean length "
             f"{em.avg_conditions:.2f}, completeness {em.completeness_pct:.1f}%")
    else:
        _log(f"explain anchor: instance {ids[0]}, "
             f"{len(results[ids[0]].predicates)} conditions")


def cmd_explain_proto(cfg: RunConfig, instance: int | None) -> None:
    if instance is None:
        raise ConfigError("explain proto needs --instance")
    model = _cached_model(cfg.workdir)
    train_ds = _cached_dataset(cfg.workdir, "train.csv")
    test_ds = _cached_dataset(cfg.workdir, "test.csv")
    if not 0 <= instance < test_ds.n_rows:
        raise DataError(f"instance {instance} outside test set of {test_ds.n_rows}")
    x = test_ds.matrix()[instance]
    train_X = _cached_matrix(cfg.workdir, "train.csv")
    target = gbdt.predict_label(model, x, cfg.cutoff)
    pool = np.flatnonzero(gbdt.predict_label_matrix(model, train_X, cfg.cutoff) == target)
    params = protodash.fit_kernel_params(train_X, cfg.proto_gamma)
    ps = protodash.select_prototypes(x, train_X[pool], cfg.proto_m, params,
                                     candidate_ids=pool, query_id=instance)
    top = protodash.top_k(ps, min(cfg.proto_k, len(ps.indices)))
    rows = train_X[top.indices]
    classes = train_ds.labels[top.indices]
    _write_json(os.path.join(cfg.workdir, f"prototypes_{instance}.json"),
                protodash.prototypes_to_json(top, classes, cfg.proto_m, cfg.proto_k))
    with open(os.path.join(cfg.workdir, f"prototypes_{instance}.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(protodash.render_prototypes(x, top, test_ds.schema.feature_names,
                                             rows, classes))
    _log(f"explain proto: instance {instance}, {len(top.indices)} prototypes")


def cmd_report(cfg: RunConfig) -> None:
    sections = []
    for name, title in [
        ("provenance.json", "Preprocessing"),
        ("cv_summary.json", "Cross-validation"),
        ("evaluation.json", "Test evaluation"),
        ("global_metrics.json", "Global explanation (rule set)"),
        ("anchor_metrics.json", "Anchor explanations"),
    ]:
        path = os.path.join(cfg.workdir, name)
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                sections.append((title, json.load(fh)))
    if not sections:
        raise MissingArtifact("nothing to report; run the pipeline first")
    lines = ["credlens run report", "===================", ""]
    for title, doc in sections:
        lines.append(title)
        lines.append("-" * len(title))
        lines.extend(_flatten_json(doc, ""))
        lines.append("")
    tree_txt = os.path.join(cfg.workdir, "interpretation_tree.txt")
    if os.path.exists(tree_txt):
        lines.append("Interpretation tree")
        lines.append("-------------------")
        with open(tree_txt, encoding="utf-8") as fh:
            lines.append(fh.read().rstrip())
        lines.append("")
    with open(os.path.join(cfg.workdir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _log(f"report: {len(sections)} sections")


def _flatten_json(doc, prefix: str) -> list[str]:
    lines = []
    if isinstance(doc, dict):
        for key in doc:
            lines.extend(_flatten_json(doc[key], f"{prefix}{key}."))
    elif isinstance(doc, list):
        lines.append(f"  {prefix[:-1]}: {len(doc)} entries")
    else:
        lines.append(f"  {prefix[:-1]}: {doc}")
    return lines


# -- entry point ---------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="credlens",
        description="Train and explain a credit scoring model.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--outdir", help="artifact directory (overrides config)")
        p.add_argument("--seed", type=int, help="run seed (overrides config)")

    p = sub.add_parser("preprocess", help="clean, encode, split, resample")
    common(p)
    p.add_argument("--input", help="input CSV (overrides config)")

    for name, help_text in [("train", "fit the classifier with CV summary"),
                            ("evaluate", "score the model on the test split"),
                            ("report", "merge artifacts into report.txt")]:
        common(sub.add_parser(name, help=help_text))

    p = sub.add_parser("explain", help="produce explanations")
    common(p)
    p.add_argument("kind", choices=["global", "anchor", "proto"])
    p.add_argument("--instance", type=int, help="test-row index to explain")
    p.add_argument("--all", action="store_true", help="explain every test instance")
    p.add_argument("--limit", type=int, help="cap on --all instance count")
    p.add_argument("--jobs", type=int, default=1, help="parallel explanation workers")
    p.add_argument("--m", type=int, help="prototypes to select (overrides config)")
    p.add_argument("--top", type=int, help="prototypes to keep (overrides config)")
    p.add_argument("--tau", type=float, help="anchor precision threshold (overrides config)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    for cache in (_cached_model, _cached_dataset, _cached_matrix):
        cache.cache_clear()
    try:
        cfg = load_config(args.config)
        if args.outdir:
            cfg.workdir = args.outdir
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.train = gbdt.TrainParams(**{**cfg.train.__dict__, "seed": args.seed})
        if getattr(args, "input", None):
            cfg.input_csv = args.input
        if getattr(args, "m", None):
            cfg.proto_m = args.m
        if getattr(args, "top", None):
            cfg.proto_k = args.top
        if getattr(args, "tau", None) is not None:
            cfg.tau = args.tau

        if args.command == "preprocess":
            cmd_preprocess(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
        elif args.command == "explain":
            if args.kind == "global":
                cmd_explain_global(cfg)
            elif args.kind == "anchor":
                cmd_explain_anchor(cfg, args.instance, args.all, args.limit, args.jobs)
            else:
                cmd_explain_proto(cfg, args.instance)
        elif args.command == "report":
            cmd_report(cfg)
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except MissingArtifact as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return 4
    except (DataError, CredlensError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
