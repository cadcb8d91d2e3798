"""Timing comparison of the compiled and pure-Python kernel backends.

Run:  python benchmarks/bench_kernels.py [--rows N] [--trees T] [--repeat R]
"""
import argparse
import time

import numpy as np

from credlens import _pykernels, gbdt

try:
    from credlens import _fastkernels
except ImportError:
    _fastkernels = None


def make_model(rng, n, d, n_trees, depth):
    X = rng.normal(size=(n, d))
    y = ((X[:, 0] < 0.2) & (X[:, 1] > -0.4) | (X[:, 2] > 0.9)).astype(float)
    params = gbdt.TrainParams(n_trees=n_trees, max_depth=depth, learning_rate=0.2)
    return gbdt.train(X, y, [f"f{i}" for i in range(d)], params), np.ascontiguousarray(X)


def time_backend(impl, fn_name, model, X, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        if fn_name == "margin":
            out = np.zeros(X.shape[0])
            for tree in model.trees:
                impl.margin_matrix(tree.left, tree.right, tree.feature,
                                   tree.threshold, tree.value, X, out)
        elif fn_name == "shap":
            phi = np.zeros((X.shape[0], X.shape[1]))
            for tree in model.trees:
                impl.tree_shap_matrix(tree.left, tree.right, tree.feature,
                                      tree.threshold, tree.value, tree.cover, X, phi)
        else:
            g = np.ascontiguousarray(np.sort(X[:, 0]))
            grad = np.ascontiguousarray(X[:, 1])
            hess = np.ascontiguousarray(np.abs(X[:, 2]) + 0.1)
            for _ in range(50):
                impl.best_split(g, grad, hess, float(grad.sum()),
                                float(hess.sum()), 1.0, 0.0, 1.0)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=5000)
    ap.add_argument("--features", type=int, default=24)
    ap.add_argument("--trees", type=int, default=100)
    ap.add_argument("--depth", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    model, X = make_model(rng, args.rows, args.features, args.trees, args.depth)
    print(f"{args.rows} rows x {args.features} features, "
          f"{args.trees} trees of depth {args.depth}\n")
    print(f"{'kernel':<14} {'python':>10} {'compiled':>10} {'speedup':>9}")
    for fn_name in ("split-scan", "margin", "shap"):
        key = fn_name.split("-")[0] if fn_name != "split-scan" else "split"
        t_py = time_backend(_pykernels, key, model, X, args.repeat)
        if _fastkernels is None:
            print(f"{fn_name:<14} {t_py:>9.3f}s {'n/a':>10} {'n/a':>9}")
            continue
        t_c = time_backend(_fastkernels, key, model, X, args.repeat)
        print(f"{fn_name:<14} {t_py:>9.3f}s {t_c:>9.3f}s {t_py / t_c:>8.1f}x")


if __name__ == "__main__":
    main()
