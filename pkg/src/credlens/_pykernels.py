"""Numpy fallback for the compiled kernels.

Each function mirrors the arithmetic of its compiled twin operation for
operation (same expression shapes, same accumulation order), so a model
trained or explained on either backend produces bit-identical numbers.
"""
import numpy as np

NAME = "python"


def best_split(xs, gs, hs, g_total, h_total, reg_lambda, gamma, min_child_weight):
    """Scan one feature (pre-sorted) for the best gain.

    xs, gs, hs are the feature values, gradients and hessians of the node's
    rows in ascending xs order. Returns (gain, threshold); gain is -inf when
    no admissible split exists.
    """
    n = xs.shape[0]
    if n < 2:
        return -np.inf, 0.0
    gl = np.cumsum(gs)[:-1]
    hl = np.cumsum(hs)[:-1]
    gr = g_total - gl
    hr = h_total - hl
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = 0.5 * (gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda)
                      - g_total * g_total / (h_total + reg_lambda)) - gamma
    valid = (xs[:-1] != xs[1:]) & (hl >= min_child_weight) & (hr >= min_child_weight)
    valid &= np.isfinite(gain)
    if not valid.any():
        return -np.inf, 0.0
    gain = np.where(valid, gain, -np.inf)
    i = int(np.argmax(gain))
    return float(gain[i]), float((xs[i] + xs[i + 1]) / 2.0)


def margin_matrix(left, right, feature, threshold, value, X, out):
    """Add one tree's leaf value to out for every row of X."""
    n = X.shape[0]
    node = np.zeros(n, dtype=np.intp)
    while True:
        f = feature[node]
        live = np.flatnonzero(f >= 0)
        if live.size == 0:
            break
        at = node[live]
        go_left = X[live, f[live]] < threshold[at]
        node[live] = np.where(go_left, left[at], right[at])
    out += value[node]


def tree_shap_matrix(left, right, feature, threshold, value, cover, X, phi):
    """Accumulate one tree's per-feature contributions for every row of X.

    Path-dependent conditioning: branches off the instance's path are
    weighted by child/parent cover ratios. Vectorized across rows — the path
    feature ids and cover fractions are row-independent, so only the "taken"
    indicators and the permutation weights are carried as per-row vectors.
    """
    n = X.shape[0]
    if n == 0:
        return
    with np.errstate(divide="ignore", invalid="ignore"):
        _shap_recurse(left, right, feature, threshold, value, cover, X, phi,
                      0, 0, [], [], [], [], 1.0, np.ones(n), -1)


def _shap_recurse(left, right, feature, threshold, value, cover, X, phi,
                  node, u, fd, fz, fo, fw, pz, po, pi):
    # copy-on-descend, then extend the path with the edge just taken
    fd = fd[:u] + [pi]
    fz = fz[:u] + [pz]
    fo = fo[:u] + [po]
    fw = fw[:u] + [np.ones(X.shape[0]) if u == 0 else np.zeros(X.shape[0])]
    for i in range(u - 1, -1, -1):
        fw[i + 1] = fw[i + 1] + po * fw[i] * (i + 1.0) / (u + 1.0)
        fw[i] = pz * fw[i] * (u - i) / (u + 1.0)

    f = feature[node]
    if f < 0:
        leaf = value[node]
        for i in range(1, u + 1):
            w = _unwound_sum(fz, fo, fw, u, i)
            phi[:, fd[i]] += w * (fo[i] - fz[i]) * leaf
        return

    l, r = left[node], right[node]
    rl = cover[l] / cover[node]
    rr = cover[r] / cover[node]
    iz, io = 1.0, None
    for k in range(u + 1):
        if fd[k] == f:
            iz, io = fz[k], fo[k]
            _unwind(fd, fz, fo, fw, u, k)
            u -= 1
            break
    if io is None:
        io = np.ones(X.shape[0])
    taken_left = (X[:, f] < threshold[node]).astype(np.float64)
    _shap_recurse(left, right, feature, threshold, value, cover, X, phi,
                  l, u + 1, fd, fz, fo, fw, iz * rl, io * taken_left, f)
    _shap_recurse(left, right, feature, threshold, value, cover, X, phi,
                  r, u + 1, fd, fz, fo, fw, iz * rr, io * (1.0 - taken_left), f)


def _unwound_sum(fz, fo, fw, u, i):
    # permutation weight of the path with element i removed; rows where the
    # element's taken-indicator is zero use the closed-form branch
    one, zero = fo[i], fz[i]
    nx = fw[u]
    total_a = np.zeros_like(nx)
    total_b = np.zeros_like(nx)
    for j in range(u - 1, -1, -1):
        tmp = nx / ((j + 1.0) * one)
        total_a = total_a + tmp
        nx = fw[j] - tmp * zero * (u - j)
        total_b = total_b + fw[j] / (zero * (u - j))
    return np.where(one != 0.0, total_a, total_b) * (u + 1.0)


def _unwind(fd, fz, fo, fw, u, k):
    # remove element k from the path, restoring the weights it scaled
    one, zero = fo[k], fz[k]
    nx = fw[u]
    for j in range(u - 1, -1, -1):
        tmp = fw[j]
        wa = nx * (u + 1.0) / ((j + 1.0) * one)
        nx = tmp - wa * zero * (u - j) / (u + 1.0)
        wb = tmp * (u + 1.0) / (zero * (u - j))
        fw[j] = np.where(one != 0.0, wa, wb)
    for j in range(k, u):
        fd[j] = fd[j + 1]
        fz[j] = fz[j + 1]
        fo[j] = fo[j + 1]
