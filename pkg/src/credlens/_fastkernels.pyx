# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: split scan, batch margin, path-dependent SHAP.

Arithmetic is kept expression-for-expression identical to _pykernels so the
two backends agree bit for bit.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, isfinite

cnp.import_array()

NAME = "compiled"


def best_split(double[::1] xs, double[::1] gs, double[::1] hs,
               double g_total, double h_total,
               double reg_lambda, double gamma, double min_child_weight):
    """Scan one feature (pre-sorted) for the best gain; see _pykernels."""
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t i
    cdef double gl = 0.0, hl = 0.0, gr, hr, gain
    cdef double best_gain = -INFINITY, best_thr = 0.0
    cdef double parent = g_total * g_total / (h_total + reg_lambda)
    if n < 2:
        return -INFINITY, 0.0
    for i in range(n - 1):
        gl = gl + gs[i]
        hl = hl + hs[i]
        if xs[i] == xs[i + 1]:
            continue
        gr = g_total - gl
        hr = h_total - hl
        if hl < min_child_weight or hr < min_child_weight:
            continue
        gain = 0.5 * (gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent) - gamma
        if not isfinite(gain):
            continue
        if gain > best_gain:
            best_gain = gain
            best_thr = (xs[i] + xs[i + 1]) / 2.0
    return best_gain, best_thr


def margin_matrix(cnp.int64_t[::1] left, cnp.int64_t[::1] right, cnp.int64_t[::1] feature,
                  double[::1] threshold, double[::1] value,
                  double[:, ::1] X, double[::1] out):
    """Add one tree's leaf value to out for every row of X."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t i
    cdef cnp.int64_t node
    with nogil:
        for i in range(n):
            node = 0
            while feature[node] >= 0:
                if X[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] += value[node]


def tree_shap_matrix(cnp.int64_t[::1] left, cnp.int64_t[::1] right, cnp.int64_t[::1] feature,
                     double[::1] threshold, double[::1] value, double[::1] cover,
                     double[:, ::1] X, double[:, ::1] phi):
    """Accumulate one tree's per-feature contributions for every row of X."""
    cdef Py_ssize_t n = X.shape[0]
    cdef int depth = _max_depth(left, right, 0)
    # triangular workspace: one path segment per recursion level
    cdef Py_ssize_t cap = (depth + 2) * (depth + 3) // 2
    fd_arr = np.zeros(cap, dtype=np.int64)
    fz_arr = np.zeros(cap, dtype=np.float64)
    fo_arr = np.zeros(cap, dtype=np.float64)
    fw_arr = np.zeros(cap, dtype=np.float64)
    cdef cnp.int64_t[::1] fd = fd_arr
    cdef double[::1] fz = fz_arr
    cdef double[::1] fo = fo_arr
    cdef double[::1] fw = fw_arr
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            _shap_row(&left[0], &right[0], &feature[0], &threshold[0], &value[0],
                      &cover[0], &X[i, 0], &phi[i, 0],
                      0, 0, &fd[0], &fz[0], &fo[0], &fw[0], 1.0, 1.0, -1)


cdef int _max_depth(cnp.int64_t[::1] left, cnp.int64_t[::1] right, cnp.int64_t node) noexcept nogil:
    if left[node] < 0:
        return 0
    cdef int dl = _max_depth(left, right, left[node])
    cdef int dr = _max_depth(left, right, right[node])
    return 1 + (dl if dl > dr else dr)


cdef void _shap_row(const cnp.int64_t* left, const cnp.int64_t* right, const cnp.int64_t* feature,
                    const double* threshold, const double* value, const double* cover,
                    const double* x, double* phi,
                    cnp.int64_t node, int u,
                    cnp.int64_t* pfd, double* pfz, double* pfo, double* pfw,
                    double pz, double po, cnp.int64_t pi) noexcept nogil:
    # copy-on-descend into the next workspace segment, then extend
    cdef cnp.int64_t* fd = pfd + u + 1
    cdef double* fz = pfz + u + 1
    cdef double* fo = pfo + u + 1
    cdef double* fw = pfw + u + 1
    cdef int i, j, k
    for i in range(u):
        fd[i] = pfd[i]
        fz[i] = pfz[i]
        fo[i] = pfo[i]
        fw[i] = pfw[i]
    fd[u] = pi
    fz[u] = pz
    fo[u] = po
    fw[u] = 1.0 if u == 0 else 0.0
    for i in range(u - 1, -1, -1):
        fw[i + 1] = fw[i + 1] + po * fw[i] * (i + 1.0) / (u + 1.0)
        fw[i] = pz * fw[i] * (u - i) / (u + 1.0)

    cdef cnp.int64_t f = feature[node]
    cdef double leaf, w
    if f < 0:
        leaf = value[node]
        for i in range(1, u + 1):
            w = _unwound_sum(fz, fo, fw, u, i)
            phi[fd[i]] += w * (fo[i] - fz[i]) * leaf
        return

    cdef cnp.int64_t l = left[node]
    cdef cnp.int64_t r = right[node]
    cdef double rl = cover[l] / cover[node]
    cdef double rr = cover[r] / cover[node]
    cdef double iz = 1.0, io = 1.0
    for k in range(u + 1):
        if fd[k] == f:
            iz = fz[k]
            io = fo[k]
            _unwind(fd, fz, fo, fw, u, k)
            u -= 1
            break
    cdef double taken_left = 1.0 if x[f] < threshold[node] else 0.0
    _shap_row(left, right, feature, threshold, value, cover, x, phi,
              l, u + 1, fd, fz, fo, fw, iz * rl, io * taken_left, f)
    _shap_row(left, right, feature, threshold, value, cover, x, phi,
              r, u + 1, fd, fz, fo, fw, iz * rr, io * (1.0 - taken_left), f)


cdef double _unwound_sum(const double* fz, const double* fo, const double* fw,
                         int u, int k) noexcept nogil:
    cdef double one = fo[k]
    cdef double zero = fz[k]
    cdef double nx = fw[u]
    cdef double total = 0.0
    cdef double tmp
    cdef int j
    if one != 0.0:
        for j in range(u - 1, -1, -1):
            tmp = nx / ((j + 1.0) * one)
            total = total + tmp
            nx = fw[j] - tmp * zero * (u - j)
    else:
        for j in range(u - 1, -1, -1):
            total = total + fw[j] / (zero * (u - j))
    return total * (u + 1.0)


cdef void _unwind(cnp.int64_t* fd, double* fz, double* fo, double* fw,
                  int u, int k) noexcept nogil:
    cdef double one = fo[k]
    cdef double zero = fz[k]
    cdef double nx = fw[u]
    cdef double tmp
    cdef int j
    for j in range(u - 1, -1, -1):
        tmp = fw[j]
        if one != 0.0:
            fw[j] = nx * (u + 1.0) / ((j + 1.0) * one)
            nx = tmp - fw[j] * zero * (u - j) / (u + 1.0)
        else:
            fw[j] = tmp * (u + 1.0) / (zero * (u - j))
    for j in range(k, u):
        fd[j] = fd[j + 1]
        fz[j] = fz[j + 1]
        fo[j] = fo[j + 1]
