# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels.

Mirrors `_kernels_py` operation for operation. Loop nests may differ for
cache friendliness, but the per-output-element sequence of additions and
multiplications is identical, and the module is built with -ffp-contract=off,
so results are bit-identical to the pure-Python fallback.
"""

from libc.math cimport exp, sqrt


def matmul_nn(double[::1] a, double[::1] b, double[::1] out,
              Py_ssize_t n, Py_ssize_t k, Py_ssize_t m):
    """out[n x m] = a[n x k] @ b[k x m]."""
    cdef Py_ssize_t i, j, l
    cdef double a_il
    for i in range(n * m):
        out[i] = 0.0
    for i in range(n):
        for l in range(k):
            a_il = a[i * k + l]
            for j in range(m):
                out[i * m + j] += a_il * b[l * m + j]


def matmul_nt(double[::1] a, double[::1] b, double[::1] out,
              Py_ssize_t n, Py_ssize_t k, Py_ssize_t m):
    """out[n x m] = a[n x k] @ b[m x k]^T."""
    cdef Py_ssize_t i, j, l
    cdef double acc
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for l in range(k):
                acc += a[i * k + l] * b[j * k + l]
            out[i * m + j] = acc


def matmul_tn(double[::1] a, double[::1] b, double[::1] out,
              Py_ssize_t n, Py_ssize_t k, Py_ssize_t m):
    """out[n x m] = a[k x n]^T @ b[k x m]."""
    cdef Py_ssize_t i, j, l
    cdef double a_li
    for i in range(n * m):
        out[i] = 0.0
    for l in range(k):
        for i in range(n):
            a_li = a[l * n + i]
            for j in range(m):
                out[i * m + j] += a_li * b[l * m + j]


def add_row_vector(double[::1] x, double[::1] v, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(m):
            x[i * m + j] += v[j]


def relu_inplace(double[::1] x, Py_ssize_t size):
    cdef Py_ssize_t i
    for i in range(size):
        if x[i] < 0.0:
            x[i] = 0.0


def relu_backward_inplace(double[::1] dh, double[::1] h, Py_ssize_t size):
    cdef Py_ssize_t i
    for i in range(size):
        if h[i] <= 0.0:
            dh[i] = 0.0


def col_sums(double[::1] x, double[::1] out, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j
    for j in range(m):
        out[j] = 0.0
    for i in range(n):
        for j in range(m):
            out[j] += x[i * m + j]


def softmax_rows(double[::1] x, double[::1] out, Py_ssize_t n, Py_ssize_t c):
    cdef Py_ssize_t i, j
    cdef double mx, s, e, v
    for i in range(n):
        mx = x[i * c]
        for j in range(1, c):
            v = x[i * c + j]
            if v > mx:
                mx = v
        s = 0.0
        for j in range(c):
            e = exp(x[i * c + j] - mx)
            out[i * c + j] = e
            s += e
        for j in range(c):
            out[i * c + j] = out[i * c + j] / s


def adam_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                Py_ssize_t size, double lr, double beta1, double beta2,
                double eps, double c1, double c2):
    cdef Py_ssize_t i
    cdef double gi, mi, vi, mhat, vhat
    for i in range(size):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * (gi * gi)
        m[i] = mi
        v[i] = vi
        mhat = mi / c1
        vhat = vi / c2
        p[i] = p[i] - lr * mhat / (sqrt(vhat) + eps)


def gather(double[::1] src, long long[::1] idx, double[::1] out, Py_ssize_t size):
    cdef Py_ssize_t i
    for i in range(size):
        out[i] = src[idx[i]]
