"""Pure-Python fallback for the hot numeric kernels.

Every function here mirrors the compiled extension in `_kernels_c.pyx`
operation for operation: the per-element floating-point addition and
multiplication order is identical, so the two backends produce bit-identical
results (the extension is compiled with FMA contraction disabled).

Buffers are flat row-major `array('d')` values (anything indexable works);
index buffers are `array('q')`. No bounds checking beyond what Python does.
"""

from math import exp, sqrt


def matmul_nn(a, b, out, n, k, m):
    """out[n x m] = a[n x k] @ b[k x m]."""
    for i in range(n):
        ik = i * k
        im = i * m
        for j in range(m):
            acc = 0.0
            for l in range(k):
                acc += a[ik + l] * b[l * m + j]
            out[im + j] = acc


def matmul_nt(a, b, out, n, k, m):
    """out[n x m] = a[n x k] @ b[m x k]^T."""
    for i in range(n):
        ik = i * k
        im = i * m
        for j in range(m):
            jk = j * k
            acc = 0.0
            for l in range(k):
                acc += a[ik + l] * b[jk + l]
            out[im + j] = acc


def matmul_tn(a, b, out, n, k, m):
    """out[n x m] = a[k x n]^T @ b[k x m]."""
    for i in range(n):
        im = i * m
        for j in range(m):
            acc = 0.0
            for l in range(k):
                acc += a[l * n + i] * b[l * m + j]
            out[im + j] = acc


def add_row_vector(x, v, n, m):
    """x[i, j] += v[j] for every row i."""
    for i in range(n):
        im = i * m
        for j in range(m):
            x[im + j] += v[j]


def relu_inplace(x, size):
    for i in range(size):
        if x[i] < 0.0:
            x[i] = 0.0


def relu_backward_inplace(dh, h, size):
    """Zero dh wherever the post-activation h is 0 (subgradient 0 at the kink)."""
    for i in range(size):
        if h[i] <= 0.0:
            dh[i] = 0.0


def col_sums(x, out, n, m):
    """out[j] = sum_i x[i, j], accumulated in increasing row order."""
    for j in range(m):
        out[j] = 0.0
    for i in range(n):
        im = i * m
        for j in range(m):
            out[j] += x[im + j]


def softmax_rows(x, out, n, c):
    """Row-wise max-subtracted softmax of x[n x c] into out."""
    for i in range(n):
        ic = i * c
        mx = x[ic]
        for j in range(1, c):
            v = x[ic + j]
            if v > mx:
                mx = v
        s = 0.0
        for j in range(c):
            e = exp(x[ic + j] - mx)
            out[ic + j] = e
            s += e
        for j in range(c):
            out[ic + j] = out[ic + j] / s


def adam_update(p, g, m, v, size, lr, beta1, beta2, eps, c1, c2):
    """One bias-corrected Adam step; c1 = 1 - beta1^t, c2 = 1 - beta2^t."""
    for i in range(size):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * (gi * gi)
        m[i] = mi
        v[i] = vi
        mhat = mi / c1
        vhat = vi / c2
        p[i] = p[i] - lr * mhat / (sqrt(vhat) + eps)


def gather(src, idx, out, size):
    """out[i] = src[idx[i]] (pixel shuffles for crops and flips)."""
    for i in range(size):
        out[i] = src[idx[i]]
