"""Kernel backend selection.

At import time the compiled extension (`emorank._kernels_c`) is preferred;
the pure-Python fallback (`emorank._kernels_py`) is used when the extension
is missing. The two are bit-identical in output, so the choice only affects
speed. Set EMORANK_BACKEND=python|compiled to force one (the benchmark and
the parity tests do this via `set_backend`).
"""

import os

from emorank import _kernels_py

try:
    from emorank import _kernels_c
except ImportError:  # extension not built; run `pip install -e .`
    _kernels_c = None

_BACKENDS = {"python": _kernels_py}
if _kernels_c is not None:
    _BACKENDS["compiled"] = _kernels_c


def _default_backend() -> str:
    forced = os.environ.get("EMORANK_BACKEND", "").strip().lower()
    if forced:
        if forced not in _BACKENDS:
            raise ImportError(
                f"EMORANK_BACKEND={forced!r} requested but that backend is "
                f"unavailable (have: {sorted(_BACKENDS)})"
            )
        return forced
    return "compiled" if _kernels_c is not None else "python"


BACKEND = _default_backend()
_impl = _BACKENDS[BACKEND]


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def set_backend(name: str) -> str:
    """Switch the active backend; returns the previous one."""
    global BACKEND, _impl
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r} (have: {sorted(_BACKENDS)})")
    previous = BACKEND
    BACKEND = name
    _impl = _BACKENDS[name]
    return previous


def matmul_nn(a, b, out, n, k, m):
    _impl.matmul_nn(a, b, out, n, k, m)


def matmul_nt(a, b, out, n, k, m):
    _impl.matmul_nt(a, b, out, n, k, m)


def matmul_tn(a, b, out, n, k, m):
    _impl.matmul_tn(a, b, out, n, k, m)


def add_row_vector(x, v, n, m):
    _impl.add_row_vector(x, v, n, m)


def relu_inplace(x, size):
    _impl.relu_inplace(x, size)


def relu_backward_inplace(dh, h, size):
    _impl.relu_backward_inplace(dh, h, size)


def col_sums(x, out, n, m):
    _impl.col_sums(x, out, n, m)


def softmax_rows(x, out, n, c):
    _impl.softmax_rows(x, out, n, c)


def adam_update(p, g, m, v, size, lr, beta1, beta2, eps, c1, c2):
    _impl.adam_update(p, g, m, v, size, lr, beta1, beta2, eps, c1, c2)


def gather(src, idx, out, size):
    _impl.gather(src, idx, out, size)
