"""Minimal deterministic numeric core.

Everything here is dependency-free and reproducible across platforms:
row-major float64 matrices, a fixed 64-bit counter-based RNG, stable softmax,
tie-broken argmax / top-k selection, and the bias-corrected Adam update.
Batch-heavy loops delegate to :mod:`emorank.kernels`.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from emorank import kernels
from emorank.errors import InvalidInputError

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_TO_DOUBLE = 1.0 / 9007199254740992.0  # 2^-53


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """SplitMix64 generator: state walks by a fixed odd increment and each
    output is the mixed state, so the sequence is a pure function of the seed.

    ``stream`` selects a decorrelated starting state (``seed ^ mix64(stream)``);
    stream 0 is the textbook generator. First outputs for (seed=42, stream=0)
    are frozen in tests/golden/rng_splitmix64.json.
    """

    __slots__ = ("_state",)

    def __init__(self, seed: int, stream: int = 0):
        self._state = ((seed & _MASK64) ^ _mix64(stream & _MASK64)) & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix64(self._state)

    def random(self) -> float:
        """Uniform float64 in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * _TO_DOUBLE

    def uniform(self, lo: float, hi: float) -> float:
        """Uniform in [lo, hi); advances the state by one draw."""
        if not lo < hi:
            raise InvalidInputError(f"uniform requires lo < hi, got [{lo}, {hi})")
        return lo + self.random() * (hi - lo)

    def randrange(self, n: int) -> int:
        """Integer in [0, n)."""
        if n <= 0:
            raise InvalidInputError(f"randrange requires n >= 1, got {n}")
        j = int(self.random() * n)
        return n - 1 if j >= n else j

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        """Box-Muller (cosine branch); consumes exactly two uniforms."""
        u1 = 1.0 - self.random()  # (0, 1], keeps log() finite
        u2 = self.random()
        return mu + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]


def rng_uniform(rng: Rng, lo: float, hi: float) -> float:
    """Functional alias for :meth:`Rng.uniform`."""
    return rng.uniform(lo, hi)


class Matrix:
    """Dense row-major float64 matrix backed by a flat ``array('d')``."""

    __slots__ = ("rows", "cols", "data")

    def __init__(self, rows: int, cols: int, data: array | None = None):
        if rows < 0 or cols < 0:
            raise InvalidInputError(f"matrix dims must be non-negative, got {rows}x{cols}")
        self.rows = rows
        self.cols = cols
        if data is None:
            data = array("d", bytes(8 * rows * cols))
        if len(data) != rows * cols:
            raise InvalidInputError(
                f"matrix data length {len(data)} != {rows}x{cols}"
            )
        self.data = data

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "Matrix":
        n = len(rows)
        m = len(rows[0]) if n else 0
        flat = array("d")
        for r in rows:
            if len(r) != m:
                raise InvalidInputError("ragged rows")
            flat.extend(r)
        mat = cls(n, m, flat)
        for v in mat.data:
            if not math.isfinite(v):
                raise InvalidInputError("matrix values must be finite")
        return mat

    def at(self, i: int, j: int) -> float:
        return self.data[i * self.cols + j]

    def set(self, i: int, j: int, v: float) -> None:
        self.data[i * self.cols + j] = v

    def row(self, i: int) -> array:
        return self.data[i * self.cols:(i + 1) * self.cols]

    def copy(self) -> "Matrix":
        return Matrix(self.rows, self.cols, array("d", self.data))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Matrix)
            and self.rows == other.rows
            and self.cols == other.cols
            and self.data == other.data
        )

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


class ProbVector:
    """Probability distribution over classes: entries in [0, 1], sum 1."""

    __slots__ = ("values",)

    _RANGE_TOL = 1e-12
    _SUM_TOL = 1e-9

    def __init__(self, values: Iterable[float], validate: bool = True):
        vals = tuple(float(v) for v in values)
        if validate:
            if not vals:
                raise InvalidInputError("probability vector must be non-empty")
            total = 0.0
            for v in vals:
                if not (-self._RANGE_TOL <= v <= 1.0 + self._RANGE_TOL):
                    raise InvalidInputError(f"probability {v} outside [0, 1]")
                total += v
            if abs(total - 1.0) > self._SUM_TOL:
                raise InvalidInputError(f"probabilities sum to {total}, not 1")
        self.values = vals

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def __iter__(self):
        return iter(self.values)

    def __eq__(self, other) -> bool:
        return isinstance(other, ProbVector) and self.values == other.values

    def __repr__(self) -> str:
        return f"ProbVector({list(self.values)!r})"

    def argmax(self) -> int:
        return argmax_tiebreak(self.values)

    def confidence(self) -> float:
        """Top-1 probability."""
        return self.values[self.argmax()]


def softmax(logits: Sequence[float]) -> ProbVector:
    """Stable softmax via max subtraction."""
    if len(logits) == 0:
        raise InvalidInputError("softmax of an empty vector")
    for v in logits:
        if not math.isfinite(v):
            raise InvalidInputError(f"non-finite logit {v}")
    mx = logits[0]
    for v in logits:
        if v > mx:
            mx = v
    exps = [math.exp(v - mx) for v in logits]
    s = 0.0
    for e in exps:
        s += e
    return ProbVector([e / s for e in exps], validate=False)


def argmax_tiebreak(values: Sequence[float]) -> int:
    """Index of the maximum; ties resolve to the lowest index."""
    if len(values) == 0:
        raise InvalidInputError("argmax of an empty vector")
    best = 0
    best_v = values[0]
    for i in range(1, len(values)):
        if values[i] > best_v:
            best = i
            best_v = values[i]
    return best


def top_k(values: Sequence[float], k: int) -> list[tuple[int, float]]:
    """k largest entries as (index, value), values non-increasing, ties by
    ascending index."""
    n = len(values)
    if not 1 <= k <= n:
        raise InvalidInputError(f"top_k k={k} out of range for length {n}")
    order = sorted(range(n), key=lambda i: (-values[i], i))
    return [(i, values[i]) for i in order[:k]]


@dataclass
class AdamState:
    """Optimizer state for a list of flat parameter buffers."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[array] = field(default_factory=list)
    v: list[array] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[array], lr: float = 5e-4,
                   beta1: float = 0.9, beta2: float = 0.999,
                   epsilon: float = 1e-8) -> "AdamState":
        if lr <= 0 or epsilon <= 0 or not (0 < beta1 < 1) or not (0 < beta2 < 1):
            raise InvalidInputError("invalid Adam hyperparameters")
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon, step=0,
            m=[array("d", bytes(8 * len(p))) for p in params],
            v=[array("d", bytes(8 * len(p))) for p in params],
        )


def adam_step(params: Sequence[array], grads: Sequence[array],
              state: AdamState) -> tuple[Sequence[array], AdamState]:
    """Bias-corrected Adam update, in place; returns (params, state)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidInputError("params/grads/state buffer counts differ")
    for p, g, m in zip(params, grads, state.m):
        if len(p) != len(g) or len(p) != len(m):
            raise InvalidInputError("params/grads/state buffer shapes differ")
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        kernels.adam_update(p, g, m, v, len(p), state.lr, state.beta1,
                            state.beta2, state.epsilon, c1, c2)
    state.step = t
    return params, state
