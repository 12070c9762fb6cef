"""Training objectives: focal loss, margin ranking loss, and their
combination.

All losses are computed from logits so analytic gradients flow through the
softmax; batch reduction is a fixed-order mean so results do not depend on
accumulation order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

from emorank.errors import InvalidInputError, NumericError
from emorank.numcore import argmax_tiebreak


class RankMode(enum.Enum):
    """How the ranking hinge reads confidences.

    LABEL_INDEXED compares the probability of each parent class directly;
    TOP1 compares overall top-1 confidences regardless of class.
    """

    LABEL_INDEXED = "label_indexed"
    TOP1 = "top1"

    @classmethod
    def parse(cls, text: str) -> "RankMode":
        for mode in cls:
            if mode.value == text:
                return mode
        raise InvalidInputError(
            f"unknown rank mode {text!r}, expected one of "
            f"{[m.value for m in cls]}")


@dataclass
class FocalConfig:
    """Focusing exponent and class weight for the focal loss."""

    gamma: float = 2.0
    alpha: float = 0.25

    def __post_init__(self):
        if self.gamma < 0:
            raise InvalidInputError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidInputError(f"alpha must be in (0, 1], got {self.alpha}")


@dataclass
class LossBundle:
    """A loss value plus its gradient with respect to one logit vector."""

    value: float
    grad: tuple[float, ...]


@dataclass
class RankingBundle:
    """Ranking loss value plus gradients for the three logit vectors."""

    value: float
    grad_syn: tuple[float, ...]
    grad_fer: tuple[float, ...]
    grad_fr: tuple[float, ...]


@dataclass
class RankingInputs:
    """One blend triple: synthetic-sample logits plus its two parents'
    logits, the parent classes, and the margin."""

    logits_syn: Sequence[float]
    logits_fer: Sequence[float]
    logits_fr: Sequence[float]
    c1: int
    c2: int
    delta: float = 0.2
    mode: RankMode = RankMode.LABEL_INDEXED

    def __post_init__(self):
        c = len(self.logits_syn)
        if c < 2:
            raise InvalidInputError("need at least 2 classes")
        if len(self.logits_fer) != c or len(self.logits_fr) != c:
            raise InvalidInputError("logit vectors must share one length")
        if self.c1 == self.c2:
            raise InvalidInputError(f"parent classes must differ, both {self.c1}")
        if not (0 <= self.c1 < c and 0 <= self.c2 < c):
            raise InvalidInputError(
                f"parent classes ({self.c1},{self.c2}) out of range for {c}")
        if self.delta < 0:
            raise InvalidInputError(f"margin must be >= 0, got {self.delta}")


@dataclass
class ObjectiveConfig:
    """Weights and switches for combining the loss groups."""

    w_rank: float = 1.0
    syn_focal: bool = True
    fr_focal: bool = True

    def __post_init__(self):
        if self.w_rank < 0:
            raise InvalidInputError(f"w_rank must be >= 0, got {self.w_rank}")


def _log_softmax(logits: Sequence[float]) -> tuple[list[float], list[float]]:
    """Return (log-probabilities, probabilities), max-subtracted for
    stability."""
    if len(logits) == 0:
        raise InvalidInputError("empty logit vector")
    mx = logits[0]
    for v in logits:
        if not math.isfinite(v):
            raise InvalidInputError(f"non-finite logit {v}")
        if v > mx:
            mx = v
    shifted = [v - mx for v in logits]
    total = 0.0
    for v in shifted:
        total += math.exp(v)
    log_total = math.log(total)
    ls = [v - log_total for v in shifted]
    return ls, [math.exp(v) for v in ls]


def _focal_coef(y: float, p: float, ls: float, gamma: float,
                alpha: float) -> float:
    """d(y * focal term)/d p, times p (folded for the softmax chain rule)."""
    one_minus = 1.0 - p
    if one_minus <= 0.0:
        # limit at p -> 1: both pieces vanish for gamma > 0, -alpha*y for CE
        return -alpha * y if gamma == 0.0 else 0.0
    term = alpha * one_minus ** gamma
    if gamma > 0.0:
        term -= alpha * gamma * one_minus ** (gamma - 1.0) * p * ls
    return -y * term


def focal_loss(logits: Sequence[float], target: int | Sequence[float],
               config: FocalConfig) -> LossBundle:
    """Focal loss -alpha * (1-p_t)^gamma * ln(p_t) with analytic gradient.

    A hard target is a class index; a soft target is a label vector, scored
    as the label-weighted sum of per-class focal terms. gamma=0, alpha=1
    reduces to cross-entropy.
    """
    ls, p = _log_softmax(logits)
    c = len(logits)
    if isinstance(target, int):
        if not 0 <= target < c:
            raise InvalidInputError(f"target {target} out of range for {c}")
        weights = [(target, 1.0)]
    else:
        if len(target) != c:
            raise InvalidInputError(
                f"soft label length {len(target)} != {c} classes")
        total = sum(target)
        if abs(total - 1.0) > 1e-6 or any(v < 0 for v in target):
            raise InvalidInputError("soft label must be a distribution")
        weights = [(j, y) for j, y in enumerate(target) if y != 0.0]

    value = 0.0
    coef = [0.0] * c
    for j, y in weights:
        value += y * (-config.alpha) * (1.0 - p[j]) ** config.gamma * ls[j]
        coef[j] = _focal_coef(y, p[j], ls[j], config.gamma, config.alpha)
    if not math.isfinite(value):
        raise NumericError(f"focal loss is {value}")
    s = sum(coef)
    grad = tuple(coef[j] - p[j] * s for j in range(c))
    return LossBundle(value=value, grad=grad)


def ranking_value(p_syn: Sequence[float], p_fer: Sequence[float],
                  p_fr: Sequence[float], c1: int, c2: int, delta: float,
                  mode: RankMode = RankMode.LABEL_INDEXED) -> float:
    """Ranking loss on probabilities (no gradient): two hinges demanding the
    synthetic sample score below each parent by at least the margin."""
    if mode is RankMode.LABEL_INDEXED:
        h1 = p_syn[c1] - p_fer[c1] + delta
        h2 = p_syn[c2] - p_fr[c2] + delta
    else:
        top = max(p_syn)
        h1 = top - max(p_fer) + delta
        h2 = top - max(p_fr) + delta
    return max(0.0, h1) + max(0.0, h2)


def _chain_softmax(p: list[float], dloss_dp: list[float]) -> tuple[float, ...]:
    """Pull a probability-space gradient back to logits:
    g_j = p_j * (u_j - sum_c u_c p_c)."""
    s = 0.0
    for u, pc in zip(dloss_dp, p):
        s += u * pc
    return tuple(pj * (uj - s) for pj, uj in zip(p, dloss_dp))


def ranking_loss(inputs: RankingInputs) -> RankingBundle:
    """Two-hinge margin ranking loss with gradients to all three logit
    vectors. Subgradient at a hinge kink (and at top-1 ties) is 0 and the
    lowest index, respectively."""
    _, p_syn = _log_softmax(inputs.logits_syn)
    _, p_fer = _log_softmax(inputs.logits_fer)
    _, p_fr = _log_softmax(inputs.logits_fr)
    c = len(p_syn)
    u_syn = [0.0] * c
    u_fer = [0.0] * c
    u_fr = [0.0] * c
    if inputs.mode is RankMode.LABEL_INDEXED:
        h1 = p_syn[inputs.c1] - p_fer[inputs.c1] + inputs.delta
        h2 = p_syn[inputs.c2] - p_fr[inputs.c2] + inputs.delta
        if h1 > 0.0:
            u_syn[inputs.c1] += 1.0
            u_fer[inputs.c1] -= 1.0
        if h2 > 0.0:
            u_syn[inputs.c2] += 1.0
            u_fr[inputs.c2] -= 1.0
    else:
        a_syn = argmax_tiebreak(p_syn)
        a_fer = argmax_tiebreak(p_fer)
        a_fr = argmax_tiebreak(p_fr)
        h1 = p_syn[a_syn] - p_fer[a_fer] + inputs.delta
        h2 = p_syn[a_syn] - p_fr[a_fr] + inputs.delta
        if h1 > 0.0:
            u_syn[a_syn] += 1.0
            u_fer[a_fer] -= 1.0
        if h2 > 0.0:
            u_syn[a_syn] += 1.0
            u_fr[a_fr] -= 1.0
    value = max(0.0, h1) + max(0.0, h2)
    if not math.isfinite(value):
        raise NumericError(f"ranking loss is {value}")
    return RankingBundle(
        value=value,
        grad_syn=_chain_softmax(p_syn, u_syn),
        grad_fer=_chain_softmax(p_fer, u_fer),
        grad_fr=_chain_softmax(p_fr, u_fr))


@dataclass
class TotalLoss:
    """Combined objective value, per-group means, and the coefficient each
    group's per-sample gradients carry in the total gradient."""

    value: float
    parts: dict[str, float] = field(default_factory=dict)
    fer_scale: float = 0.0
    fr_scale: float = 0.0
    syn_scale: float = 0.0
    rank_scale: float = 0.0


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def total_loss(fer: Sequence[LossBundle], fr: Sequence[LossBundle],
               syn: Sequence[LossBundle], rank: Sequence[RankingBundle],
               config: ObjectiveConfig) -> TotalLoss:
    """Mean-per-group combination.

    total = mean(fer) + mean(fr, if enabled) + mean(syn, if enabled)
          + w_rank * mean(rank). Each group's scale is d(total)/d(that
    group's summed per-sample gradients), so callers can scatter-add
    scale * bundle.grad per sample.
    """
    if not fer:
        raise InvalidInputError("objective requires at least one labeled term")
    parts = {
        "fer": _mean([b.value for b in fer]),
        "fr": _mean([b.value for b in fr]) if config.fr_focal else 0.0,
        "syn": _mean([b.value for b in syn]) if config.syn_focal else 0.0,
        "rank": _mean([b.value for b in rank]),
    }
    value = parts["fer"] + parts["fr"] + parts["syn"] + config.w_rank * parts["rank"]
    if not math.isfinite(value):
        raise NumericError(f"total loss is {value}")
    return TotalLoss(
        value=value,
        parts=parts,
        fer_scale=1.0 / len(fer),
        fr_scale=(1.0 / len(fr)) if fr and config.fr_focal else 0.0,
        syn_scale=(1.0 / len(syn)) if syn and config.syn_focal else 0.0,
        rank_scale=(config.w_rank / len(rank)) if rank else 0.0)
