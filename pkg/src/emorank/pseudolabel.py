"""Dynamic class-wise confidence thresholds and pseudo-label assignment.

Each epoch, per-class thresholds are set from the model's own confidence on
correctly predicted labeled samples, scaled by a sigmoid warm-up schedule.
Unlabeled samples are then scored on two independently augmented weak views;
the aggregated prediction earns a pseudo-label only where it strictly beats
its class threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from emorank.augment import horizontal_flip, random_crop_pad
from emorank.dataio import ImageTensor, LabeledSample
from emorank.errors import InvalidInputError
from emorank.numcore import ProbVector, Rng, argmax_tiebreak

PredictFn = Callable[[Sequence[ImageTensor]], Sequence[ProbVector]]


@dataclass
class PseudoLabelConfig:
    """Aggregation weight(s), threshold scale, and the cold-start threshold."""

    lambda_c: float | tuple[float, ...] = 0.5
    beta: float = 0.97
    tau0: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise InvalidInputError(f"beta must be in (0, 1), got {self.beta}")
        if not 0.0 <= self.tau0 <= 1.0:
            raise InvalidInputError(f"tau0 must be in [0, 1], got {self.tau0}")
        lams = (self.lambda_c,) if isinstance(self.lambda_c, float) \
            else tuple(self.lambda_c)
        for lam in lams:
            if not 0.0 <= lam <= 1.0:
                raise InvalidInputError(f"lambda {lam} outside [0, 1]")

    def resolve_lambdas(self, n_classes: int) -> tuple[float, ...]:
        if isinstance(self.lambda_c, float):
            return (self.lambda_c,) * n_classes
        lams = tuple(self.lambda_c)
        if len(lams) != n_classes:
            raise InvalidInputError(
                f"{len(lams)} lambda values for {n_classes} classes")
        return lams


@dataclass
class ThresholdState:
    """Per-class acceptance thresholds for one epoch.

    mean_confidence[c] is the average top-1 confidence over samples the model
    got right for class c (None when there were none, in which case the
    threshold falls back to tau0).
    """

    epoch: int
    beta: float
    tau0: float
    thresholds: tuple[float, ...]
    mean_confidence: tuple[float | None, ...]
    support: tuple[int, ...]

    @classmethod
    def initial(cls, n_classes: int, config: PseudoLabelConfig) -> "ThresholdState":
        return cls(epoch=0, beta=config.beta, tau0=config.tau0,
                   thresholds=(config.tau0,) * n_classes,
                   mean_confidence=(None,) * n_classes,
                   support=(0,) * n_classes)


@dataclass
class AggregatedPrediction:
    """Aggregated two-view prediction plus the thresholding outcome."""

    probs: ProbVector
    label: int | None
    accepted: bool

    def __post_init__(self):
        if self.accepted != (self.label is not None):
            raise InvalidInputError("accepted flag must match label presence")


def threshold_schedule(epoch: int, beta: float) -> float:
    """Warm-up scale beta / (1 + e^-t): beta/2 at t=0, tending to beta."""
    if epoch < 0:
        raise InvalidInputError(f"epoch must be >= 0, got {epoch}")
    return beta / (1.0 + math.exp(-float(epoch)))


def compute_class_thresholds(
    predictions: Sequence[ProbVector],
    labels: Sequence[int],
    epoch: int,
    config: PseudoLabelConfig,
) -> ThresholdState:
    """Set T_c = schedule(epoch) * mean top-1 confidence over the samples
    whose prediction and label both equal c; classes with no such samples
    fall back to tau0.
    """
    if len(predictions) == 0:
        raise InvalidInputError("cannot compute thresholds on an empty dataset")
    if len(predictions) != len(labels):
        raise InvalidInputError(
            f"{len(predictions)} predictions vs {len(labels)} labels")
    n_classes = len(predictions[0])
    sums = [0.0] * n_classes
    counts = [0] * n_classes
    for probs, label in zip(predictions, labels):
        if len(probs) != n_classes:
            raise InvalidInputError("prediction length mismatch")
        if not 0 <= label < n_classes:
            raise InvalidInputError(f"label {label} out of range")
        top = probs.argmax()
        if top == label:
            sums[top] += probs[top]
            counts[top] += 1
    scale = threshold_schedule(epoch, config.beta)
    means: list[float | None] = []
    thresholds: list[float] = []
    for c in range(n_classes):
        if counts[c] == 0:
            means.append(None)
            thresholds.append(config.tau0)
        else:
            mean = sums[c] / counts[c]
            means.append(mean)
            thresholds.append(scale * mean)
    return ThresholdState(epoch=epoch, beta=config.beta, tau0=config.tau0,
                          thresholds=tuple(thresholds),
                          mean_confidence=tuple(means),
                          support=tuple(counts))


def aggregate_probs(p_a: ProbVector, p_b: ProbVector,
                    config: PseudoLabelConfig) -> ProbVector:
    """Class-wise interpolation lam_c * p_a + (1 - lam_c) * p_b.

    With a uniform lambda the result already sums to 1 and is returned as
    is; per-class lambdas break normalization, so the result is rescaled.
    """
    if len(p_a) != len(p_b):
        raise InvalidInputError(f"length mismatch {len(p_a)} vs {len(p_b)}")
    lams = config.resolve_lambdas(len(p_a))
    mixed = [lam * pa + (1.0 - lam) * pb
             for lam, pa, pb in zip(lams, p_a, p_b)]
    if any(lam != lams[0] for lam in lams):
        total = sum(mixed)
        if total <= 0.0:
            raise InvalidInputError("aggregated probabilities sum to 0")
        mixed = [v / total for v in mixed]
    return ProbVector(mixed, validate=False)


def assign_pseudo_label(probs: ProbVector,
                        state: ThresholdState) -> AggregatedPrediction:
    """Zero out classes at or below their threshold; argmax the survivors.

    No survivor means the sample is left unlabeled this epoch. Ties among
    survivors resolve to the lowest class index.
    """
    if len(probs) != len(state.thresholds):
        raise InvalidInputError(
            f"{len(probs)} probabilities vs {len(state.thresholds)} thresholds")
    masked = [p if p > t else 0.0 for p, t in zip(probs, state.thresholds)]
    if not any(v > 0.0 for v in masked):
        return AggregatedPrediction(probs=probs, label=None, accepted=False)
    return AggregatedPrediction(probs=probs, label=argmax_tiebreak(masked),
                                accepted=True)


def pseudo_label_batch(
    samples: Sequence[LabeledSample],
    predict_fn: PredictFn,
    state: ThresholdState,
    rng: Rng,
    config: PseudoLabelConfig,
    pad: int = 2,
    flip_p: float = 0.5,
) -> list[tuple[LabeledSample, AggregatedPrediction]]:
    """Label a batch of unlabeled samples from two weak views each.

    Draw order per sample (samples in given order): crop offsets and flip
    for view A, then the same three draws for view B. Both views go through
    predict_fn in one call each, then per-sample aggregation and assignment.
    Sample order is preserved in the output.
    """
    views_a: list[ImageTensor] = []
    views_b: list[ImageTensor] = []
    for s in samples:
        views_a.append(horizontal_flip(random_crop_pad(s.image, pad, rng),
                                       rng, flip_p))
        views_b.append(horizontal_flip(random_crop_pad(s.image, pad, rng),
                                       rng, flip_p))
    if not samples:
        return []
    preds_a = predict_fn(views_a)
    preds_b = predict_fn(views_b)
    out: list[tuple[LabeledSample, AggregatedPrediction]] = []
    for s, pa, pb in zip(samples, preds_a, preds_b):
        agg = aggregate_probs(pa, pb, config)
        out.append((s, assign_pseudo_label(agg, state)))
    return out
