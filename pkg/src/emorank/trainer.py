"""Training orchestration.

Each epoch: recompute class thresholds from the model's own confidence on
the labeled split, then per mini-batch pseudo-label a same-sized unlabeled
batch, pair labeled samples with accepted pseudo-labeled ones of a different
class, blend the pairs into synthetic samples, and descend the combined
focal + ranking objective with Adam. Everything is driven by one seeded RNG
stream, so (seed, config, data) fully determine the final model bytes.
"""

from __future__ import annotations

import csv
import enum
import math
import os
from array import array
from dataclasses import dataclass, field, fields as dc_fields
from typing import Sequence

from emorank import calibration, model as mdl
from emorank.augment import blend_horizontal, horizontal_flip, random_crop_pad
from emorank.dataio import (DatasetManifest, ImageTensor, LabeledSample,
                            PredictionRow, load_dataset, samples_for_split,
                            save_model)
from emorank.errors import DataFormatError, InvalidInputError
from emorank.losses import (FocalConfig, LossBundle, ObjectiveConfig,
                            RankingBundle, RankingInputs, RankMode, focal_loss,
                            ranking_loss, total_loss)
from emorank.numcore import AdamState, Matrix, ProbVector, Rng, adam_step
from emorank.pseudolabel import (PseudoLabelConfig, ThresholdState,
                                 compute_class_thresholds, pseudo_label_batch)

# RNG stream ids; dataset generation uses streams 0 and 4 (see dataio).
STREAM_TRAIN = 1
STREAM_INIT = 2

CROP_PAD = 2
FLIP_P = 0.5


class PairingPolicy(enum.Enum):
    """Which parent pools feed the blender."""

    FERXFR = "ferxfr"
    FERXFER = "ferxfer"
    BOTH = "both"

    @classmethod
    def parse(cls, text: str) -> "PairingPolicy":
        for policy in cls:
            if policy.value == text:
                return policy
        raise InvalidInputError(
            f"unknown pairing {text!r}, expected one of "
            f"{[p.value for p in cls]}")


@dataclass
class TrainConfig:
    """Run parameters; field names double as config-file keys."""

    lr: float = 5e-4
    batch: int = 64
    epochs: int = 60
    delta: float = 0.2
    w_rank: float = 1.0
    gamma: float = 2.0
    alpha: float = 0.25
    beta: float = 0.97
    tau0: float = 0.95
    lambda_c: float = 0.5
    pairing: str = "ferxfr"
    seed: int = 0
    bins: int = 15
    hidden_dim: int = 64
    rank_mode: str = "label_indexed"
    syn_focal: bool = True
    fr_focal: bool = True
    fer_aug: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidInputError(f"lr must be positive, got {self.lr}")
        if self.batch < 1:
            raise InvalidInputError(f"batch must be >= 1, got {self.batch}")
        if self.epochs < 0:
            raise InvalidInputError(f"epochs must be >= 0, got {self.epochs}")
        if self.bins < 1:
            raise InvalidInputError(f"bins must be >= 1, got {self.bins}")
        if self.hidden_dim < 1:
            raise InvalidInputError(
                f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.delta < 0:
            raise InvalidInputError(f"delta must be >= 0, got {self.delta}")
        # delegate range checks to the owning configs
        self.focal_config()
        self.pseudo_config()
        self.objective_config()
        self.pairing_policy()
        self.rank_mode_enum()

    def focal_config(self) -> FocalConfig:
        return FocalConfig(gamma=self.gamma, alpha=self.alpha)

    def pseudo_config(self) -> PseudoLabelConfig:
        return PseudoLabelConfig(lambda_c=self.lambda_c, beta=self.beta,
                                 tau0=self.tau0)

    def objective_config(self) -> ObjectiveConfig:
        return ObjectiveConfig(w_rank=self.w_rank, syn_focal=self.syn_focal,
                               fr_focal=self.fr_focal)

    def pairing_policy(self) -> PairingPolicy:
        return PairingPolicy.parse(self.pairing)

    def rank_mode_enum(self) -> RankMode:
        return RankMode.parse(self.rank_mode)


_BOOL_WORDS = {"true": True, "false": False}


def config_from_pairs(pairs: dict[str, str]) -> TrainConfig:
    """Build a TrainConfig from string key/value pairs, rejecting unknown
    keys and uncoercible values."""
    spec = {f.name: f.type for f in dc_fields(TrainConfig)}
    defaults = TrainConfig()
    kwargs = {}
    for key, raw in pairs.items():
        if key not in spec:
            raise InvalidInputError(f"unknown config key {key!r}")
        current = getattr(defaults, key)
        try:
            if isinstance(current, bool):
                if raw.lower() not in _BOOL_WORDS:
                    raise ValueError(raw)
                kwargs[key] = _BOOL_WORDS[raw.lower()]
            elif isinstance(current, int):
                kwargs[key] = int(raw)
            elif isinstance(current, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        except ValueError:
            raise InvalidInputError(
                f"bad value {raw!r} for config key {key!r}") from None
    return TrainConfig(**kwargs)


def read_config_pairs(path: str) -> dict[str, str]:
    """Read `key = value` lines; blank lines and #-comments are allowed.
    Keys are returned uncoerced so callers can layer overrides on top."""
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.readlines()
    except FileNotFoundError:
        raise DataFormatError("config file not found", path=path) from None
    pairs: dict[str, str] = {}
    for line_no, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise InvalidInputError(
                f"{path}:{line_no}: expected `key = value`, got {text!r}")
        key, _, value = text.partition("=")
        key = key.strip()
        if key in pairs:
            raise InvalidInputError(f"{path}:{line_no}: duplicate key {key!r}")
        pairs[key] = value.strip()
    return pairs


def parse_config_file(path: str) -> TrainConfig:
    return config_from_pairs(read_config_pairs(path))


@dataclass
class EpochStats:
    epoch: int
    focal_fer: float
    focal_fr: float
    focal_syn: float
    rank: float
    accept_rate: float
    eval_acc: float
    eval_ece: float


@dataclass
class TrainState:
    epoch: int
    adam: AdamState
    thresholds: ThresholdState
    log: list[EpochStats] = field(default_factory=list)
    threshold_history: list[ThresholdState] = field(default_factory=list)


@dataclass
class _Group:
    """Per-batch loss accounting for one sample group."""

    rows: list[int] = field(default_factory=list)
    bundles: list[LossBundle] = field(default_factory=list)


def _predict_fn(model: mdl.MlpModel):
    def run(images: Sequence[ImageTensor]) -> list[ProbVector]:
        return mdl.predict_probs(model, images)
    return run


def _pair_round_robin(labels_a: Sequence[int], pool_labels: Sequence[int],
                      forbid_self: bool) -> list[int | None]:
    """For each left-side label pick the next pool index with a different
    label, advancing a shared cursor; None when the pool has no candidate.

    With forbid_self the pool is the left side itself and an item never
    pairs with its own position.
    """
    n_pool = len(pool_labels)
    out: list[int | None] = []
    cursor = 0
    for i, label in enumerate(labels_a):
        chosen = None
        for step in range(n_pool):
            j = (cursor + step) % n_pool
            if pool_labels[j] != label and not (forbid_self and j == i):
                chosen = j
                cursor = (j + 1) % n_pool
                break
        out.append(chosen)
    return out


def train_epoch(
    state: TrainState,
    model: mdl.MlpModel,
    fer: Sequence[LabeledSample],
    fr: Sequence[LabeledSample],
    config: TrainConfig,
    rng: Rng,
    eval_data: Sequence[LabeledSample] = (),
) -> EpochStats:
    """Run one epoch in place and append its log entry.

    RNG draw order: one shuffle of the labeled indices, one shuffle of the
    unlabeled indices (when present); then per batch, per labeled sample
    crop+flip draws (when fer_aug), then the unlabeled batch's two weak
    views (see pseudo_label_batch). Thresholds are computed on raw labeled
    images with the pre-update model before any batch runs.
    """
    if not fer:
        raise InvalidInputError("training requires labeled samples")
    c = model.class_count
    focal_cfg = config.focal_config()
    obj_cfg = config.objective_config()
    plabel_cfg = config.pseudo_config()
    policy = config.pairing_policy()
    mode = config.rank_mode_enum()

    # an all-zero-weight objective runs no blending; the unlabeled pipeline
    # runs only when something consumes it (its focal term or fr-side blends)
    blending = config.w_rank > 0 or config.syn_focal
    fr_used = bool(fr) and (config.fr_focal or (
        blending and policy in (PairingPolicy.FERXFR, PairingPolicy.BOTH)))

    fer_probs = mdl.predict_probs(model, [s.image for s in fer])
    thresholds = compute_class_thresholds(
        fer_probs, [s.label for s in fer], state.epoch, plabel_cfg)
    state.thresholds = thresholds
    state.threshold_history.append(thresholds)

    order = list(range(len(fer)))
    rng.shuffle(order)
    fr_order = list(range(len(fr))) if fr_used else []
    if fr_order:
        rng.shuffle(fr_order)
    fr_pos = 0

    sums = {"fer": 0.0, "fr": 0.0, "syn": 0.0, "rank": 0.0}
    counts = {"fer": 0, "fr": 0, "syn": 0, "rank": 0}
    n_fr_seen = 0
    n_fr_accepted = 0

    for start in range(0, len(order), config.batch):
        batch_idx = order[start:start + config.batch]
        fer_batch = [fer[i] for i in batch_idx]
        if config.fer_aug:
            fer_views = [
                horizontal_flip(random_crop_pad(s.image, CROP_PAD, rng),
                                rng, FLIP_P)
                for s in fer_batch]
        else:
            fer_views = [s.image for s in fer_batch]
        fer_labels = [s.label for s in fer_batch]

        accepted: list[LabeledSample] = []
        if fr_used:
            take = []
            for _ in range(len(fer_batch)):
                take.append(fr[fr_order[fr_pos]])
                fr_pos = (fr_pos + 1) % len(fr)
            labeled = pseudo_label_batch(take, _predict_fn(model),
                                         state.thresholds, rng, plabel_cfg,
                                         pad=CROP_PAD, flip_p=FLIP_P)
            n_fr_seen += len(labeled)
            for sample, pred in labeled:
                if pred.accepted:
                    accepted.append(
                        LabeledSample(sample.id, sample.image, pred.label))
            n_fr_accepted += len(accepted)

        # pairing: (fer index in batch, partner pool, pool index)
        triples: list[tuple[int, str, int]] = []
        if blending:
            if policy in (PairingPolicy.FERXFR, PairingPolicy.BOTH) and accepted:
                match = _pair_round_robin(
                    fer_labels, [a.label for a in accepted], forbid_self=False)
                for i, j in enumerate(match):
                    if j is not None:
                        triples.append((i, "fr", j))
            if policy in (PairingPolicy.FERXFER, PairingPolicy.BOTH):
                match = _pair_round_robin(fer_labels, fer_labels,
                                          forbid_self=True)
                for i, j in enumerate(match):
                    if j is not None:
                        triples.append((i, "fer", j))

        blends = []
        for i, group, j in triples:
            a = LabeledSample(fer_batch[i].id, fer_views[i], fer_labels[i])
            b = accepted[j] if group == "fr" else LabeledSample(
                fer_batch[j].id, fer_views[j], fer_labels[j])
            blends.append((i, group, j, blend_horizontal(a, b, c)))

        # one forward pass over all groups: labeled views, accepted raw, blends
        images = list(fer_views) + [a.image for a in accepted] \
            + [rec.image for _, _, _, rec in blends]
        n1, n2 = len(fer_views), len(accepted)
        cache = mdl.forward(model, mdl.pack_batch(images, model.input_dim))
        logits = cache.logits

        fer_bundles = [focal_loss(logits.row(i), fer_labels[i], focal_cfg)
                       for i in range(n1)]
        fr_bundles = [focal_loss(logits.row(n1 + j), accepted[j].label,
                                 focal_cfg) for j in range(n2)]
        syn_bundles = []
        rank_bundles: list[RankingBundle] = []
        rank_rows: list[tuple[int, int, int]] = []
        for k, (i, group, j, rec) in enumerate(blends):
            syn_row = n1 + n2 + k
            ref_row = n1 + j if group == "fr" else j
            syn_bundles.append(
                focal_loss(logits.row(syn_row), list(rec.soft_label), focal_cfg))
            rank_bundles.append(ranking_loss(RankingInputs(
                logits.row(syn_row), logits.row(i), logits.row(ref_row),
                rec.c1, rec.c2, config.delta, mode)))
            rank_rows.append((syn_row, i, ref_row))

        total = total_loss(fer_bundles, fr_bundles, syn_bundles, rank_bundles,
                           obj_cfg)

        dlogits = Matrix(len(images), c)
        def add_row(row: int, grad: Sequence[float], scale: float) -> None:
            base = row * c
            for jj in range(c):
                dlogits.data[base + jj] += scale * grad[jj]
        for i, bundle in enumerate(fer_bundles):
            add_row(i, bundle.grad, total.fer_scale)
        for j, bundle in enumerate(fr_bundles):
            add_row(n1 + j, bundle.grad, total.fr_scale)
        for k, bundle in enumerate(syn_bundles):
            add_row(n1 + n2 + k, bundle.grad, total.syn_scale)
        for (syn_row, fer_row, ref_row), bundle in zip(rank_rows, rank_bundles):
            add_row(syn_row, bundle.grad_syn, total.rank_scale)
            add_row(fer_row, bundle.grad_fer, total.rank_scale)
            add_row(ref_row, bundle.grad_fr, total.rank_scale)

        grads = mdl.backward(model, cache, dlogits)
        adam_step(model.params(), grads.buffers(), state.adam)

        for name, bundles in (("fer", fer_bundles), ("fr", fr_bundles),
                              ("syn", syn_bundles), ("rank", rank_bundles)):
            sums[name] += sum(b.value for b in bundles)
            counts[name] += len(bundles)

    if eval_data:
        eval_probs = mdl.predict_probs(model, [s.image for s in eval_data])
        eval_labels = [s.label for s in eval_data]
        eval_acc = calibration.accuracy(eval_probs, eval_labels)
        confs, correct = calibration.confidence_correctness(eval_probs,
                                                            eval_labels)
        bins = calibration.bin_equal_width(confs, correct, config.bins)
        eval_ece = calibration.ece(bins, len(eval_data))
    else:
        eval_acc = math.nan
        eval_ece = math.nan

    stats = EpochStats(
        epoch=state.epoch,
        focal_fer=sums["fer"] / counts["fer"] if counts["fer"] else 0.0,
        focal_fr=sums["fr"] / counts["fr"] if counts["fr"] else 0.0,
        focal_syn=sums["syn"] / counts["syn"] if counts["syn"] else 0.0,
        rank=sums["rank"] / counts["rank"] if counts["rank"] else 0.0,
        accept_rate=n_fr_accepted / n_fr_seen if n_fr_seen else 0.0,
        eval_acc=eval_acc,
        eval_ece=eval_ece)
    state.log.append(stats)
    state.epoch += 1
    return stats


@dataclass
class TrainResult:
    model: mdl.MlpModel
    state: TrainState
    manifest: DatasetManifest


def train(config: TrainConfig, data_dir: str,
          out_dir: str | None = None) -> TrainResult:
    """Train on a dataset directory; optionally write model.bin, metrics.csv,
    and thresholds.csv into out_dir."""
    manifest, images = load_dataset(data_dir)
    fer = samples_for_split(manifest, images, "fer-train")
    fr = samples_for_split(manifest, images, "fr")
    eval_data = samples_for_split(manifest, images, "fer-eval")
    if not fer:
        raise InvalidInputError("dataset has no fer-train samples")
    first = fer[0].image
    input_dim = first.height * first.width

    model = mdl.init_model(input_dim, config.hidden_dim,
                           manifest.class_count, Rng(config.seed, STREAM_INIT))
    state = TrainState(
        epoch=0,
        adam=AdamState.for_params(model.params(), lr=config.lr),
        thresholds=ThresholdState.initial(manifest.class_count,
                                          config.pseudo_config()))
    rng = Rng(config.seed, STREAM_TRAIN)
    for _ in range(config.epochs):
        train_epoch(state, model, fer, fr, config, rng, eval_data)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_model(os.path.join(out_dir, "model.bin"), mdl.to_model_file(model))
        write_metrics(os.path.join(out_dir, "metrics.csv"), state.log)
        write_thresholds(os.path.join(out_dir, "thresholds.csv"),
                         state.threshold_history)
    return TrainResult(model=model, state=state, manifest=manifest)


def predict_batch(model: mdl.MlpModel,
                  samples: Sequence[LabeledSample]) -> list[PredictionRow]:
    """Score samples in order with no augmentation."""
    probs = mdl.predict_probs(model, [s.image for s in samples])
    return [PredictionRow(s.id, s.label, p.values)
            for s, p in zip(samples, probs)]


METRICS_HEADER = ["epoch", "focal_fer", "focal_fr", "focal_syn", "rank",
                  "accept_rate", "eval_acc", "eval_ece"]


def write_metrics(path: str, log: Sequence[EpochStats]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRICS_HEADER)
        for s in log:
            w.writerow([s.epoch] + [f"{v:.9f}" for v in (
                s.focal_fer, s.focal_fr, s.focal_syn, s.rank,
                s.accept_rate, s.eval_acc, s.eval_ece)])


def write_thresholds(path: str, history: Sequence[ThresholdState]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "class", "threshold"])
        for st in history:
            for c, t in enumerate(st.thresholds):
                w.writerow([st.epoch, c, f"{t:.9f}"])
