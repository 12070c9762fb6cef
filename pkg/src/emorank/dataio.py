"""Dataset synthesis and artifact persistence.

Generates the toy expression dataset (striped half-image class signatures
plus clamped Gaussian noise), synthesizes compound samples whose upper and
lower halves come from two different classes, and reads/writes every on-disk
artifact: binary PGM images, dataset manifests, prediction CSVs, and the
packed model file.
"""

from __future__ import annotations

import csv
import os
import struct
from array import array
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from emorank.errors import DataFormatError, InvalidInputError, ModelVersionError
from emorank.numcore import Rng

DEFAULT_CLASS_NAMES = (
    "neutral", "happiness", "surprise", "sadness", "anger", "disgust", "fear",
)

# Class pairs used for compound samples: each blends the upper half of the
# first class with the lower half of the second.
DEFAULT_COMPOUND_PAIRS = (
    (1, 2), (1, 5), (3, 6), (3, 4), (3, 2), (3, 5),
    (6, 4), (6, 2), (4, 2), (4, 5), (5, 2),
)

SPLIT_TAGS = ("fer-train", "fer-eval", "fr", "compound")

MODEL_MAGIC = b"ROTM1"


class ImageTensor:
    """Grayscale image: height x width float64 pixels in [0, 1], row-major."""

    __slots__ = ("height", "width", "pixels")

    def __init__(self, height: int, width: int, pixels: array,
                 validate: bool = True):
        if validate:
            if height < 2:
                raise InvalidInputError(
                    f"image height must be >= 2 (splittable), got {height}")
            if width < 1:
                raise InvalidInputError(f"image width must be >= 1, got {width}")
            if len(pixels) != height * width:
                raise InvalidInputError(
                    f"pixel buffer length {len(pixels)} != {height}x{width}")
            for v in pixels:
                if not 0.0 <= v <= 1.0:
                    raise InvalidInputError(f"pixel value {v} outside [0, 1]")
        self.height = height
        self.width = width
        self.pixels = pixels

    def at(self, r: int, c: int) -> float:
        return self.pixels[r * self.width + c]

    def copy(self) -> "ImageTensor":
        return ImageTensor(self.height, self.width, array("d", self.pixels),
                           validate=False)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ImageTensor)
            and self.height == other.height
            and self.width == other.width
            and self.pixels == other.pixels
        )

    def __repr__(self) -> str:
        return f"ImageTensor({self.height}x{self.width})"


@dataclass
class LabeledSample:
    """An image with an optional class label (None for unlabeled samples)."""

    id: str
    image: ImageTensor
    label: int | None


@dataclass
class ManifestEntry:
    id: str
    path: str
    label: int | None
    split: str
    c1: int | None = None
    c2: int | None = None


@dataclass
class DatasetManifest:
    """Index of a dataset directory: class names plus one row per image."""

    class_names: tuple[str, ...]
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        c = len(self.class_names)
        if c < 2:
            raise InvalidInputError(f"need at least 2 classes, got {c}")
        seen: set[str] = set()
        for e in self.entries:
            if e.id in seen:
                raise InvalidInputError(f"duplicate sample id {e.id!r}")
            seen.add(e.id)
            if e.split not in SPLIT_TAGS:
                raise InvalidInputError(f"unknown split tag {e.split!r}")
            if e.label is not None and not 0 <= e.label < c:
                raise InvalidInputError(
                    f"label {e.label} out of range for {c} classes (id {e.id!r})")
            if e.split == "compound":
                if e.c1 is None or e.c2 is None or e.c1 == e.c2:
                    raise InvalidInputError(
                        f"compound entry {e.id!r} needs two distinct classes")
                if not (0 <= e.c1 < c and 0 <= e.c2 < c):
                    raise InvalidInputError(
                        f"compound classes ({e.c1},{e.c2}) out of range (id {e.id!r})")
                if e.label is not None:
                    raise InvalidInputError(
                        f"compound entry {e.id!r} must not carry a single label")
            else:
                if e.c1 is not None or e.c2 is not None:
                    raise InvalidInputError(
                        f"non-compound entry {e.id!r} must not carry a class pair")
                if e.split in ("fer-train", "fer-eval") and e.label is None:
                    raise InvalidInputError(f"entry {e.id!r} in {e.split} needs a label")
                if e.split == "fr" and e.label is not None:
                    raise InvalidInputError(f"fr entry {e.id!r} must be unlabeled")

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]


@dataclass
class ToyGenConfig:
    """Knobs for the synthetic dataset generator."""

    n_classes: int = 7
    height: int = 16
    width: int = 16
    n_train: int = 700
    n_eval: int = 300
    n_fr: int = 700
    noise_sigma: float = 0.05
    imbalance_rho: float = 1.0  # per-class count decay; 1.0 = balanced
    seed: int = 0
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES

    def __post_init__(self):
        if self.n_classes < 2:
            raise InvalidInputError(f"need >= 2 classes, got {self.n_classes}")
        if self.n_train < self.n_classes:
            raise InvalidInputError(
                f"n_train={self.n_train} < n_classes={self.n_classes}")
        if self.noise_sigma < 0:
            raise InvalidInputError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        if self.height < 2 or self.width < 1:
            raise InvalidInputError(
                f"image dims must be >= 2x1, got {self.height}x{self.width}")
        if not 0 < self.imbalance_rho <= 1.0:
            raise InvalidInputError(
                f"imbalance rho must be in (0, 1], got {self.imbalance_rho}")
        if len(self.class_names) != self.n_classes:
            if self.class_names == DEFAULT_CLASS_NAMES:
                self.class_names = tuple(f"class{k}" for k in range(self.n_classes))
            else:
                raise InvalidInputError(
                    f"{len(self.class_names)} names for {self.n_classes} classes")


def class_prototype(k: int, height: int, width: int) -> ImageTensor:
    """Noise-free class-k image.

    The upper half carries vertical stripes of width k+1, the lower half
    horizontal stripes of height k+1, so either half alone identifies the
    class and any two classes differ in both halves.
    """
    if k < 0:
        raise InvalidInputError(f"class index must be >= 0, got {k}")
    half = height // 2
    px = array("d", bytes(8 * height * width))
    period = k + 1
    for r in range(height):
        for c in range(width):
            band = c // period if r < half else (r - half) // period
            if band % 2 == 0:
                px[r * width + c] = 1.0
    return ImageTensor(height, width, px, validate=False)


def compound_prototype(c1: int, c2: int, height: int, width: int) -> ImageTensor:
    """Noise-free compound image: upper half of class c1, lower half of c2."""
    if c1 == c2:
        raise InvalidInputError(f"compound classes must differ, got ({c1},{c2})")
    half = height // 2
    a = class_prototype(c1, height, width)
    b = class_prototype(c2, height, width)
    px = a.pixels[: half * width] + b.pixels[half * width:]
    return ImageTensor(height, width, px, validate=False)


def class_counts(n: int, c: int, rho: float) -> list[int]:
    """Split n samples over c classes with counts proportional to rho**k.

    Largest-remainder rounding; when n >= c every class keeps at least one
    sample (topped up from the largest classes).
    """
    if n < 0 or c < 1:
        raise InvalidInputError(f"invalid counts request n={n} c={c}")
    weights = [rho ** k for k in range(c)]
    total = sum(weights)
    exact = [n * w / total for w in weights]
    counts = [int(e) for e in exact]
    remainder = n - sum(counts)
    order = sorted(range(c), key=lambda k: (-(exact[k] - counts[k]), k))
    for k in order[:remainder]:
        counts[k] += 1
    if n >= c:
        for k in range(c):
            while counts[k] == 0:
                donor = max(range(c), key=lambda j: (counts[j], -j))
                counts[donor] -= 1
                counts[k] += 1
    return counts


def _noisy(proto: ImageTensor, sigma: float, rng: Rng) -> ImageTensor:
    if sigma == 0.0:
        return proto.copy()
    px = array("d", proto.pixels)
    for j in range(len(px)):
        v = px[j] + rng.normal(0.0, sigma)
        px[j] = 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)
    return ImageTensor(proto.height, proto.width, px, validate=False)


def generate_toy_dataset(
    config: ToyGenConfig,
) -> tuple[DatasetManifest, dict[str, ImageTensor]]:
    """Generate the labeled train/eval splits and the unlabeled fr split.

    Deterministic given the config. Draw order (one stream, in sequence):
    for each split in (fer-train, fer-eval, fr), first one shuffle of the
    class-sorted label list, then per sample H*W Gaussian draws in row-major
    pixel order (skipped entirely when sigma is 0).
    """
    rng = Rng(config.seed, stream=0)
    protos = [class_prototype(k, config.height, config.width)
              for k in range(config.n_classes)]
    entries: list[ManifestEntry] = []
    images: dict[str, ImageTensor] = {}
    plan = (("fer-train", config.n_train), ("fer-eval", config.n_eval),
            ("fr", config.n_fr))
    for split, n in plan:
        labels: list[int] = []
        for k, cnt in enumerate(class_counts(n, config.n_classes,
                                             config.imbalance_rho)):
            labels.extend([k] * cnt)
        rng.shuffle(labels)
        for i, k in enumerate(labels):
            sid = f"{split}-{i:05d}"
            images[sid] = _noisy(protos[k], config.noise_sigma, rng)
            entries.append(ManifestEntry(
                id=sid, path=f"images/{sid}.pgm",
                label=None if split == "fr" else k, split=split))
    return DatasetManifest(config.class_names, entries), images


def generate_compound_set(
    config: ToyGenConfig,
    pairs: Sequence[tuple[int, int]] = DEFAULT_COMPOUND_PAIRS,
    n_per_pair: int = 20,
) -> tuple[DatasetManifest, dict[str, ImageTensor]]:
    """Generate compound samples for each (c1, c2) pair.

    Uses its own RNG stream so the output is independent of the basic-split
    sizes. Draw order: pairs in the given order, n_per_pair samples each,
    H*W Gaussian draws per sample.
    """
    for c1, c2 in pairs:
        if c1 == c2:
            raise InvalidInputError(f"compound pair ({c1},{c2}) must differ")
        if not (0 <= c1 < config.n_classes and 0 <= c2 < config.n_classes):
            raise InvalidInputError(f"compound pair ({c1},{c2}) out of range")
    if n_per_pair < 0:
        raise InvalidInputError(f"n_per_pair must be >= 0, got {n_per_pair}")
    rng = Rng(config.seed, stream=4)
    entries: list[ManifestEntry] = []
    images: dict[str, ImageTensor] = {}
    i = 0
    for c1, c2 in pairs:
        proto = compound_prototype(c1, c2, config.height, config.width)
        for _ in range(n_per_pair):
            sid = f"compound-{i:05d}"
            images[sid] = _noisy(proto, config.noise_sigma, rng)
            entries.append(ManifestEntry(
                id=sid, path=f"images/{sid}.pgm", label=None,
                split="compound", c1=c1, c2=c2))
            i += 1
    return DatasetManifest(config.class_names, entries), images


# ---------------------------------------------------------------------------
# PGM images

def save_image(path: str, image: ImageTensor) -> None:
    """Write a binary PGM (P5, maxval 255); pixel byte = round(value*255)."""
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    payload = bytes(int(v * 255.0 + 0.5) for v in image.pixels)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def load_image(path: str) -> ImageTensor:
    """Read a binary PGM written by save_image; values map back by /255.

    Malformed input raises a format error carrying the byte offset.
    """
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError:
        raise DataFormatError("image file not found", path=path) from None

    if blob[:2] != b"P5":
        raise DataFormatError("bad magic, expected P5", path=path, offset=0)
    pos = 2

    def skip_ws() -> None:
        nonlocal pos
        start = pos
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos == start:
            raise DataFormatError("expected whitespace", path=path, offset=pos)

    def take_int(what: str) -> int:
        nonlocal pos
        skip_ws()
        start = pos
        while pos < len(blob) and blob[pos:pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise DataFormatError(f"malformed {what}", path=path, offset=pos)
        return int(blob[start:pos])

    width = take_int("width")
    height = take_int("height")
    maxval_at = pos
    maxval = take_int("maxval")
    if maxval != 255:
        raise DataFormatError(f"unsupported maxval {maxval}, expected 255",
                              path=path, offset=maxval_at + 1)
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise DataFormatError("expected single whitespace before pixel payload",
                              path=path, offset=pos)
    pos += 1
    if height < 2 or width < 1:
        raise DataFormatError(f"unsupported dimensions {width}x{height}",
                              path=path, offset=2)
    n = width * height
    payload = blob[pos:]
    if len(payload) < n:
        raise DataFormatError(
            f"truncated pixel payload: expected {n} bytes, found {len(payload)}",
            path=path, offset=pos)
    if len(payload) > n:
        raise DataFormatError("trailing data after pixel payload",
                              path=path, offset=pos + n)
    px = array("d", [b / 255.0 for b in payload])
    return ImageTensor(height, width, px, validate=False)


# ---------------------------------------------------------------------------
# Manifest CSV (+ sibling classes.csv)

def write_manifest(path: str, manifest: DatasetManifest) -> None:
    """Write manifest.csv plus a classes.csv next to it."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "path", "label", "split", "c1", "c2"])
        for e in manifest.entries:
            w.writerow([
                e.id, e.path,
                "" if e.label is None else e.label,
                e.split,
                "" if e.c1 is None else e.c1,
                "" if e.c2 is None else e.c2,
            ])
    classes_path = os.path.join(os.path.dirname(path) or ".", "classes.csv")
    with open(classes_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "name"])
        for k, name in enumerate(manifest.class_names):
            w.writerow([k, name])


def _read_class_names(classes_path: str) -> tuple[str, ...]:
    try:
        with open(classes_path, newline="") as f:
            rows = list(csv.reader(f))
    except FileNotFoundError:
        raise DataFormatError("classes file not found", path=classes_path) from None
    if not rows or rows[0] != ["index", "name"]:
        raise DataFormatError("bad header, expected index,name",
                              path=classes_path, row=1)
    names: list[str] = []
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != 2 or row[0] != str(len(names)):
            raise DataFormatError("malformed class row", path=classes_path,
                                  row=line_no)
        names.append(row[1])
    return tuple(names)


def _opt_int(text: str, what: str, path: str, line_no: int) -> int | None:
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        raise DataFormatError(f"non-integer {what} {text!r}", path=path,
                              row=line_no) from None


def read_manifest(path: str) -> DatasetManifest:
    """Read manifest.csv; class names come from the sibling classes.csv."""
    try:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
    except FileNotFoundError:
        raise DataFormatError("manifest file not found", path=path) from None
    if not rows or rows[0] != ["id", "path", "label", "split", "c1", "c2"]:
        raise DataFormatError("bad header, expected id,path,label,split,c1,c2",
                              path=path, row=1)
    names = _read_class_names(
        os.path.join(os.path.dirname(path) or ".", "classes.csv"))
    entries: list[ManifestEntry] = []
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != 6:
            raise DataFormatError(f"expected 6 fields, got {len(row)}",
                                  path=path, row=line_no)
        sid, img_path, label_s, split, c1_s, c2_s = row
        entries.append(ManifestEntry(
            id=sid, path=img_path,
            label=_opt_int(label_s, "label", path, line_no),
            split=split,
            c1=_opt_int(c1_s, "c1", path, line_no),
            c2=_opt_int(c2_s, "c2", path, line_no)))
    try:
        return DatasetManifest(names, entries)
    except InvalidInputError as exc:
        raise DataFormatError(f"inconsistent manifest: {exc}", path=path) from None


def write_dataset(out_dir: str, manifest: DatasetManifest,
                  images: Mapping[str, ImageTensor]) -> None:
    """Materialize a dataset directory: images/, manifest.csv, classes.csv."""
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    for e in manifest.entries:
        save_image(os.path.join(out_dir, e.path), images[e.id])
    write_manifest(os.path.join(out_dir, "manifest.csv"), manifest)


def load_dataset(data_dir: str) -> tuple[DatasetManifest, dict[str, ImageTensor]]:
    """Read a dataset directory back into memory."""
    manifest = read_manifest(os.path.join(data_dir, "manifest.csv"))
    images = {e.id: load_image(os.path.join(data_dir, e.path))
              for e in manifest.entries}
    return manifest, images


def samples_for_split(manifest: DatasetManifest,
                      images: Mapping[str, ImageTensor],
                      split: str) -> list[LabeledSample]:
    return [LabeledSample(e.id, images[e.id], e.label)
            for e in manifest.split_entries(split)]


# ---------------------------------------------------------------------------
# Prediction CSV

@dataclass
class PredictionRow:
    """One scored sample: id, true label (None if unknown), class probabilities."""

    id: str
    label: int | None
    probs: tuple[float, ...]


def write_predictions(path: str, rows: Sequence[PredictionRow]) -> None:
    """Write `id,label,p0..p{C-1}`; probabilities with 9 decimal digits.

    Unknown labels serialize as -1. Rows must already be normalized.
    """
    if not rows:
        raise InvalidInputError("no prediction rows to write")
    c = len(rows[0].probs)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "label"] + [f"p{j}" for j in range(c)])
        for r in rows:
            if len(r.probs) != c:
                raise InvalidInputError(
                    f"row {r.id!r} has {len(r.probs)} probabilities, expected {c}")
            total = sum(r.probs)
            if abs(total - 1.0) > 1e-6:
                raise InvalidInputError(
                    f"row {r.id!r} probabilities sum to {total:.9f}, not 1")
            w.writerow([r.id, -1 if r.label is None else r.label]
                       + [f"{p:.9f}" for p in r.probs])


def read_predictions(path: str) -> list[PredictionRow]:
    """Read a prediction CSV, validating normalization per row."""
    try:
        with open(path, newline="") as f:
            raw = list(csv.reader(f))
    except FileNotFoundError:
        raise DataFormatError("predictions file not found", path=path) from None
    if not raw:
        raise DataFormatError("empty predictions file", path=path, row=1)
    header = raw[0]
    c = len(header) - 2
    if c < 2 or header != ["id", "label"] + [f"p{j}" for j in range(c)]:
        raise DataFormatError("bad header, expected id,label,p0,...",
                              path=path, row=1)
    rows: list[PredictionRow] = []
    for line_no, row in enumerate(raw[1:], start=2):
        if len(row) != c + 2:
            raise DataFormatError(f"expected {c + 2} fields, got {len(row)}",
                                  path=path, row=line_no)
        try:
            label = int(row[1])
            probs = tuple(float(x) for x in row[2:])
        except ValueError:
            raise DataFormatError("malformed numeric field", path=path,
                                  row=line_no) from None
        if label < -1 or label >= c:
            raise DataFormatError(f"label {label} out of range", path=path,
                                  row=line_no)
        for p in probs:
            if not 0.0 <= p <= 1.0:
                raise DataFormatError(f"probability {p} outside [0, 1]",
                                      path=path, row=line_no)
        total = sum(probs)
        if abs(total - 1.0) > 1e-6:
            raise DataFormatError(
                f"probabilities sum to {total:.9f}, not 1", path=path, row=line_no)
        rows.append(PredictionRow(row[0], None if label == -1 else label, probs))
    return rows


# ---------------------------------------------------------------------------
# Model file

@dataclass
class ModelFile:
    """Packed classifier weights.

    Layout: magic "ROTM1", three little-endian u32 dims (input, hidden,
    classes), then float32 little-endian values for w1 (input x hidden,
    row-major), b1, w2 (hidden x classes), b2. Values held here are the
    float64 readings of those float32s, so a load/save cycle is bit-exact.
    """

    input_dim: int
    hidden_dim: int
    class_count: int
    w1: array
    b1: array
    w2: array
    b2: array

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.class_count) < 1:
            raise InvalidInputError("model dimensions must be >= 1")
        expect = {
            "w1": self.input_dim * self.hidden_dim, "b1": self.hidden_dim,
            "w2": self.hidden_dim * self.class_count, "b2": self.class_count,
        }
        for name, n in expect.items():
            buf = getattr(self, name)
            if len(buf) != n:
                raise InvalidInputError(
                    f"{name} has {len(buf)} values, expected {n}")


def save_model(path: str, model: ModelFile) -> None:
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<3I", model.input_dim, model.hidden_dim,
                            model.class_count))
        for buf in (model.w1, model.b1, model.w2, model.b2):
            f.write(struct.pack(f"<{len(buf)}f", *buf))


def load_model(path: str) -> ModelFile:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError:
        raise DataFormatError("model file not found", path=path) from None
    if blob[:5] != MODEL_MAGIC:
        raise ModelVersionError(
            f"unrecognized model magic {blob[:5]!r}", path=path, offset=0)
    if len(blob) < 17:
        raise DataFormatError("model header truncated", path=path, offset=5)
    d, h, c = struct.unpack_from("<3I", blob, 5)
    if min(d, h, c) < 1:
        raise DataFormatError(f"zero model dimension in ({d},{h},{c})",
                              path=path, offset=5)
    n = d * h + h + h * c + c
    payload = blob[17:]
    if len(payload) != 4 * n:
        raise DataFormatError(
            f"payload is {len(payload)} bytes, dims ({d},{h},{c}) require {4 * n}",
            path=path, offset=17)
    vals = struct.unpack(f"<{n}f", payload)
    pos = 0
    bufs = []
    for size in (d * h, h, h * c, c):
        bufs.append(array("d", vals[pos:pos + size]))
        pos += size
    return ModelFile(d, h, c, *bufs)
