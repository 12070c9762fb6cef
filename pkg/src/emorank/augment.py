"""Weak augmentations and synthetic sample blending.

Weak views (reflect-pad random crop, horizontal flip) feed pseudo-labeling;
the blenders build soft-labeled synthetic samples: a general box blend with
a random combination ratio, and the fixed half-image blend that stacks the
upper half of one class on the lower half of another.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass

from emorank import kernels
from emorank.dataio import ImageTensor, LabeledSample
from emorank.errors import InvalidInputError
from emorank.numcore import Rng

# Index maps are pure functions of geometry; cache them so the per-sample
# work is a single gather.
_crop_maps: dict[tuple[int, int, int], list[array]] = {}
_flip_maps: dict[tuple[int, int], array] = {}


@dataclass(frozen=True)
class BlendSpec:
    """A blend region: pixels inside the box come from the SECOND image.

    Coordinates are clipped to the image, so 0 <= x, x+w <= W and
    0 <= y, y+h <= H always hold. lam is the label weight of the FIRST
    (outside-box) image.
    """

    x: int
    y: int
    w: int
    h: int
    lam: float


@dataclass
class BlendRecord:
    """A synthetic sample plus its provenance.

    soft_label = lam * onehot(c1) + (1 - lam) * onehot(c2), where c1/c2 are
    the parent classes of the outside/inside regions respectively.
    """

    image: ImageTensor
    soft_label: tuple[float, ...]
    parent_a: str
    parent_b: str
    c1: int
    c2: int
    lam: float


def mixed_label(c1: int, c2: int, lam: float, n_classes: int) -> tuple[float, ...]:
    """lam * onehot(c1) + (1 - lam) * onehot(c2)."""
    if not (0 <= c1 < n_classes and 0 <= c2 < n_classes):
        raise InvalidInputError(f"labels ({c1},{c2}) out of range for {n_classes}")
    if not 0.0 <= lam <= 1.0:
        raise InvalidInputError(f"lambda {lam} outside [0, 1]")
    y = [0.0] * n_classes
    y[c1] += lam
    y[c2] += 1.0 - lam
    return tuple(y)


def _reflect(i: int, n: int) -> int:
    """Map an out-of-range index into [0, n) by edge reflection (no repeat)."""
    if n == 1:
        return 0
    period = 2 * n - 2
    i %= period
    return i if i < n else period - i


def _crop_map(height: int, width: int, pad: int, dy: int, dx: int) -> array:
    key = (height, width, pad)
    maps = _crop_maps.get(key)
    if maps is None:
        maps = [array("q")] * (2 * pad + 1) ** 2
        _crop_maps[key] = maps
    slot = dy * (2 * pad + 1) + dx
    if not maps[slot]:
        rows = [_reflect(r + dy - pad, height) for r in range(height)]
        cols = [_reflect(c + dx - pad, width) for c in range(width)]
        maps[slot] = array("q", [rr * width + cc for rr in rows for cc in cols])
    return maps[slot]


def _flip_map(height: int, width: int) -> array:
    key = (height, width)
    m = _flip_maps.get(key)
    if m is None:
        m = array("q", [r * width + (width - 1 - c)
                        for r in range(height) for c in range(width)])
        _flip_maps[key] = m
    return m


def random_crop_pad(img: ImageTensor, pad: int, rng: Rng) -> ImageTensor:
    """Reflect-pad by `pad` on all sides, then crop a random window of the
    original size.

    Always consumes exactly two draws (row offset, then column offset), so
    callers' draw order is independent of pad; pad=0 reproduces the input.
    """
    if pad < 0:
        raise InvalidInputError(f"pad must be >= 0, got {pad}")
    side = 2 * pad + 1
    dy = rng.randrange(side)
    dx = rng.randrange(side)
    idx = _crop_map(img.height, img.width, pad, dy, dx)
    out = array("d", bytes(8 * len(idx)))
    kernels.gather(img.pixels, idx, out, len(idx))
    return ImageTensor(img.height, img.width, out, validate=False)


def horizontal_flip(img: ImageTensor, rng: Rng, p: float = 0.5) -> ImageTensor:
    """Mirror columns with probability p; always consumes one draw."""
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError(f"flip probability {p} outside [0, 1]")
    u = rng.random()
    if u >= p:
        return img.copy()
    idx = _flip_map(img.height, img.width)
    out = array("d", bytes(8 * len(idx)))
    kernels.gather(img.pixels, idx, out, len(idx))
    return ImageTensor(img.height, img.width, out, validate=False)


def clipped_box(lam: float, cy: int, cx: int, height: int, width: int) -> BlendSpec:
    """Box of relative area 1-lam centered at (cy, cx), clipped to the image.

    Side lengths are floor(dim * sqrt(1-lam)); the box spans center +/- half
    the side, so unclipped boxes have even side lengths.
    """
    cut = math.sqrt(1.0 - lam)
    bw = int(width * cut)
    bh = int(height * cut)
    x1 = min(max(cx - bw // 2, 0), width)
    x2 = min(max(cx + bw // 2, 0), width)
    y1 = min(max(cy - bh // 2, 0), height)
    y2 = min(max(cy + bh // 2, 0), height)
    area = (x2 - x1) * (y2 - y1)
    lam_eff = 1.0 - area / (width * height)
    return BlendSpec(x=x1, y=y1, w=x2 - x1, h=y2 - y1, lam=lam_eff)


def cutmix_general(a: LabeledSample, b: LabeledSample, n_classes: int,
                   rng: Rng) -> BlendRecord:
    """Paste a random box from b onto a.

    Draw order: combination ratio (uniform in [0,1)), box center row, box
    center column. The label weight is the EFFECTIVE ratio after clipping,
    so the weight on a's class always equals the fraction of pixels kept
    from a.
    """
    _check_pair_shapes(a, b)
    if a.label is None or b.label is None:
        raise InvalidInputError("both samples must be labeled for blending")
    h, w = a.image.height, a.image.width
    lam = rng.random()
    cy = rng.randrange(h)
    cx = rng.randrange(w)
    spec = clipped_box(lam, cy, cx, h, w)
    px = array("d", a.image.pixels)
    for r in range(spec.y, spec.y + spec.h):
        base = r * w
        px[base + spec.x:base + spec.x + spec.w] = \
            b.image.pixels[base + spec.x:base + spec.x + spec.w]
    return BlendRecord(
        image=ImageTensor(h, w, px, validate=False),
        soft_label=mixed_label(a.label, b.label, spec.lam, n_classes),
        parent_a=a.id, parent_b=b.id, c1=a.label, c2=b.label, lam=spec.lam)


def blend_horizontal(a: LabeledSample, b: LabeledSample,
                     n_classes: int) -> BlendRecord:
    """Stack a's upper half on b's lower half with a fixed 0.5/0.5 label.

    The split row is floor(H/2); parents must carry different labels, since
    an equal-label blend would collapse to a single-class sample.
    """
    _check_pair_shapes(a, b)
    if a.label is None or b.label is None:
        raise InvalidInputError("both samples must be labeled for blending")
    if a.label == b.label:
        raise InvalidInputError(
            f"half-image blend requires distinct labels, both are {a.label}")
    h, w = a.image.height, a.image.width
    half = h // 2
    px = a.image.pixels[: half * w] + b.image.pixels[half * w:]
    return BlendRecord(
        image=ImageTensor(h, w, px, validate=False),
        soft_label=mixed_label(a.label, b.label, 0.5, n_classes),
        parent_a=a.id, parent_b=b.id, c1=a.label, c2=b.label, lam=0.5)


def _check_pair_shapes(a: LabeledSample, b: LabeledSample) -> None:
    if (a.image.height, a.image.width) != (b.image.height, b.image.width):
        raise InvalidInputError(
            f"shape mismatch: {a.image.height}x{a.image.width} vs "
            f"{b.image.height}x{b.image.width}")
