"""Two-layer rectifier network over flattened images.

forward:  logits = relu(x @ W1 + b1) @ W2 + b2
backward: exact chain rule, with the rectifier subgradient fixed to 0 at 0.
All matrix work goes through the kernel backend; draw order during
initialization is W1 row-major, then W2 row-major.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass
from typing import Sequence

from emorank import kernels
from emorank.dataio import ImageTensor, ModelFile
from emorank.errors import InvalidInputError
from emorank.numcore import Matrix, ProbVector, Rng


@dataclass
class MlpModel:
    input_dim: int
    hidden_dim: int
    class_count: int
    w1: array  # input_dim x hidden_dim, row-major
    b1: array  # hidden_dim
    w2: array  # hidden_dim x class_count, row-major
    b2: array  # class_count

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.class_count) < 1:
            raise InvalidInputError("model dimensions must be >= 1")
        shapes = {
            "w1": self.input_dim * self.hidden_dim, "b1": self.hidden_dim,
            "w2": self.hidden_dim * self.class_count, "b2": self.class_count,
        }
        for name, n in shapes.items():
            if len(getattr(self, name)) != n:
                raise InvalidInputError(f"{name} must hold {n} values")

    def params(self) -> list[array]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class ForwardCache:
    """Activations kept for the backward pass."""

    x: Matrix        # n x input_dim
    hidden: Matrix   # n x hidden_dim, post-rectifier
    logits: Matrix   # n x class_count


@dataclass
class Grads:
    w1: array
    b1: array
    w2: array
    b2: array

    def buffers(self) -> list[array]:
        return [self.w1, self.b1, self.w2, self.b2]


def init_model(input_dim: int, hidden_dim: int, class_count: int,
               rng: Rng) -> MlpModel:
    """Uniform(-s, s) weights with s = sqrt(6 / (fan_in + fan_out)); zero
    biases."""
    if min(input_dim, hidden_dim, class_count) < 1:
        raise InvalidInputError(
            f"dimensions must be positive, got "
            f"({input_dim},{hidden_dim},{class_count})")
    s1 = math.sqrt(6.0 / (input_dim + hidden_dim))
    w1 = array("d", [rng.uniform(-s1, s1)
                     for _ in range(input_dim * hidden_dim)])
    s2 = math.sqrt(6.0 / (hidden_dim + class_count))
    w2 = array("d", [rng.uniform(-s2, s2)
                     for _ in range(hidden_dim * class_count)])
    return MlpModel(input_dim, hidden_dim, class_count, w1,
                    array("d", bytes(8 * hidden_dim)), w2,
                    array("d", bytes(8 * class_count)))


def pack_batch(images: Sequence[ImageTensor], input_dim: int) -> Matrix:
    """Flatten images into an n x input_dim matrix, preserving order."""
    flat = array("d")
    for img in images:
        if img.height * img.width != input_dim:
            raise InvalidInputError(
                f"image is {img.height}x{img.width}, model expects "
                f"{input_dim} inputs")
        flat.extend(img.pixels)
    return Matrix(len(images), input_dim, flat)


def forward(model: MlpModel, x: Matrix) -> ForwardCache:
    if x.cols != model.input_dim:
        raise InvalidInputError(
            f"batch has {x.cols} features, model expects {model.input_dim}")
    n = x.rows
    dh, c = model.hidden_dim, model.class_count
    hidden = Matrix(n, dh)
    kernels.matmul_nn(x.data, model.w1, hidden.data, n, model.input_dim, dh)
    kernels.add_row_vector(hidden.data, model.b1, n, dh)
    kernels.relu_inplace(hidden.data, n * dh)
    logits = Matrix(n, c)
    kernels.matmul_nn(hidden.data, model.w2, logits.data, n, dh, c)
    kernels.add_row_vector(logits.data, model.b2, n, c)
    return ForwardCache(x=x, hidden=hidden, logits=logits)


def probs_from_logits(logits: Matrix) -> list[ProbVector]:
    out = Matrix(logits.rows, logits.cols)
    kernels.softmax_rows(logits.data, out.data, logits.rows, logits.cols)
    return [ProbVector(out.row(i), validate=False) for i in range(out.rows)]


def predict_probs(model: MlpModel,
                  images: Sequence[ImageTensor]) -> list[ProbVector]:
    """Inference probabilities, no augmentation, order preserved."""
    if not images:
        return []
    cache = forward(model, pack_batch(images, model.input_dim))
    return probs_from_logits(cache.logits)


def backward(model: MlpModel, cache: ForwardCache, dlogits: Matrix) -> Grads:
    """Parameter gradients given d(loss)/d(logits)."""
    n = cache.x.rows
    d, dh, c = model.input_dim, model.hidden_dim, model.class_count
    if (dlogits.rows, dlogits.cols) != (n, c):
        raise InvalidInputError(
            f"upstream gradient is {dlogits.rows}x{dlogits.cols}, "
            f"expected {n}x{c}")
    gw2 = array("d", bytes(8 * dh * c))
    kernels.matmul_tn(cache.hidden.data, dlogits.data, gw2, dh, n, c)
    gb2 = array("d", bytes(8 * c))
    kernels.col_sums(dlogits.data, gb2, n, c)
    dhidden = Matrix(n, dh)
    kernels.matmul_nt(dlogits.data, model.w2, dhidden.data, n, c, dh)
    kernels.relu_backward_inplace(dhidden.data, cache.hidden.data, n * dh)
    gw1 = array("d", bytes(8 * d * dh))
    kernels.matmul_tn(cache.x.data, dhidden.data, gw1, d, n, dh)
    gb1 = array("d", bytes(8 * dh))
    kernels.col_sums(dhidden.data, gb1, n, dh)
    return Grads(w1=gw1, b1=gb1, w2=gw2, b2=gb2)


def to_model_file(model: MlpModel) -> ModelFile:
    return ModelFile(model.input_dim, model.hidden_dim, model.class_count,
                     array("d", model.w1), array("d", model.b1),
                     array("d", model.w2), array("d", model.b2))


def model_from_file(mf: ModelFile) -> MlpModel:
    return MlpModel(mf.input_dim, mf.hidden_dim, mf.class_count,
                    array("d", mf.w1), array("d", mf.b1),
                    array("d", mf.w2), array("d", mf.b2))
