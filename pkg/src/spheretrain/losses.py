"""The angular-margin loss family over cosine logits.

Every loss here operates on cosine similarities between unit-norm feature
rows and unit-norm class-center columns. The general form penalizes the
positive-class logit with up to three margins (multiplicative on the angle,
additive on the angle, additive on the cosine before scaling):

    loss_i = log(1 + sum_{j != y} exp(s*cos(theta_j))
                   / exp(s*(cos(m1*theta_y + m2) - m3)))

The additive cosine margin m3 is always applied as a penalty (subtracted
from the positive logit). Batches are reduced by mean. All sums of
exponentials are evaluated in log space so a scale of s = 64 never
overflows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import NumericError, ShapeError
from .tensor import Tensor

# Cosines are clamped this far inside [-1, 1] before any arccos so the
# derivative never blows up at the poles.
COSINE_CLAMP = 1e-7


@dataclass
class ClassifierBank:
    """The d x C matrix of unit-norm class-center columns, as a trainable leaf."""

    weight: Tensor

    def __post_init__(self):
        if self.weight.data.ndim != 2:
            raise ShapeError(f"classifier weight must be d x C, got {self.weight.shape}")
        if self.dim < 2 or self.num_classes < 2:
            raise ShapeError(
                f"need d >= 2 and C >= 2, got d={self.dim}, C={self.num_classes}"
            )

    @classmethod
    def init_random(cls, dim: int, num_classes: int, rng: np.random.Generator) -> "ClassifierBank":
        """Columns drawn uniform in [-1, 1) then scaled onto the unit sphere."""
        w = rng.uniform(-1.0, 1.0, size=(dim, num_classes))
        w /= np.linalg.norm(w, axis=0, keepdims=True)
        return cls(weight=Tensor(w, requires_grad=True))

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    def renormalize_columns(self, ids=None) -> None:
        """Rescale columns back to unit norm, touching only ``ids`` if given."""
        w = self.weight.data
        if ids is None:
            w /= np.linalg.norm(w, axis=0, keepdims=True)
        else:
            idx = np.asarray(ids, dtype=np.int64)
            w[:, idx] /= np.linalg.norm(w[:, idx], axis=0, keepdims=True)


@dataclass(frozen=True)
class MarginSpec:
    """Margin hyper-parameters (s, m1, m2, m3) for the unified loss."""

    s: float
    m1: float = 1.0
    m2: float = 0.0
    m3: float = 0.0

    def __post_init__(self):
        if self.s <= 0:
            raise ShapeError(f"scale must be positive, got {self.s}")
        if self.m1 < 1.0 or self.m2 < 0.0 or self.m3 < 0.0:
            raise ShapeError(f"margins out of range: {self}")

    @classmethod
    def plain(cls, s: float) -> "MarginSpec":
        return cls(s=s)

    @classmethod
    def cosface(cls, s: float, m: float) -> "MarginSpec":
        return cls(s=s, m3=m)

    @classmethod
    def arcface(cls, s: float, m: float) -> "MarginSpec":
        return cls(s=s, m2=m)

    @classmethod
    def sphereface(cls, s: float, m: float) -> "MarginSpec":
        return cls(s=s, m1=m)


@dataclass
class CosineLogits:
    """Clamped cosine similarities (B x K) plus the positive column per row."""

    values: Tensor
    label_column: np.ndarray = field(repr=False)

    def __post_init__(self):
        labels = np.asarray(self.label_column, dtype=np.int64)
        rows, cols = self.values.shape
        if labels.shape != (rows,):
            raise ShapeError(f"need one label per row, got {labels.shape} for {rows} rows")
        if labels.size and (labels.min() < 0 or labels.max() >= cols):
            raise ShapeError(f"label column out of range for {cols} columns")
        self.label_column = labels

    @property
    def batch_size(self) -> int:
        return self.values.shape[0]

    @property
    def num_columns(self) -> int:
        return self.values.shape[1]


def cosine_logits(features: Tensor, columns: Tensor, labels) -> CosineLogits:
    """Dot products between unit feature rows and unit center columns.

    Entries are clamped to +-(1 - 1e-7) so downstream arccos stays
    differentiable. Gradients flow into both operands if they require grad.
    """
    if features.data.ndim != 2 or columns.data.ndim != 2:
        raise ShapeError(
            f"need rank-2 features and columns, got {features.shape} and {columns.shape}"
        )
    if features.shape[1] != columns.shape[0]:
        raise ShapeError(
            f"feature dim {features.shape[1]} does not match column dim {columns.shape[0]}"
        )
    raw = T.matmul(features, columns)
    clamped = T.clip(raw, -1.0 + COSINE_CLAMP, 1.0 - COSINE_CLAMP)
    return CosineLogits(values=clamped, label_column=labels)


def softmax_ce_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross entropy of a raw-logit softmax at the label column."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ShapeError(f"label out of range for {logits.shape[1]} classes")
    lse = T.row_logsumexp(logits)
    pos = T.take_per_row(logits, labels)
    return T.reduce_mean(T.sub(lse, pos))


def margin_penalty_exponents(cos: CosineLogits, s: float, m: float) -> Tensor:
    """The exponent matrix s*cos_j - s*(cos_y - m) of the staged losses.

    Row i, column j holds the log of one ratio term
    exp(s*cos_j) / exp(s*(cos_y - m)); the label column itself is excluded
    later via the combiner's mask.
    """
    pos = T.take_per_row(cos.values, cos.label_column)
    shift = T.add(T.scale(pos, -s), s * m)
    return T.add_colvec(T.scale(cos.values, s), shift)


def log_one_plus_ratio_sums(parts: list[tuple[Tensor, np.ndarray]]) -> Tensor:
    """Per-sample log(1 + sum over every included exponent), as a (B, 1) column.

    Each part is an exponent matrix with a boolean include mask (False for
    the positive column and anything else that must not enter the sum). The
    leading constant 1 is realized as an always-included zero column, so the
    whole expression is a single stabilized log-sum-exp.
    """
    if not parts:
        raise ShapeError("need at least one exponent block")
    rows = parts[0][0].shape[0]
    zero = Tensor(np.zeros((rows, 1)))
    blocks = [zero]
    masks = [np.ones((rows, 1), dtype=bool)]
    for exponents, mask in parts:
        if exponents.shape[0] != rows:
            raise ShapeError("exponent blocks disagree on batch size")
        if mask.shape != exponents.shape:
            raise ShapeError(
                f"mask shape {mask.shape} does not match exponents {exponents.shape}"
            )
        blocks.append(exponents)
        masks.append(mask)
    padded = T.concat_cols(blocks)
    include = np.concatenate(masks, axis=1)
    return T.row_logsumexp(padded, include)


def negatives_mask(cos: CosineLogits) -> np.ndarray:
    mask = np.ones(cos.values.shape, dtype=bool)
    mask[np.arange(cos.batch_size), cos.label_column] = False
    return mask


def unified_margin_per_sample(cos: CosineLogits, spec: MarginSpec) -> Tensor:
    """Per-sample unified margin loss as a (B, 1) column."""
    pos = T.take_per_row(cos.values, cos.label_column)
    if spec.m1 != 1.0 or spec.m2 != 0.0:
        theta = T.arccos(pos)
        angle = T.clip(T.add(T.scale(theta, spec.m1), spec.m2), 0.0, np.pi)
        pos = T.cos(angle)
    if spec.m3 != 0.0:
        pos = T.add(pos, -spec.m3)
    shifted = T.add_colvec(T.scale(cos.values, spec.s), T.scale(pos, -spec.s))
    per = log_one_plus_ratio_sums([(shifted, negatives_mask(cos))])
    bad = ~np.isfinite(per.data[:, 0])
    if bad.any():
        raise NumericError(f"non-finite loss for sample index {int(np.argmax(bad))}")
    return per


def unified_margin_loss(cos: CosineLogits, spec: MarginSpec) -> Tensor:
    """Batch-mean unified margin loss."""
    return T.reduce_mean(unified_margin_per_sample(cos, spec))


def cosface_loss(cos: CosineLogits, s: float, m: float) -> Tensor:
    """Additive-cosine-margin specialization: logit s*(cos_y - m)."""
    return unified_margin_loss(cos, MarginSpec.cosface(s, m))
