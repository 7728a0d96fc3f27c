"""Negative class sub-sampling for the classifier columns.

Each iteration keeps every class that appears in the batch and fills the
remaining slots with a uniform sample (without replacement) of the other
classes, for a target size of max(1, round(C * r)). Gradients reach only the
selected columns; all other columns stay bit-identical through the step.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DomainError, ShapeError, StateError
from .losses import ClassifierBank
from .tensor import Tensor


@dataclass
class SampleSet:
    """Sorted selected class ids plus the global-to-local column mapping."""

    global_ids: np.ndarray
    r: float
    num_classes: int
    seed_state: dict = field(repr=False)
    local_of_global: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        ids = np.asarray(self.global_ids, dtype=np.int64)
        if ids.size == 0:
            raise ShapeError("a sample set cannot be empty")
        if np.unique(ids).size != ids.size:
            raise ShapeError("duplicate class ids in sample set")
        self.global_ids = np.sort(ids)
        self.local_of_global = {int(g): i for i, g in enumerate(self.global_ids)}

    @property
    def size(self) -> int:
        return int(self.global_ids.size)

    def local_labels(self, labels) -> np.ndarray:
        """Map global batch labels to local column indices within the set."""
        labels = np.asarray(labels, dtype=np.int64)
        lut = np.full(self.num_classes, -1, dtype=np.int64)
        lut[self.global_ids] = np.arange(self.size)
        local = lut[labels]
        if (local < 0).any():
            missing = int(labels[np.argmax(local < 0)])
            raise StateError(f"positive class {missing} is missing from the sample set")
        return local


def sample(num_classes: int, r: float, batch_labels, rng: np.random.Generator) -> SampleSet:
    """Draw the per-iteration class subset.

    The target size is max(1, round(C * r)); if the batch has more distinct
    positives than that, the set grows to keep them all. r = 1 returns every
    class in order.
    """
    if not 0.0 < r <= 1.0:
        raise DomainError(f"sampling ratio must lie in (0, 1], got {r}")
    labels = np.asarray(batch_labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ShapeError(f"label out of range for {num_classes} classes")
    state = copy.deepcopy(rng.bit_generator.state)
    if r == 1.0:
        ids = np.arange(num_classes, dtype=np.int64)
        return SampleSet(global_ids=ids, r=r, num_classes=num_classes, seed_state=state)
    positives = np.unique(labels)
    target = max(1, round(num_classes * r))
    extra = target - positives.size
    if extra > 0:
        candidates = np.setdiff1d(np.arange(num_classes, dtype=np.int64), positives)
        chosen = rng.choice(candidates, size=min(extra, candidates.size), replace=False)
        ids = np.concatenate([positives, np.asarray(chosen, dtype=np.int64)])
    else:
        ids = positives
    return SampleSet(global_ids=ids, r=r, num_classes=num_classes, seed_state=state)


def gather_columns(bank: ClassifierBank, sample_set: SampleSet) -> Tensor:
    """Differentiable view of the selected classifier columns (d x |set|)."""
    if sample_set.num_classes != bank.num_classes:
        raise ShapeError(
            f"sample set built for {sample_set.num_classes} classes, bank has {bank.num_classes}"
        )
    return T.gather_cols(bank.weight, sample_set.global_ids)


def scatter_gradients(grad_sub: np.ndarray, sample_set: SampleSet, num_classes: int) -> np.ndarray:
    """Adjoint of the gather: selected columns carry the gradient, the rest
    are exact zeros."""
    grad_sub = np.asarray(grad_sub, dtype=np.float64)
    if grad_sub.ndim != 2 or grad_sub.shape[1] != sample_set.size:
        raise ShapeError(
            f"gradient shape {grad_sub.shape} does not match {sample_set.size} selected columns"
        )
    full = np.zeros((grad_sub.shape[0], num_classes), dtype=np.float64)
    full[:, sample_set.global_ids] = grad_sub
    return full
