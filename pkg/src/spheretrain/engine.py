"""The staged training loop.

Training proceeds through three phases governed by the scheduler:

* alignment: cosine-margin loss over a sampled class subset. Every batch
  positive is kept; negatives are a uniform sample of ratio r.
* stabilization: same sampled classifier term plus a second penalty term
  against the per-class prototype directions. Prototypes fold in the current
  batch's features (forward-pass values, before the optimizer step) ahead of
  the loss, so every batch positive is initialized by the time it is read.
* refinement: both terms with the class sums over all C classes; sub-sampling
  is off. The prototype sum is restricted to classes that have actually been
  seen.

One optimizer step per iteration with decoupled weight decay; classifier
updates touch only the selected columns while sub-sampling is active, and the
touched columns are re-normalized onto the unit sphere afterwards. A log row
is emitted per iteration and a checkpoint is written at the end (or on
abort). Identical config and seed reproduce the run bit for bit.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import sampler as ncs
from . import tensor as T
from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig
from .data import Dataset
from .errors import ConfigError, NumericError, StateError
from .losses import (
    ClassifierBank,
    CosineLogits,
    cosface_loss,
    cosine_logits,
    log_one_plus_ratio_sums,
    margin_penalty_exponents,
    negatives_mask,
)
from .optim import AdamW
from .prototypes import PrototypeBank
from .sampler import SampleSet
from .scheduler import Phase, StageState, css_score, step_scheduler
from .tensor import Tensor

LOG_HEADER = "iteration,phase,loss,css_raw,css_smoothed,lr"


@dataclass
class LogRow:
    iteration: int
    phase: str
    loss: float
    css_raw: float
    css_smoothed: float
    lr: float

    def to_csv(self) -> str:
        return (
            f"{self.iteration},{self.phase},{self.loss!r},"
            f"{self.css_raw!r},{self.css_smoothed!r},{self.lr!r}"
        )


def _finalize(per_sample: Tensor) -> Tensor:
    bad = ~np.isfinite(per_sample.data[:, 0])
    if bad.any():
        raise NumericError(f"non-finite loss for sample index {int(np.argmax(bad))}")
    return T.reduce_mean(per_sample)


def loss_alignment(
    features: Tensor,
    labels: np.ndarray,
    bank: ClassifierBank,
    sample_set: SampleSet,
    s: float,
    m: float,
) -> Tensor:
    """Cosine-margin loss over the sampled columns only, batch mean."""
    columns = ncs.gather_columns(bank, sample_set)
    local = sample_set.local_labels(labels)
    return cosface_loss(cosine_logits(features, columns, local), s, m)


def _prototype_part(
    features: Tensor,
    labels: np.ndarray,
    prototype_bank: PrototypeBank,
    class_ids: np.ndarray,
    s: float,
    m: float,
) -> tuple[Tensor, np.ndarray]:
    ids = prototype_bank.initialized_ids(class_ids)
    lut = np.full(prototype_bank.num_classes, -1, dtype=np.int64)
    lut[ids] = np.arange(ids.size)
    local = lut[np.asarray(labels, dtype=np.int64)]
    if (local < 0).any():
        missing = int(np.asarray(labels)[np.argmax(local < 0)])
        raise StateError(f"prototype for positive class {missing} is not initialized")
    cos = CosineLogits(
        values=prototype_bank.cos_to_prototypes(features, ids), label_column=local
    )
    return margin_penalty_exponents(cos, s, m), negatives_mask(cos)


def loss_stabilization(
    features: Tensor,
    labels: np.ndarray,
    bank: ClassifierBank,
    prototype_bank: PrototypeBank,
    sample_set: SampleSet,
    s: float,
    m1: float,
    m2: float,
) -> Tensor:
    """Sampled classifier term with margin m1 plus a prototype term with
    margin m2 over the initialized part of the same column subset."""
    columns = ncs.gather_columns(bank, sample_set)
    local = sample_set.local_labels(labels)
    cos_w = cosine_logits(features, columns, local)
    part_w = (margin_penalty_exponents(cos_w, s, m1), negatives_mask(cos_w))
    part_e = _prototype_part(
        features, labels, prototype_bank, sample_set.global_ids, s, m2
    )
    return _finalize(log_one_plus_ratio_sums([part_w, part_e]))


def loss_refinement(
    features: Tensor,
    labels: np.ndarray,
    bank: ClassifierBank,
    prototype_bank: PrototypeBank,
    s: float,
    m1: float,
    m2: float,
) -> Tensor:
    """Stabilization form with the class sums over all C classes."""
    labels = np.asarray(labels, dtype=np.int64)
    cos_w = cosine_logits(features, bank.weight, labels)
    part_w = (margin_penalty_exponents(cos_w, s, m1), negatives_mask(cos_w))
    part_e = _prototype_part(
        features, labels, prototype_bank, np.arange(bank.num_classes), s, m2
    )
    return _finalize(log_one_plus_ratio_sums([part_w, part_e]))


class _LogWriter:
    def __init__(self, path: str | Path | None):
        self._fh = None
        if path is not None:
            path = Path(path)
            fresh = not path.exists() or path.stat().st_size == 0
            self._fh = open(path, "a")
            if fresh:
                self._fh.write(LOG_HEADER + "\n")

    def write(self, row: LogRow) -> None:
        if self._fh is not None:
            self._fh.write(row.to_csv() + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _snapshot(
    encoder,
    bank: ClassifierBank,
    protos: PrototypeBank,
    opt: AdamW,
    state: StageState,
    rng: np.random.Generator,
    config_mapping: dict[str, str],
) -> Checkpoint:
    return Checkpoint(
        encoder_arch=encoder.describe(),
        encoder_arrays={name: t.data.copy() for name, t in encoder.params()},
        classifier=bank.weight.data.copy(),
        prototypes=protos.E.copy(),
        prototypes_initialized=protos.initialized.copy(),
        prototype_activation=protos.activation,
        optimizer_arrays={k: v.copy() for k, v in opt.state_arrays().items()},
        optimizer_counts=dict(opt.step_counts),
        stage=copy.copy(state),
        rng_state=copy.deepcopy(rng.bit_generator.state),
        config=dict(config_mapping),
    )


def train(
    config: TrainConfig,
    dataset: Dataset,
    encoder,
    log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    resume: Checkpoint | None = None,
    config_mapping: dict[str, str] | None = None,
) -> tuple[Checkpoint, list[LogRow]]:
    """Run the three-stage loop to ``config.max_iterations``.

    A fresh run draws encoder weights, then classifier columns, from a
    Philox stream seeded with ``config.seed``; batches and negative samples
    come from the same stream afterwards, which is what makes a run a pure
    function of (config, dataset). Passing ``resume`` continues a checkpoint
    exactly where it stopped.
    """
    config.validate()
    n = dataset.size
    if n == 0:
        raise ConfigError("dataset is empty")
    for it in (1, config.max_iterations):
        if config.batch_size_at(it) > n:
            raise ConfigError(
                f"batch size {config.batch_size_at(it)} exceeds dataset size {n}"
            )
    mapping = dict(config_mapping) if config_mapping is not None else config.to_mapping()

    if resume is None:
        rng = np.random.Generator(np.random.Philox(config.seed))
        encoder.init(rng)
        bank = ClassifierBank.init_random(encoder.embed_dim, dataset.num_classes, rng)
        protos = PrototypeBank(encoder.embed_dim, dataset.num_classes)
        opt = AdamW(config.beta1, config.beta2)
        state = StageState()
    else:
        if resume.encoder_arch != encoder.describe():
            raise ConfigError(
                "checkpoint encoder architecture does not match the provided encoder"
            )
        encoder.restore(resume.encoder_arrays)
        bank = ClassifierBank(weight=Tensor(resume.classifier.copy(), requires_grad=True))
        if bank.num_classes != dataset.num_classes:
            raise ConfigError(
                f"checkpoint has {bank.num_classes} classes, dataset has {dataset.num_classes}"
            )
        protos = PrototypeBank(bank.dim, bank.num_classes, resume.prototype_activation)
        protos.E = resume.prototypes.copy()
        protos.initialized = resume.prototypes_initialized.copy()
        opt = AdamW(config.beta1, config.beta2)
        opt.restore(resume.optimizer_arrays, resume.optimizer_counts)
        state = copy.copy(resume.stage)
        rng = np.random.Generator(np.random.Philox(config.seed))
        rng.bit_generator.state = copy.deepcopy(resume.rng_state)

    params = [(f"encoder.{name}", t) for name, t in encoder.params()]
    params.append(("classifier", bank.weight))

    rows: list[LogRow] = []
    log = _LogWriter(log_path)
    try:
        for it in range(state.iteration + 1, config.max_iterations + 1):
            batch_idx = rng.choice(n, size=config.batch_size_at(it), replace=False)
            batch_labels = dataset.labels[batch_idx]
            features = encoder.forward(dataset.inputs[batch_idx])
            phase = state.phase

            sample_set = None
            if phase is not Phase.REFINEMENT:
                sample_set = ncs.sample(dataset.num_classes, config.r, batch_labels, rng)
            if phase is not Phase.ALIGNMENT:
                protos.batch_update(batch_labels, features.data)

            if phase is Phase.ALIGNMENT:
                loss = loss_alignment(
                    features, batch_labels, bank, sample_set, config.s, config.m
                )
            elif phase is Phase.STABILIZATION:
                loss = loss_stabilization(
                    features, batch_labels, bank, protos, sample_set,
                    config.s, config.m1, config.m2,
                )
            else:
                loss = loss_refinement(
                    features, batch_labels, bank, protos, config.s, config.m1, config.m2
                )

            css = css_score(features.data, bank.weight.data, batch_labels)
            loss.backward()
            lr = config.lr_at(it)
            for name, p in params:
                if p.grad is None:
                    continue
                columns = (
                    sample_set.global_ids
                    if (name == "classifier" and sample_set is not None)
                    else None
                )
                opt.step(name, p.data, p.grad, lr, config.weight_decay, columns=columns)
            bank.renormalize_columns(sample_set.global_ids if sample_set is not None else None)
            for _, p in params:
                p.zero_grad()

            state.iteration = it
            step_scheduler(state, css, config.delta1, config.delta2, config.css_beta)
            row = LogRow(
                iteration=it,
                phase=phase.value,
                loss=loss.item(),
                css_raw=state.css_raw,
                css_smoothed=state.css_smoothed,
                lr=lr,
            )
            rows.append(row)
            log.write(row)
    except Exception:
        if checkpoint_path is not None:
            save_checkpoint(
                checkpoint_path,
                _snapshot(encoder, bank, protos, opt, state, rng, mapping),
            )
        raise
    finally:
        log.close()

    ckpt = _snapshot(encoder, bank, protos, opt, state, rng, mapping)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, ckpt)
    return ckpt, rows


def embed_dataset(encoder, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Forward a whole input collection in chunks, returning float64 rows."""
    chunks = []
    for lo in range(0, len(inputs), batch_size):
        chunks.append(encoder.forward(inputs[lo : lo + batch_size]).data.copy())
    return np.concatenate(chunks, axis=0)
