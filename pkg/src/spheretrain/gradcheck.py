"""Finite-difference suites exposed through the command line.

Each check wraps a forward computation into a scalar function of a single
probe tensor and compares the analytic gradient against central differences.
Encoder checks sample a random subset of coordinates per seed; full sweeps
over every transformer parameter would be needlessly slow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import MLPEncoder, ViTConfig, ViTEncoder
from .errors import ConfigError
from .losses import (
    ClassifierBank,
    MarginSpec,
    cosine_logits,
    softmax_ce_loss,
    unified_margin_loss,
)
from .engine import loss_refinement, loss_stabilization
from .prototypes import PrototypeBank
from .sampler import sample
from .tensor import Tensor, finite_difference_check

LOSS_TOLERANCE = 1e-4
ENCODER_TOLERANCE = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def _unit_rows(rng, rows, dim):
    x = rng.standard_normal((rows, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def check_tensor_ops(seed: int = 0) -> list[CheckResult]:
    rng = np.random.Generator(np.random.Philox(seed))
    results = []
    a = Tensor(rng.standard_normal((4, 3)))
    b = Tensor(rng.standard_normal((3, 2)))
    results.append(
        CheckResult(
            "matmul",
            finite_difference_check(lambda x: T.reduce_sum(T.matmul(x, b)), a),
            LOSS_TOLERANCE,
        )
    )
    x = Tensor(rng.standard_normal((3, 4)))
    results.append(
        CheckResult(
            "mul",
            finite_difference_check(lambda t: T.reduce_sum(T.mul(t, t)), x),
            LOSS_TOLERANCE,
        )
    )
    results.append(
        CheckResult(
            "exp",
            finite_difference_check(lambda t: T.reduce_sum(T.exp(t)), x),
            LOSS_TOLERANCE,
        )
    )
    pos = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)))
    results.append(
        CheckResult(
            "log",
            finite_difference_check(lambda t: T.reduce_sum(T.log(t)), pos),
            LOSS_TOLERANCE,
        )
    )
    results.append(
        CheckResult(
            "gelu",
            finite_difference_check(lambda t: T.reduce_sum(T.gelu(t)), x),
            LOSS_TOLERANCE,
        )
    )
    w = Tensor(rng.standard_normal((3, 5)))
    probe = rng.standard_normal((3, 5))
    results.append(
        CheckResult(
            "row_softmax",
            finite_difference_check(
                lambda t: T.reduce_sum(T.mul(T.row_softmax(t), Tensor(probe))), w
            ),
            LOSS_TOLERANCE,
        )
    )
    results.append(
        CheckResult(
            "row_logsumexp",
            finite_difference_check(lambda t: T.reduce_sum(T.row_logsumexp(t)), w),
            LOSS_TOLERANCE,
        )
    )
    results.append(
        CheckResult(
            "l2_normalize_rows",
            finite_difference_check(
                lambda t: T.reduce_sum(T.mul(T.l2_normalize_rows(t), Tensor(probe))), w
            ),
            LOSS_TOLERANCE,
        )
    )
    gain = Tensor(rng.uniform(0.5, 1.5, size=5))
    bias = Tensor(rng.standard_normal(5))
    results.append(
        CheckResult(
            "layer_norm",
            finite_difference_check(
                lambda t: T.reduce_sum(T.mul(T.layer_norm(t, gain, bias), Tensor(probe))),
                w,
            ),
            LOSS_TOLERANCE,
        )
    )
    return results


def _loss_setup(rng, batch=3, dim=8, classes=6):
    feats = _unit_rows(rng, batch, dim)
    weights = _unit_rows(rng, classes, dim).T
    labels = rng.integers(0, classes, size=batch)
    return feats, weights, labels


def check_losses(seed: int = 0) -> list[CheckResult]:
    rng = np.random.Generator(np.random.Philox(seed))
    feats, weights, labels = _loss_setup(rng)
    results = []

    def ce(t):
        return softmax_ce_loss(T.matmul(t, Tensor(weights)), labels)

    results.append(
        CheckResult("softmax_ce/features", finite_difference_check(ce, Tensor(feats)), LOSS_TOLERANCE)
    )
    specs = {
        "angular": MarginSpec.plain(16.0),
        "cosface": MarginSpec.cosface(64.0, 0.4),
        "unified": MarginSpec(s=16.0, m1=1.2, m2=0.2, m3=0.1),
    }
    for name, spec in specs.items():
        def wrt_features(t, spec=spec):
            return unified_margin_loss(cosine_logits(t, Tensor(weights), labels), spec)

        def wrt_weights(t, spec=spec):
            return unified_margin_loss(cosine_logits(Tensor(feats), t, labels), spec)

        results.append(
            CheckResult(
                f"{name}/features",
                finite_difference_check(wrt_features, Tensor(feats)),
                LOSS_TOLERANCE,
            )
        )
        results.append(
            CheckResult(
                f"{name}/weights",
                finite_difference_check(wrt_weights, Tensor(weights)),
                LOSS_TOLERANCE,
            )
        )

    protos = PrototypeBank(feats.shape[1], weights.shape[1])
    proto_rng = np.random.Generator(np.random.Philox(seed + 1))
    for cls in range(weights.shape[1]):
        protos.update(cls, _unit_rows(proto_rng, 1, feats.shape[1])[0])
    sset = sample(weights.shape[1], 0.8, labels, proto_rng)

    def stage2(t):
        bank = ClassifierBank(weight=Tensor(weights))
        return loss_stabilization(t, labels, bank, protos, sset, 16.0, 0.4, 0.4)

    def stage3(t):
        bank = ClassifierBank(weight=Tensor(weights))
        return loss_refinement(t, labels, bank, protos, 16.0, 0.4, 0.4)

    results.append(
        CheckResult(
            "stabilization/features", finite_difference_check(stage2, Tensor(feats)), LOSS_TOLERANCE
        )
    )
    results.append(
        CheckResult(
            "refinement/features", finite_difference_check(stage3, Tensor(feats)), LOSS_TOLERANCE
        )
    )

    def stage3_weights(t):
        bank = ClassifierBank(weight=t)
        return loss_refinement(Tensor(feats), labels, bank, protos, 16.0, 0.4, 0.4)

    results.append(
        CheckResult(
            "refinement/weights",
            finite_difference_check(stage3_weights, Tensor(weights)),
            LOSS_TOLERANCE,
        )
    )
    return results


def encoder_gradient_check(
    encoder,
    inputs: np.ndarray,
    probe: np.ndarray,
    max_coords: int,
    rng: np.random.Generator,
    eps: float = 1e-5,
) -> float:
    """Finite-difference check of d<probe, encode(inputs)>/d(parameters).

    All encoder parameters are treated as one flat vector; ``max_coords``
    coordinates are sampled for the numeric side. The encoder is left at its
    original parameters afterwards.
    """
    params = encoder.params()

    def objective() -> Tensor:
        return T.reduce_sum(T.mul(encoder.forward(inputs), Tensor(probe)))

    out = objective()
    out.backward()
    analytic = np.concatenate(
        [
            (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
            for _, t in params
        ]
    )
    for _, t in params:
        t.zero_grad()
    flat0 = np.concatenate([t.data.reshape(-1) for _, t in params])

    def load(flat: np.ndarray) -> None:
        offset = 0
        for _, t in params:
            size = t.data.size
            t.data = flat[offset : offset + size].reshape(t.shape).copy()
            offset += size

    for _, t in params:  # numeric sweeps need no graph
        t.requires_grad = False
    worst = 0.0
    try:
        coords = rng.choice(flat0.size, size=min(max_coords, flat0.size), replace=False)
        for i in coords:
            bumped = flat0.copy()
            bumped[i] += eps
            load(bumped)
            f_plus = objective().item()
            bumped[i] -= 2 * eps
            load(bumped)
            f_minus = objective().item()
            numeric = (f_plus - f_minus) / (2 * eps)
            denom = max(1.0, abs(analytic[i]), abs(numeric))
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    finally:
        load(flat0)
        for _, t in params:
            t.requires_grad = True
    return worst


def check_encoders(seed: int = 0, max_coords: int = 40) -> list[CheckResult]:
    rng = np.random.Generator(np.random.Philox(seed))
    results = []

    mlp = MLPEncoder(input_dim=6, hidden_dim=8, embed_dim=5)
    mlp.init(rng, weight_std=0.3)
    inputs = rng.standard_normal((3, 6))
    probe = rng.standard_normal((3, 5))
    results.append(
        CheckResult(
            "mlp/params",
            encoder_gradient_check(mlp, inputs, probe, max_coords, rng),
            ENCODER_TOLERANCE,
        )
    )

    cfg = ViTConfig(
        image_width=4, patch_stride=2, token_dim=8, layers=2, heads=2,
        embed_dim=6, channels=1, ffn_hidden=12, head_hidden=8,
    )
    vit = ViTEncoder(cfg)
    vit.init(rng, weight_std=0.3)
    images = rng.uniform(0.0, 1.0, size=(2, 4, 4, 1))
    probe = rng.standard_normal((2, 6))
    results.append(
        CheckResult(
            "vit/params",
            encoder_gradient_check(vit, images, probe, max_coords, rng),
            ENCODER_TOLERANCE,
        )
    )
    return results


_SUITES = {
    "tensor": check_tensor_ops,
    "losses": check_losses,
    "encoders": check_encoders,
}


def run_suite(module: str = "all", seed: int = 0) -> list[CheckResult]:
    if module == "all":
        out = []
        for fn in _SUITES.values():
            out.extend(fn(seed))
        return out
    if module not in _SUITES:
        raise ConfigError(
            f"unknown grad-check module {module!r}; pick one of {sorted(_SUITES)} or 'all'"
        )
    return _SUITES[module](seed)
