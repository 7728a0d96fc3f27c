"""Verification metrics and cluster statistics for embedding sets.

Pairs are scored by cosine similarity. The accept threshold for a target
false-accept rate sweeps the observed impostor scores: the threshold is the
smallest impostor score whose accept rate (counting ties on the accept side)
does not exceed the target. If even the largest impostor score is too
permissive, the operating point sits just above it and only strictly larger
genuine scores are accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, DomainError, ProtocolError, ShapeError


@dataclass(frozen=True)
class VerificationPair:
    index_a: int
    index_b: int
    is_match: bool

    def __post_init__(self):
        if self.index_a == self.index_b:
            raise ShapeError(f"a pair cannot compare sample {self.index_a} with itself")
        if self.index_a < 0 or self.index_b < 0:
            raise ShapeError("pair indices must be nonnegative")


@dataclass
class VerificationReport:
    roc: list[tuple[float, float]]
    tar_at: dict[float, float]
    intra_mean_cos: float
    inter_mean_cos: float
    sample_count: int


def split_scores(scores: np.ndarray, is_match: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    is_match = np.asarray(is_match, dtype=bool)
    if scores.shape != is_match.shape:
        raise ShapeError(f"{scores.shape} scores for {is_match.shape} match flags")
    return scores[is_match], scores[~is_match]


def tar_at_far(scores: np.ndarray, is_match: np.ndarray, far: float) -> float:
    """True-accept rate at the largest operating point whose false-accept
    rate stays at or below ``far``."""
    if not 0.0 < far < 1.0:
        raise DomainError(f"far must lie in (0, 1), got {far}")
    genuine, impostor = split_scores(scores, is_match)
    if impostor.size == 0:
        raise ProtocolError("protocol has no impostor pairs")
    if genuine.size == 0:
        raise ProtocolError("protocol has no genuine pairs")
    imp_sorted = np.sort(impostor)
    values, first = np.unique(imp_sorted, return_index=True)
    rates = (impostor.size - first) / impostor.size  # accept rate at each impostor score
    ok = np.flatnonzero(rates <= far)
    if ok.size == 0:
        threshold = values[-1]
        return float(np.mean(genuine > threshold))
    threshold = values[ok[0]]
    return float(np.mean(genuine >= threshold))


def roc_points(scores: np.ndarray, is_match: np.ndarray) -> list[tuple[float, float]]:
    """(FAR, TAR) pairs swept over the distinct impostor scores, FAR strictly
    increasing, starting at the zero-false-accept operating point."""
    genuine, impostor = split_scores(scores, is_match)
    if impostor.size == 0:
        raise ProtocolError("protocol has no impostor pairs")
    if genuine.size == 0:
        raise ProtocolError("protocol has no genuine pairs")
    values, first = np.unique(np.sort(impostor), return_index=True)
    points = [(0.0, float(np.mean(genuine > values[-1])))]
    for value, lo in zip(values[::-1], first[::-1]):
        far = (impostor.size - lo) / impostor.size
        tar = float(np.mean(genuine >= value))
        points.append((float(far), tar))
    return points


def cluster_stats(features: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(intra, inter) mean cosines: all same-class sample pairs pooled, and
    all normalized class-centroid pairs."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ShapeError(f"{features.shape} features for {labels.shape} labels")
    feat = features / np.linalg.norm(features, axis=1, keepdims=True)
    classes = np.unique(labels)
    if classes.size < 2:
        raise DegenerateInputError("cluster statistics need at least two classes")
    intra_sum = 0.0
    intra_count = 0
    centroids = []
    for cls in classes:
        block = feat[labels == cls]
        mean = block.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise DegenerateInputError(f"class {int(cls)} has a zero mean direction")
        centroids.append(mean / norm)
        if block.shape[0] >= 2:
            gram = block @ block.T
            iu = np.triu_indices(block.shape[0], k=1)
            intra_sum += float(gram[iu].sum())
            intra_count += iu[0].size
    if intra_count == 0:
        raise DegenerateInputError("no class has two or more samples")
    centroids = np.stack(centroids)
    cg = centroids @ centroids.T
    iu = np.triu_indices(classes.size, k=1)
    inter = float(cg[iu].mean())
    return intra_sum / intra_count, inter


@dataclass
class AngularProjection:
    """Cosine distances of every sample to two fixed unit reference
    directions; coordinates live in [0, 2]."""

    references: np.ndarray
    points: np.ndarray = field(repr=False)  # columns: coord1, coord2, label


def _pca_references(features: np.ndarray) -> np.ndarray:
    _, svals, vt = np.linalg.svd(features, full_matrices=False)
    if vt.shape[0] < 2 or svals[1] <= 1e-10 * max(svals[0], 1e-300):
        raise DomainError("feature set is rank-deficient; cannot pick two directions")
    refs = vt[:2].copy()
    for k in range(2):
        lead = np.argmax(np.abs(refs[k]))
        if refs[k, lead] < 0:
            refs[k] = -refs[k]
    return refs


def angular_projection(
    features: np.ndarray, labels: np.ndarray, ref_policy: str = "pca"
) -> AngularProjection:
    """Project each sample to (1 - cos(x, ref1), 1 - cos(x, ref2)).

    ``pca`` picks the two leading principal directions of the feature matrix
    (orthonormal, deterministic sign); ``axes`` uses the first two standard
    basis vectors for cross-run comparability.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[1] < 2:
        raise ShapeError(f"need rank-2 features with d >= 2, got {features.shape}")
    feat = features / np.linalg.norm(features, axis=1, keepdims=True)
    if ref_policy == "pca":
        refs = _pca_references(feat)
    elif ref_policy == "axes":
        refs = np.zeros((2, features.shape[1]))
        refs[0, 0] = 1.0
        refs[1, 1] = 1.0
    else:
        raise DomainError(f"unknown reference policy {ref_policy!r}")
    coords = 1.0 - feat @ refs.T
    points = np.column_stack([coords, labels.astype(np.float64)])
    return AngularProjection(references=refs, points=points)


def verification_report(
    features: np.ndarray,
    labels: np.ndarray,
    pairs: list[VerificationPair],
    far_targets: list[float],
) -> VerificationReport:
    features = np.asarray(features, dtype=np.float64)
    feat = features / np.linalg.norm(features, axis=1, keepdims=True)
    idx_a = np.asarray([p.index_a for p in pairs], dtype=np.int64)
    idx_b = np.asarray([p.index_b for p in pairs], dtype=np.int64)
    if idx_a.size and max(idx_a.max(), idx_b.max()) >= feat.shape[0]:
        raise ShapeError("pair index out of range for the embedding set")
    scores = np.einsum("ij,ij->i", feat[idx_a], feat[idx_b])
    is_match = np.asarray([p.is_match for p in pairs], dtype=bool)
    intra, inter = cluster_stats(feat, labels)
    return VerificationReport(
        roc=roc_points(scores, is_match),
        tar_at={float(f): tar_at_far(scores, is_match, f) for f in far_targets},
        intra_mean_cos=intra,
        inter_mean_cos=inter,
        sample_count=int(feat.shape[0]),
    )


def make_pairs(
    labels: np.ndarray,
    rng: np.random.Generator,
    max_genuine: int | None = None,
    max_impostor: int | None = None,
) -> list[VerificationPair]:
    """All genuine and impostor index pairs, optionally down-sampled."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    iu = np.triu_indices(n, k=1)
    match = labels[iu[0]] == labels[iu[1]]
    genuine = np.flatnonzero(match)
    impostor = np.flatnonzero(~match)
    if max_genuine is not None and genuine.size > max_genuine:
        genuine = np.sort(rng.choice(genuine, size=max_genuine, replace=False))
    if max_impostor is not None and impostor.size > max_impostor:
        impostor = np.sort(rng.choice(impostor, size=max_impostor, replace=False))
    out = []
    for k in genuine:
        out.append(VerificationPair(int(iu[0][k]), int(iu[1][k]), True))
    for k in impostor:
        out.append(VerificationPair(int(iu[0][k]), int(iu[1][k]), False))
    return out
