"""Per-sample uncertainty scores for pseudo-labeled embeddings.

The primary score treats the cluster centroids as a cosine classifier:

    probs = softmax(alpha * cos(centroid_j, f))          (predicted)
    ideal = smoothed delta peaked on the pseudo label    (reference)
    score = KL(ideal || probs)                           (nats)

A high score means the classifier disagrees with the sample's pseudo label,
which on noisy clusterings correlates strongly with that label being wrong.
Two alternative criteria used for ablations live here as well: plain L2
distance to the labeled centroid, and a symmetrized KL between the teacher's
and student's predicted distributions.

Everything is float64, log-space where it matters, with fixed-order
reductions, so scores are bit-reproducible.
"""

from dataclasses import dataclass

import numpy as np

from ._util import as_features, as_labels
from .errors import ConfigurationError, InputError, SingularNormalizationError

__all__ = [
    "UncertaintyRecord",
    "normalize_rows",
    "classifier_logits",
    "log_softmax_rows",
    "classifier_probs",
    "centroid_classifier_probs",
    "ideal_distribution",
    "kl_divergence",
    "kl_ideal_scores",
    "l2_scores",
    "consistency_scores",
    "kl_ideal_records",
    "l2_records",
    "consistency_records",
]


@dataclass(frozen=True)
class UncertaintyRecord:
    sample_index: int
    score: float
    criterion: str


def normalize_rows(m: np.ndarray, what: str = "vector") -> tuple[np.ndarray, np.ndarray]:
    """Return (unit rows, row norms); zero-norm rows are an error."""
    norms = np.linalg.norm(m, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise SingularNormalizationError(what, int(bad[0]))
    return m / norms[:, None], norms


def classifier_logits(features, centroids, alpha: float) -> np.ndarray:
    """alpha-scaled cosine similarities, the logits of the centroid classifier."""
    features = as_features(features)
    centroids = as_features(centroids, name="centroids")
    if features.shape[1] != centroids.shape[1]:
        raise InputError(
            f"dimension mismatch: features d={features.shape[1]}, "
            f"centroids d={centroids.shape[1]}"
        )
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be > 0, got {alpha}")
    unit_f, _ = normalize_rows(features, what="feature")
    unit_c, _ = normalize_rows(centroids, what="centroid")
    return alpha * (unit_f @ unit_c.T)


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max-subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def classifier_probs(features, centroids, alpha: float) -> np.ndarray:
    """Predicted identity distributions, one row per sample.

    Rows are strictly positive and sum to 1 up to float64 rounding; scaling
    any feature row by a positive constant leaves its distribution unchanged.
    """
    return np.exp(log_softmax_rows(classifier_logits(features, centroids, alpha)))


def centroid_classifier_probs(f, centroids, alpha: float) -> np.ndarray:
    """Single-sample convenience form of classifier_probs."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1:
        raise InputError(f"f must be a 1-D vector, got ndim={f.ndim}")
    return classifier_probs(f[None, :], centroids, alpha)[0]


def ideal_distribution(c: int, label: int, epsilon: float) -> np.ndarray:
    """Smoothed delta: epsilon on the label, the rest spread evenly."""
    if c < 2:
        raise ConfigurationError(f"c must be >= 2, got {c}")
    if not 1.0 / c < epsilon <= 1.0:
        raise ConfigurationError(
            f"epsilon must satisfy 1/c < epsilon <= 1, got {epsilon} with c={c}"
        )
    if not 0 <= label < c:
        raise InputError(f"label must be in [0, {c}), got {label}")
    probs = np.full(c, (1.0 - epsilon) / (c - 1))
    probs[label] = epsilon
    return probs


def kl_divergence(q, p) -> float:
    """KL(q || p) in nats with the 0*ln(0/p) = 0 convention.

    Raises if some q_j > 0 meets p_j = 0 (infinite divergence); never happens
    for softmax-produced p, which is strictly positive.
    """
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape or q.ndim != 1:
        raise InputError(f"q and p must be equal-length 1-D, got {q.shape} vs {p.shape}")
    if np.any(q < 0) or np.any(p < 0):
        raise InputError("distributions must be nonnegative")
    support = q > 0
    if np.any(p[support] == 0.0):
        j = int(np.flatnonzero(support & (p == 0.0))[0])
        raise InputError(f"infinite divergence: q[{j}] > 0 but p[{j}] = 0")
    qs = q[support]
    return float(np.sum(qs * (np.log(qs) - np.log(p[support]))))


def _smoothed_delta_terms(c: int, epsilon: float) -> tuple[float, float, float]:
    """(peak mass, off mass, sum of q*ln(q)) of the smoothed delta."""
    off = (1.0 - epsilon) / (c - 1)
    q_log_q = epsilon * np.log(epsilon)
    if off > 0.0:
        q_log_q += (c - 1) * off * np.log(off)
    return epsilon, off, q_log_q


def kl_ideal_scores(features, pseudo_labels, centroids, alpha: float, epsilon: float) -> np.ndarray:
    """Vectorized KL(ideal || predicted) per sample, computed in log-space.

    Equals kl_divergence(ideal_distribution(...), classifier_probs(...))
    term by term; tiny negative rounding residues are clamped to 0.
    """
    logits = classifier_logits(features, centroids, alpha)
    c = logits.shape[1]
    if c < 2:
        raise ConfigurationError(f"need >= 2 centroids, got {c}")
    labels = as_labels(pseudo_labels, n=logits.shape[0], name="pseudo_labels")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InputError(f"pseudo_labels must be in [0, {c})")
    if not 1.0 / c < epsilon <= 1.0:
        raise ConfigurationError(
            f"epsilon must satisfy 1/c < epsilon <= 1, got {epsilon} with c={c}"
        )
    logp = log_softmax_rows(logits)
    peak, off, q_log_q = _smoothed_delta_terms(c, epsilon)
    own = logp[np.arange(logp.shape[0]), labels]
    cross = peak * own + off * (logp.sum(axis=1) - own)
    return np.maximum(q_log_q - cross, 0.0)


def l2_scores(features, pseudo_labels, centroids) -> np.ndarray:
    """Euclidean distance from each sample to its labeled centroid."""
    features = as_features(features)
    centroids = as_features(centroids, name="centroids")
    labels = as_labels(pseudo_labels, n=features.shape[0], name="pseudo_labels")
    if labels.size and (labels.min() < 0 or labels.max() >= centroids.shape[0]):
        raise InputError(f"pseudo_labels must be in [0, {centroids.shape[0]})")
    return np.linalg.norm(features - centroids[labels], axis=1)


def consistency_scores(teacher_features, student_features, centroids, alpha: float) -> np.ndarray:
    """Symmetrized KL between teacher and student predicted distributions."""
    t = as_features(teacher_features, name="teacher_features")
    s = as_features(student_features, name="student_features")
    if t.shape != s.shape:
        raise InputError(f"feature shapes differ: {t.shape} vs {s.shape}")
    logp_t = log_softmax_rows(classifier_logits(t, centroids, alpha))
    logp_s = log_softmax_rows(classifier_logits(s, centroids, alpha))
    p_t = np.exp(logp_t)
    p_s = np.exp(logp_s)
    forward = np.sum(p_t * (logp_t - logp_s), axis=1)
    backward = np.sum(p_s * (logp_s - logp_t), axis=1)
    return np.maximum(0.5 * (forward + backward), 0.0)


def _records(scores: np.ndarray, criterion: str) -> list[UncertaintyRecord]:
    return [
        UncertaintyRecord(sample_index=i, score=float(v), criterion=criterion)
        for i, v in enumerate(scores)
    ]


def kl_ideal_records(features, cluster, alpha: float, epsilon: float) -> list[UncertaintyRecord]:
    """Score every sample of a clustering with the KL criterion."""
    scores = kl_ideal_scores(features, cluster.assignments, cluster.centroids, alpha, epsilon)
    return _records(scores, "kl_ideal")


def l2_records(features, cluster) -> list[UncertaintyRecord]:
    return _records(l2_scores(features, cluster.assignments, cluster.centroids), "l2_centroid")


def consistency_records(teacher_features, student_features, cluster, alpha: float) -> list[UncertaintyRecord]:
    scores = consistency_scores(teacher_features, student_features, cluster.centroids, alpha)
    return _records(scores, "consistency")
