"""Deterministic k-means producing pseudo labels and centroid classifier weights.

Plain Lloyd iterations with k-means++ seeding.  Every tie is broken by the
smallest index and every reduction runs in ascending sample order, so repeated
calls with one seed are bit-identical.  Empty clusters are repaired by
reseeding them onto the sample currently farthest from its own centroid.
"""

from dataclasses import dataclass

import numpy as np

from ._util import as_features
from .errors import InputError

__all__ = ["ClusterModel", "kmeans", "assign", "cluster_purity", "wrong_label_mask"]


@dataclass(frozen=True)
class ClusterModel:
    """Clustering result: centroids double as cosine-classifier weights."""

    centroids: np.ndarray  # (c, d)
    assignments: np.ndarray  # (N,) values in [0, c)
    inertia: float
    c: int
    inertia_history: tuple[float, ...]  # one entry per Lloyd iteration


def _sq_dists(features: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # Direct differences, not the expanded |x|^2 - 2xc + |c|^2 form: the
    # expansion loses precision near ties and would break exact tie-breaking.
    diff = features[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def assign(features, centroids) -> np.ndarray:
    """Nearest-centroid index per sample, ties to the smallest index."""
    features = as_features(features)
    centroids = as_features(centroids, name="centroids")
    if features.shape[1] != centroids.shape[1]:
        raise InputError(
            f"dimension mismatch: features d={features.shape[1]}, "
            f"centroids d={centroids.shape[1]}"
        )
    return np.argmin(_sq_dists(features, centroids), axis=1)


def _inertia(features: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    diff = features - centroids[labels]
    # einsum keeps the reduction order fixed (ascending sample index).
    return float(np.einsum("nd,nd->", diff, diff))


def _plusplus_init(features: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding via inverse-CDF sampling on squared distances."""
    n = features.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d2 = np.einsum(
        "nd,nd->n", features - features[chosen[0]], features - features[chosen[0]]
    )
    for j in range(1, k):
        total = d2.sum()
        if total > 0.0:
            cum = np.cumsum(d2)
            idx = int(np.searchsorted(cum, rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            # All remaining mass is on duplicates of existing centers; take
            # the smallest-index sample not already chosen.
            taken = np.zeros(n, dtype=bool)
            taken[chosen[:j]] = True
            idx = int(np.flatnonzero(~taken)[0])
        chosen[j] = idx
        new_d2 = np.einsum(
            "nd,nd->n", features - features[idx], features - features[idx]
        )
        d2 = np.minimum(d2, new_d2)
    return features[chosen].copy()


def _means_with_repair(
    features: np.ndarray, labels: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Recompute centroids as member means; reseed empty clusters.

    An empty cluster takes over the sample farthest from its assigned
    centroid, drawn from clusters that would keep at least one member.
    Repairs run in ascending empty-cluster order, ties by smallest sample
    index, and every steal strictly lowers the inertia.
    """
    n, d = features.shape
    labels = labels.copy()
    centroids = np.zeros((k, d))
    counts = np.bincount(labels, minlength=k)
    np.add.at(centroids, labels, features)
    nonempty = counts > 0
    centroids[nonempty] /= counts[nonempty, None]

    empties = np.flatnonzero(~nonempty)
    for e in empties:
        dist = np.einsum(
            "nd,nd->n", features - centroids[labels], features - centroids[labels]
        )
        dist[counts[labels] < 2] = -np.inf  # donor must keep a member
        s = int(np.argmax(dist))
        donor = labels[s]
        labels[s] = e
        counts[donor] -= 1
        counts[e] = 1
        centroids[e] = features[s]
        members = np.flatnonzero(labels == donor)
        centroids[donor] = features[members].mean(axis=0)
    return centroids, labels


def kmeans(
    features,
    k: int,
    max_iters: int = 100,
    tol: float = 1e-9,
    seed: int = 0,
    init_centroids=None,
) -> ClusterModel:
    """Lloyd's algorithm, deterministic for a fixed seed.

    Stops once an iteration improves inertia by less than tol, assignments
    reach a fixed point, or max_iters passes complete.  Exits always land
    right after a mean-update, so returned centroids equal the member means
    of the returned assignments and every cluster is nonempty.
    Pass init_centroids to warm-start instead of k-means++ seeding.
    """
    features = as_features(features)
    n = features.shape[0]
    if k < 1 or k > n:
        raise InputError(f"k must be in [1, N={n}], got {k}")
    if max_iters < 1:
        raise InputError(f"max_iters must be >= 1, got {max_iters}")
    if tol < 0:
        raise InputError(f"tol must be >= 0, got {tol}")

    if init_centroids is None:
        rng = np.random.default_rng(seed)
        centroids = _plusplus_init(features, k, rng)
    else:
        centroids = as_features(init_centroids, name="init_centroids").copy()
        if centroids.shape != (k, features.shape[1]):
            raise InputError(
                f"init_centroids shape {centroids.shape} != ({k}, {features.shape[1]})"
            )

    labels = assign(features, centroids)
    history = [_inertia(features, labels, centroids)]
    for it in range(max_iters):
        centroids, labels = _means_with_repair(features, labels, k)
        current = _inertia(features, labels, centroids)
        history.append(current)
        if history[-2] - current < tol:
            break
        if it == max_iters - 1:
            break
        new_labels = assign(features, centroids)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    return ClusterModel(
        centroids=centroids,
        assignments=labels,
        inertia=history[-1],
        c=k,
        inertia_history=tuple(history),
    )


def cluster_purity(assignments, hidden_labels) -> float:
    """Fraction of samples whose identity is their cluster's majority identity.

    Majority ties go to the smaller identity index, which does not change
    the purity value itself.
    """
    assignments = np.asarray(assignments, dtype=np.int64)
    hidden_labels = np.asarray(hidden_labels, dtype=np.int64)
    if assignments.shape != hidden_labels.shape or assignments.ndim != 1:
        raise InputError("assignments and hidden_labels must be equal-length 1-D")
    n = assignments.shape[0]
    if n == 0:
        raise InputError("empty assignments")
    correct = 0
    for cluster in np.unique(assignments):
        ids = hidden_labels[assignments == cluster]
        correct += int(np.bincount(ids).max())
    return correct / n


def wrong_label_mask(assignments, hidden_labels) -> np.ndarray:
    """True where a sample's identity differs from its cluster's majority.

    Ground-truth notion of a wrong pseudo label; complements cluster_purity
    (mask mean equals 1 - purity).
    """
    assignments = np.asarray(assignments, dtype=np.int64)
    hidden_labels = np.asarray(hidden_labels, dtype=np.int64)
    if assignments.shape != hidden_labels.shape or assignments.ndim != 1:
        raise InputError("assignments and hidden_labels must be equal-length 1-D")
    mask = np.zeros(assignments.shape[0], dtype=bool)
    for cluster in np.unique(assignments):
        members = assignments == cluster
        ids = hidden_labels[members]
        majority = int(np.argmax(np.bincount(ids)))  # ties to smaller identity
        mask[members] = ids != majority
    return mask
