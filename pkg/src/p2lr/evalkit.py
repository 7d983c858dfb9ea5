"""Ground-truth evaluation: wrong-label detection and retrieval quality.

Detection treats uncertainty scores as a ranking of "probably mislabeled"
samples and reports precision/recall of the top slice plus a threshold-free
AUROC (rank-sum with midranks, so ties are handled exactly).

Retrieval splits every identity into query and gallery halves with a seeded
permutation, ranks the gallery by cosine similarity, and reports mAP and CMC
at ranks 1/5/10.  All tie-breaking is by ascending index, so both metrics are
deterministic.
"""

from dataclasses import dataclass

import numpy as np

from ._util import as_features, as_labels, as_scores, round_half_up
from .errors import ConfigurationError, InputError
from .uncertainty import normalize_rows

__all__ = ["DetectionOutcome", "RetrievalResult", "auroc", "detection_metrics", "retrieval_eval"]

CMC_RANKS = (1, 5, 10)


@dataclass(frozen=True)
class DetectionOutcome:
    """Wrong-label detection quality; recall/auroc are None when undefined."""

    precision: float
    recall: float | None
    auroc: float | None
    threshold_policy: str


@dataclass(frozen=True)
class RetrievalResult:
    map: float
    cmc: dict[int, float]  # rank -> fraction of queries with a hit in top rank


def auroc(scores, positive_mask) -> float | None:
    """Rank-sum AUROC of scores as a detector of the positive class.

    Midranks resolve ties, so constant scores give exactly 0.5.  Returns
    None when either class is empty.
    """
    s = as_scores(scores)
    mask = np.asarray(positive_mask, dtype=bool)
    if mask.shape != s.shape:
        raise InputError(f"mask shape {mask.shape} != scores shape {s.shape}")
    n_pos = int(mask.sum())
    n_neg = mask.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    starts = np.cumsum(counts) - counts + 1  # 1-indexed rank of each value run
    midranks = starts + (counts - 1) / 2.0
    rank_sum = float(midranks[inverse][mask].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def detection_metrics(scores, wrong_mask, top_fraction: float) -> DetectionOutcome:
    """Precision/recall of the highest-score slice against true wrong labels.

    The top round(N * top_fraction) scores (at least 1) are predicted wrong,
    ties broken by ascending sample index.  An all-clean mask leaves recall
    undefined (None); a single-class mask leaves AUROC undefined.
    """
    s = as_scores(scores)
    mask = np.asarray(wrong_mask, dtype=bool)
    if mask.shape != s.shape:
        raise InputError(f"wrong_mask shape {mask.shape} != scores shape {s.shape}")
    n = s.shape[0]
    if n == 0:
        raise InputError("scores must be nonempty")
    if not 0.0 < top_fraction <= 1.0:
        raise ConfigurationError(f"top_fraction must be in (0, 1], got {top_fraction}")
    n_predicted = min(max(round_half_up(n * top_fraction), 1), n)
    # Descending score; lexsort's last key is primary, earlier key breaks ties.
    order = np.lexsort((np.arange(n), -s))
    predicted = order[:n_predicted]
    true_positives = int(mask[predicted].sum())
    n_wrong = int(mask.sum())
    return DetectionOutcome(
        precision=true_positives / n_predicted,
        recall=(true_positives / n_wrong) if n_wrong > 0 else None,
        auroc=auroc(s, mask),
        threshold_policy=f"top_{n_predicted}_of_{n}_by_score_desc_ties_by_index",
    )


def retrieval_eval(embeddings, identities, query_fraction: float, seed: int) -> RetrievalResult:
    """mAP and CMC on a seeded per-identity query/gallery split.

    Each identity contributes clamp(round(query_fraction * m), 1, m - 1)
    queries, so both sides always contain every identity.  Ranking is by
    cosine similarity, ties by ascending gallery sample index.  AP is the
    mean of precision at each relevant position.
    """
    x = as_features(embeddings, name="embeddings")
    ids = as_labels(identities, n=x.shape[0], name="identities")
    if not 0.0 < query_fraction < 1.0:
        raise ConfigurationError(
            f"query_fraction must be in (0, 1), got {query_fraction}"
        )

    rng = np.random.default_rng(seed)
    query_idx: list[int] = []
    gallery_idx: list[int] = []
    for ident in np.unique(ids):
        members = np.flatnonzero(ids == ident)
        m = members.size
        if m < 2:
            raise InputError(
                f"identity {int(ident)} has a single sample and cannot be split"
            )
        n_q = min(max(round_half_up(query_fraction * m), 1), m - 1)
        perm = rng.permutation(m)
        query_idx.extend(members[perm[:n_q]].tolist())
        gallery_idx.extend(members[perm[n_q:]].tolist())

    queries = np.sort(np.asarray(query_idx, dtype=np.int64))
    gallery = np.sort(np.asarray(gallery_idx, dtype=np.int64))
    unit, _ = normalize_rows(x, what="embedding")
    sims = unit[queries] @ unit[gallery].T
    gallery_ids = ids[gallery]
    n_gallery = gallery.size

    average_precisions = np.empty(queries.size)
    first_hits = np.empty(queries.size, dtype=np.int64)
    tie_break = np.arange(n_gallery)
    for qi, qsample in enumerate(queries):
        order = np.lexsort((tie_break, -sims[qi]))
        relevant = gallery_ids[order] == ids[qsample]
        hits = np.flatnonzero(relevant)
        precisions = (np.arange(hits.size) + 1) / (hits + 1)
        average_precisions[qi] = precisions.mean()
        first_hits[qi] = hits[0] + 1
    cmc = {r: float(np.mean(first_hits <= r)) for r in CMC_RANKS}
    return RetrievalResult(map=float(average_precisions.mean()), cmc=cmc)
