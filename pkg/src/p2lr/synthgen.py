"""Synthetic shifted-domain generator with hidden ground-truth identities.

Builds a set of well-separated unit-norm identity prototypes, then samples a
noisy target domain by pushing the prototypes through a global linear shift
and adding per-coordinate Gaussian noise.  The true identity of each sample
is kept on the side for evaluation only: clustering, scoring, and selection
code never receives a :class:`TargetDomain`, only its bare feature matrix.

All randomness flows through explicitly seeded generators, so every function
here is pure and bit-reproducible for a fixed seed.
"""

from dataclasses import dataclass

import numpy as np

from ._util import as_labels, round_half_up
from .errors import ConfigurationError

MAX_PROTOTYPE_ATTEMPTS = 10_000


@dataclass(frozen=True)
class IdentityPrototypes:
    """Unit-norm identity anchors of the clean source structure."""

    prototypes: np.ndarray  # (c_true, d), rows have unit Euclidean norm
    c_true: int
    d: int


@dataclass(frozen=True)
class TargetDomain:
    """Shifted, noisy samples plus evaluation-only ground truth.

    ``hidden_labels`` exist solely for purity/detection/retrieval metrics;
    by construction no clustering or selection code path accepts this type.
    """

    raw_features: np.ndarray  # (N, d)
    hidden_labels: np.ndarray  # (N,) values in [0, c_true)
    shift: np.ndarray  # (d, d) linear map applied to prototypes
    noise_sigma: float


def generate_prototypes(
    c_true: int, d: int, min_separation: float, seed: int
) -> IdentityPrototypes:
    """Sample c_true unit vectors with pairwise distance >= min_separation.

    Rejection sampling on the unit sphere, bounded at
    ``MAX_PROTOTYPE_ATTEMPTS`` draws; an infeasible (c_true, d,
    min_separation) combination raises ConfigurationError.
    """
    if c_true < 2:
        raise ConfigurationError(f"c_true must be >= 2, got {c_true}")
    if d < 2:
        raise ConfigurationError(f"d must be >= 2, got {d}")
    if not 0.0 <= min_separation < 2.0:
        raise ConfigurationError(
            f"min_separation must be in [0, 2), got {min_separation}"
        )

    rng = np.random.default_rng(seed)
    accepted: list[np.ndarray] = []
    for _ in range(MAX_PROTOTYPE_ATTEMPTS):
        v = rng.standard_normal(d)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            continue
        v = v / norm
        if all(np.linalg.norm(v - u) >= min_separation for u in accepted):
            accepted.append(v)
            if len(accepted) == c_true:
                return IdentityPrototypes(
                    prototypes=np.asarray(accepted), c_true=c_true, d=d
                )
    raise ConfigurationError(
        f"could not place {c_true} prototypes in d={d} with "
        f"min_separation={min_separation} after {MAX_PROTOTYPE_ATTEMPTS} attempts"
    )


def sample_target(
    prototypes: IdentityPrototypes,
    n_per_id: int,
    noise_sigma: float,
    shift_scale: float,
    seed: int,
) -> TargetDomain:
    """Draw n_per_id noisy samples per identity through a global linear shift.

    Sample i is ``A @ prototypes[label_i] + eps`` with
    ``A = I + shift_scale * R`` (R a seeded standard-normal matrix) and
    ``eps ~ N(0, noise_sigma^2 I)``.
    """
    if n_per_id < 1:
        raise ConfigurationError(f"n_per_id must be >= 1, got {n_per_id}")
    if noise_sigma < 0:
        raise ConfigurationError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if shift_scale < 0:
        raise ConfigurationError(f"shift_scale must be >= 0, got {shift_scale}")

    d = prototypes.d
    rng = np.random.default_rng(seed)
    # R is drawn unconditionally so the noise stream is identical whether or
    # not the shift is active.
    shift = np.eye(d) + shift_scale * rng.standard_normal((d, d))
    labels = np.repeat(np.arange(prototypes.c_true, dtype=np.int64), n_per_id)
    clean = prototypes.prototypes[labels] @ shift.T
    noise = noise_sigma * rng.standard_normal(clean.shape)
    return TargetDomain(
        raw_features=clean + noise,
        hidden_labels=labels,
        shift=shift,
        noise_sigma=float(noise_sigma),
    )


def corrupt_labels(
    labels, fraction: float, c_true: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Replace round(fraction*N) labels with a uniformly random different one.

    Returns (corrupted labels, boolean mask of replaced positions).  The
    count is exact and no corrupted entry ever equals its original.
    """
    labels = as_labels(labels)
    if not 0.0 <= fraction <= 1.0:
        raise ConfigurationError(f"fraction must be in [0, 1], got {fraction}")
    if c_true < 2:
        raise ConfigurationError(
            f"c_true must be >= 2 to pick a different identity, got {c_true}"
        )

    n = labels.shape[0]
    n_corrupt = round_half_up(fraction * n)
    corrupted = labels.copy()
    mask = np.zeros(n, dtype=bool)
    if n_corrupt == 0:
        return corrupted, mask

    rng = np.random.default_rng(seed)
    positions = rng.choice(n, size=n_corrupt, replace=False)
    # Uniform over the c_true - 1 identities excluding the original.
    draws = rng.integers(0, c_true - 1, size=n_corrupt)
    originals = corrupted[positions]
    corrupted[positions] = np.where(draws < originals, draws, draws + 1)
    mask[positions] = True
    return corrupted, mask
