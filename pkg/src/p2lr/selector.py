"""Progressive sample selection: schedule, threshold, and closed-form picks.

Selection works on ranks only.  At step t a fraction p(t) of the data is
admitted, growing from a start fraction to 1.0 along a rescaled
log-exponential curve.  The admitted set is exactly the count(t) samples with
the lowest uncertainty, ties broken by ascending sample index, which is the
closed-form minimizer of the joint objective

    E(v) = sum_i v_i u_i - threshold * sum_i v_i,   v_i in {0, 1}

whenever the threshold separates the count lowest scores from the rest.  A
2^N brute-force minimizer of the same objective is included as a test oracle.
"""

from dataclasses import dataclass

import numpy as np

from ._util import as_scores, round_half_up
from .errors import ConfigurationError, InputError

__all__ = [
    "SelectionState",
    "schedule_fraction",
    "selection_threshold",
    "select_lowest",
    "selection_objective",
    "brute_force_selection",
    "exp_reweight",
]

BRUTE_FORCE_MAX_N = 20


@dataclass(frozen=True)
class SelectionState:
    """Snapshot of one selection step, as dumped to the selection CSV."""

    uncertainties: np.ndarray
    indicators: np.ndarray
    threshold: float | None  # None for criteria without a hard cutoff
    fraction: float
    step: int
    horizon: int

    def __post_init__(self):
        if not 0 <= self.step <= self.horizon:
            raise InputError(
                f"step must be in [0, horizon={self.horizon}], got {self.step}"
            )
        if not 0.0 < self.fraction <= 1.0:
            raise InputError(f"fraction must be in (0, 1], got {self.fraction}")


def schedule_fraction(t: int, horizon: int, start: float, growth: float) -> float:
    """Selected fraction at step t of horizon: start at t=0, exactly 1 at t=horizon.

    p(t) = start + ln(1 + (e^{growth*(1-start)} - 1) * t/horizon) / growth,
    strictly increasing and concave in t.  A zero horizon denotes a run with
    only its final step, so the fraction is 1.
    """
    if horizon < 0:
        raise ConfigurationError(f"horizon must be >= 0, got {horizon}")
    if not 0 <= t <= max(horizon, 0):
        raise ConfigurationError(f"t must be in [0, {horizon}], got {t}")
    if not 0.0 < start < 1.0:
        raise ConfigurationError(f"start fraction must be in (0, 1), got {start}")
    if not growth > 0.0:
        raise ConfigurationError(f"growth must be > 0, got {growth}")
    if horizon == 0:
        return 1.0
    scale = np.expm1(growth * (1.0 - start))
    return start + float(np.log1p(scale * (t / horizon))) / growth


def selection_threshold(uncertainties, fraction: float) -> tuple[float, int]:
    """Cutoff value admitting exactly count = clamp(round(N*fraction), 1, N).

    Returns (threshold, count): the count-th smallest uncertainty and the
    exact number of samples to admit.  Ties at the threshold are resolved
    downstream by ascending sample index.
    """
    u = as_scores(uncertainties, name="uncertainties")
    n = u.shape[0]
    if n < 1:
        raise InputError("uncertainties must be nonempty")
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"fraction must be in (0, 1], got {fraction}")
    count = min(max(round_half_up(n * fraction), 1), n)
    threshold = float(np.partition(u, count - 1)[count - 1])
    return threshold, count


def select_lowest(uncertainties, threshold: float, count: int) -> np.ndarray:
    """Indicator vector admitting the count lowest-uncertainty samples.

    The (threshold, count) pair must be consistent: the count-th smallest
    value may not exceed the threshold and the (count+1)-th may not fall
    below it.  Pairs from selection_threshold always qualify, as does any
    threshold lying strictly between two adjacent sorted values.
    """
    u = as_scores(uncertainties, name="uncertainties")
    n = u.shape[0]
    if not 1 <= count <= n:
        raise InputError(f"count must be in [1, {n}], got {count}")
    ordered = np.sort(u)
    if ordered[count - 1] > threshold or (count < n and ordered[count] < threshold):
        raise InputError(
            f"inconsistent cutoff: count={count} does not bracket threshold={threshold}"
        )
    # Stable argsort ranks ties by ascending index.
    order = np.argsort(u, kind="stable")
    indicators = np.zeros(n, dtype=np.int64)
    indicators[order[:count]] = 1
    return indicators


def selection_objective(uncertainties, indicators, threshold: float) -> float:
    """E(v) = sum(v*u) - threshold*sum(v) for a binary indicator vector.

    Evaluated as sum(v * (u - threshold)) so a sample sitting exactly on the
    threshold contributes exactly 0 regardless of the rest of the set.
    """
    u = as_scores(uncertainties, name="uncertainties")
    v = np.asarray(indicators, dtype=np.float64)
    if v.shape != u.shape:
        raise InputError(f"indicators shape {v.shape} != uncertainties {u.shape}")
    if not np.all((v == 0.0) | (v == 1.0)):
        raise InputError("indicators must be binary")
    return float(np.dot(v, u - threshold))


def brute_force_selection(uncertainties, threshold: float) -> np.ndarray:
    """Exhaustive 2^N minimizer of the selection objective (test oracle).

    Tie policy: minimal objective, then the most samples selected, then the
    lexicographically smallest indicator vector.  Guarded to N <= 20.
    """
    u = as_scores(uncertainties, name="uncertainties")
    n = u.shape[0]
    if n < 1:
        raise InputError("uncertainties must be nonempty")
    if n > BRUTE_FORCE_MAX_N:
        raise InputError(f"brute force capped at N={BRUTE_FORCE_MAX_N}, got {n}")
    masks = np.arange(2**n, dtype=np.uint32)
    bits = ((masks[:, None] >> np.arange(n, dtype=np.uint32)) & 1).astype(np.uint8)
    # Marginal form: a u_i == threshold sample adds exactly 0, so the tie
    # policy below (not float rounding) decides whether it is kept.
    objective = bits @ (u - threshold)
    best = objective.min()
    candidates = np.flatnonzero(objective == best)
    counts = bits[candidates].sum(axis=1)
    candidates = candidates[counts == counts.max()]
    # Lexicographic order on (v_0, v_1, ...): v_0 is the most significant.
    lex_weight = np.left_shift(1, np.arange(n - 1, -1, -1), dtype=np.int64)
    lex_keys = bits[candidates].astype(np.int64) @ lex_weight
    winner = candidates[int(np.argmin(lex_keys))]
    return bits[winner].astype(np.int64)


def exp_reweight(uncertainties, temperature: float) -> np.ndarray:
    """Soft alternative to binary selection: weight exp(-u/temperature).

    Monotone decreasing in the uncertainty, equal to 1 at u = 0, and within
    (0, 1] for nonnegative scores.
    """
    u = as_scores(uncertainties, name="uncertainties")
    if not temperature > 0:
        raise ConfigurationError(f"temperature must be > 0, got {temperature}")
    if np.any(u < 0):
        raise InputError("uncertainties must be nonnegative")
    return np.exp(-u / temperature)
