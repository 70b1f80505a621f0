"""Trial statistics: pick-up rates, tiering, significance tests, DiD,
importance-sampled off-policy value, and user-level bootstrap intervals.

Every function here is a pure reduction over an immutable call log. Rates
divide picked calls by attempted calls within a stratum (all calls, one
user, one slot); strata with zero attempts are reported absent rather
than as zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import stats as scipy_stats

from . import scheduler
from .domain import CallLog, N_SLOTS, SLOT_IDS


def pooled_pr(log: CallLog) -> float:
    """Picked over attempted across every call in the log."""
    attempts = int(log.attempted.sum())
    if attempts == 0:
        raise ValueError("no attempted calls")
    return float(log.picked.sum() / attempts)


def attempted_outcomes(log: CallLog) -> np.ndarray:
    """Per-attempted-call 0/1 outcomes, the samples behind the t-tests."""
    return log.picked[log.attempted].astype(np.int8)


def user_pr(log: CallLog) -> tuple[dict, float]:
    """Per-user rates and their unweighted mean.

    Users with no attempted calls carry no rate and are left out of both
    the mapping and the average.
    """
    m = len(log.user_table)
    att = log.attempted
    attempts = np.bincount(log.user_codes[att], minlength=m)
    picks = np.bincount(log.user_codes[att], weights=log.picked[att].astype(float), minlength=m)
    included = attempts > 0
    if not included.any():
        raise ValueError("no user has an attempted call")
    per_user = {
        log.user_table[c]: float(picks[c] / attempts[c]) for c in np.flatnonzero(included)
    }
    user_avg = float(np.mean([per_user[u] for u in per_user]))
    return per_user, user_avg


def slot_pr(log: CallLog) -> dict[int, float]:
    """Pooled rate per slot; slots never attempted are absent."""
    att = log.attempted
    attempts = np.bincount(log.slots[att], minlength=N_SLOTS + 1)
    picks = np.bincount(log.slots[att], weights=log.picked[att].astype(float), minlength=N_SLOTS + 1)
    return {
        slot: float(picks[slot] / attempts[slot])
        for slot in SLOT_IDS
        if attempts[slot] > 0
    }


def slot_outcomes(log: CallLog, slot: int) -> np.ndarray:
    """0/1 outcomes of attempted calls in one slot."""
    mask = log.attempted & (log.slots == slot)
    return log.picked[mask].astype(np.int8)


@dataclass(frozen=True)
class RateReport:
    pooled: float
    per_user: dict
    user_avg: float
    per_slot: dict[int, float]
    attempt_counts: dict


def rate_report(log: CallLog) -> RateReport:
    per_user, user_avg = user_pr(log)
    att = log.attempted
    return RateReport(
        pooled=pooled_pr(log),
        per_user=per_user,
        user_avg=user_avg,
        per_slot=slot_pr(log),
        attempt_counts={
            "total": int(att.sum()),
            "per_slot": {
                slot: int(c)
                for slot, c in enumerate(np.bincount(log.slots[att], minlength=N_SLOTS + 1))
                if slot in SLOT_IDS and c > 0
            },
        },
    )


@dataclass(frozen=True)
class TierSplit:
    """Partition of one arm's users into high/mid/low engagement tiers."""

    high: frozenset
    mid: frozenset
    low: frozenset
    top_fraction: float
    bottom_fraction: float


def _uid_key(user) -> tuple:
    return (type(user).__name__, user)


def _split_one_arm(per_user: Mapping, top_fraction: float, bottom_fraction: float) -> TierSplit:
    n = len(per_user)
    n_top = int(top_fraction * n + 0.5)
    n_bottom = int(bottom_fraction * n + 0.5)
    if n_top + n_bottom > n:
        raise ValueError(
            f"removal fractions overlap: top {n_top} + bottom {n_bottom} users of {n}"
        )
    by_rate_desc = sorted(per_user, key=lambda u: (-per_user[u], _uid_key(u)))
    high = frozenset(by_rate_desc[:n_top])
    rest = [u for u in by_rate_desc[n_top:]]
    rest.sort(key=lambda u: (per_user[u], _uid_key(u)))
    low = frozenset(rest[:n_bottom])
    mid = frozenset(rest[n_bottom:])
    return TierSplit(high, mid, low, top_fraction, bottom_fraction)


def tier_split(
    treatment_per_user: Mapping, control_per_user: Mapping
) -> tuple[TierSplit, TierSplit]:
    """Segment both arms with matched removal fractions.

    Each arm's share of always-pickers (rate exactly 1) and never-pickers
    (rate exactly 0) is measured; the larger share across arms becomes the
    removal fraction applied to both, so the comparison stays fair. Ties at
    a cut go to the lower user id.
    """
    if not treatment_per_user or not control_per_user:
        raise ValueError("both arms need at least one rated user")
    top = max(
        sum(1 for v in arm.values() if v == 1.0) / len(arm)
        for arm in (treatment_per_user, control_per_user)
    )
    bottom = max(
        sum(1 for v in arm.values() if v == 0.0) / len(arm)
        for arm in (treatment_per_user, control_per_user)
    )
    return (
        _split_one_arm(treatment_per_user, top, bottom),
        _split_one_arm(control_per_user, top, bottom),
    )


def pct_improvement(mean1: float, mean2: float) -> float | None:
    """Relative lift of mean1 over mean2 in percent; None when mean2 is 0."""
    if mean2 <= 0:
        return None
    return 100.0 * (mean1 - mean2) / mean2


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n1: int
    n2: int
    mean1: float
    mean2: float
    pct_improvement: float | None
    degenerate: bool = False


def t_test(
    outcomes1: Sequence[int] | np.ndarray,
    outcomes2: Sequence[int] | np.ndarray,
    equal_var: bool = False,
) -> TestResult:
    """Two-sample t-test on call-level binary outcomes.

    Welch (unequal variances, Welch-Satterthwaite degrees of freedom) by
    default; ``equal_var`` switches to the pooled-variance form for
    sensitivity checks. When both samples are constant the test is
    degenerate: p is 1 for equal means, 0 otherwise, flagged as such.
    """
    x1 = np.asarray(outcomes1, dtype=float)
    x2 = np.asarray(outcomes2, dtype=float)
    n1, n2 = x1.size, x2.size
    if n1 < 2 or n2 < 2:
        raise ValueError("each sample needs at least two outcomes")
    m1, m2 = float(x1.mean()), float(x2.mean())
    v1 = float(x1.var(ddof=1))
    v2 = float(x2.var(ddof=1))
    if v1 == 0.0 and v2 == 0.0:
        if m1 == m2:
            statistic, p, degenerate = 0.0, 1.0, True
        else:
            statistic, p, degenerate = math.copysign(math.inf, m1 - m2), 0.0, True
    elif equal_var:
        pooled = ((n1 - 1) * v1 + (n2 - 1) * v2) / (n1 + n2 - 2)
        se = math.sqrt(pooled * (1 / n1 + 1 / n2))
        statistic = (m1 - m2) / se
        p = 2.0 * float(scipy_stats.t.sf(abs(statistic), n1 + n2 - 2))
        degenerate = False
    else:
        a, b = v1 / n1, v2 / n2
        se = math.sqrt(a + b)
        statistic = (m1 - m2) / se
        df = (a + b) ** 2 / (a**2 / (n1 - 1) + b**2 / (n2 - 1))
        p = 2.0 * float(scipy_stats.t.sf(abs(statistic), df))
        degenerate = False
    return TestResult(
        statistic=statistic,
        p_value=p,
        n1=n1,
        n2=n2,
        mean1=m1,
        mean2=m2,
        pct_improvement=pct_improvement(m1, m2),
        degenerate=degenerate,
    )


def did(
    treatment_base: float, treatment_int: float, control_base: float, control_int: float
) -> float:
    """Difference in differences of four phase/arm rates."""
    for name, rate in (
        ("treatment_base", treatment_base),
        ("treatment_int", treatment_int),
        ("control_base", control_base),
        ("control_int", control_int),
    ):
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"{name} = {rate} outside [0, 1]")
    return (treatment_int - treatment_base) - (control_int - control_base)


def call_distribution(log: CallLog) -> dict[int, float]:
    """Share of first calls per slot: the realized recommendation policy."""
    counts = scheduler.unique_first_calls(log)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("no first calls in log")
    return {slot: counts[slot] / total for slot in SLOT_IDS}


def is_value(
    log: CallLog,
    target_slots: Mapping | None = None,
    target_dist: Mapping[int, float] | None = None,
    behavior: Mapping[int, float] | None = None,
    call_set: str = "first",
) -> float:
    """Importance-sampled value of a target policy on a logged call set.

    The target is either deterministic (``target_slots``: user -> slot, the
    per-user exploit policy) or a user-independent distribution
    (``target_dist``: slot -> probability). Each call is weighted by
    target probability over behavior probability of its logged slot;
    behavior defaults to uniform 1/7. ``call_set`` picks first calls only
    (default) or every attempt.
    """
    if (target_slots is None) == (target_dist is None):
        raise ValueError("provide exactly one of target_slots and target_dist")
    if call_set == "first":
        mask = log.attempted & (log.retries == 0)
    elif call_set == "all":
        mask = log.attempted
    else:
        raise ValueError(f"call_set must be 'first' or 'all', got {call_set!r}")
    n_calls = int(mask.sum())
    if n_calls == 0:
        raise ValueError("no calls in the evaluated set")

    slots = log.slots[mask].astype(np.int64)
    picked = log.picked[mask].astype(float)
    if behavior is None:
        behavior_arr = np.full(N_SLOTS + 1, 1.0 / N_SLOTS)
    else:
        behavior_arr = np.zeros(N_SLOTS + 1)
        for slot, prob in behavior.items():
            behavior_arr[slot] = prob
    for slot in np.unique(slots):
        if behavior_arr[slot] <= 0:
            raise ValueError(f"behavior probability is zero for logged slot {slot}")

    if target_dist is not None:
        target_arr = np.zeros(N_SLOTS + 1)
        for slot, prob in target_dist.items():
            target_arr[slot] = prob
        weights = target_arr[slots] / behavior_arr[slots]
    else:
        expected = np.empty(len(log.user_table), dtype=np.int64)
        for code, user in enumerate(log.user_table):
            try:
                expected[code] = target_slots[user]
            except KeyError:
                raise KeyError(f"target policy has no slot for user {user!r}") from None
        match = slots == expected[log.user_codes[mask]]
        weights = match / behavior_arr[slots]
    return float(np.sum(weights * picked) / n_calls)


class BootstrapResult(NamedTuple):
    low: float
    high: float
    point: float
    n_failed: int


def bootstrap_ci(
    log: CallLog,
    statistic: Callable[[CallLog], float],
    n_resamples: int = 2000,
    level: float = 0.95,
    rng: np.random.Generator | None = None,
) -> BootstrapResult:
    """Percentile interval from resampling users with replacement.

    Sampled duplicates of a user are relabeled as distinct users so
    user-level statistics see them as independent draws. Resamples on
    which the statistic raises are discarded and counted.
    """
    if len(log.users) < 2:
        raise ValueError("need at least two users to bootstrap")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    if n_resamples < 1:
        raise ValueError("n_resamples must be positive")
    rng = rng if rng is not None else np.random.default_rng()

    point = float(statistic(log))
    m = len(log.user_table)
    rows_by_code = [np.flatnonzero(log.user_codes == c) for c in range(m)]
    lengths = np.array([r.size for r in rows_by_code])
    user_table = tuple(range(m))

    values: list[float] = []
    n_failed = 0
    for _ in range(n_resamples):
        draw = rng.integers(0, m, size=m)
        idx = np.concatenate([rows_by_code[c] for c in draw]) if m else np.empty(0, np.int64)
        codes = np.repeat(np.arange(m, dtype=np.int32), lengths[draw])
        resample = CallLog._trusted(
            user_table,
            codes,
            log.slots[idx],
            log.days[idx],
            log.retries[idx],
            log.attempted[idx],
            log.picked[idx],
            log.phase_codes[idx],
            log.arm_codes[idx],
        )
        try:
            values.append(float(statistic(resample)))
        except Exception:
            n_failed += 1
    if not values:
        raise ValueError("statistic failed on every resample")
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(values, [alpha, 1.0 - alpha])
    return BootstrapResult(low=float(low), high=float(high), point=point, n_failed=n_failed)
