"""Shared fixture builders for the test suite."""

from __future__ import annotations

import numpy as np

from callsched.domain import (
    ARM_CONTROL,
    ARM_TREATMENT,
    CallLog,
    CallRecord,
    PHASE_BASELINE,
    PHASE_INTERVENTION,
)
from callsched.matcomp import ObservationSet


def rank_r_matrix(rng: np.random.Generator, m: int, n: int, r: int) -> np.ndarray:
    """Exact rank-r matrix with entries in (0, 1) and real spread."""
    u = rng.uniform(0.1, 1.0, (m, r))
    v = rng.uniform(0.1, 1.0, (n, r))
    p = u @ v.T
    p /= p.max() * rng.uniform(1.0, 1.3)
    return p


def observe(
    rng: np.random.Generator, truth: np.ndarray, fraction: float
) -> tuple[np.ndarray, ObservationSet]:
    """Uniformly sample a fraction of cells, with randomized recency days."""
    size = truth.size
    flat = rng.choice(size, size=round(fraction * size), replace=False)
    mask = np.zeros(truth.shape, dtype=bool)
    mask.flat[flat] = True
    cells = list(zip(*np.nonzero(mask)))
    days = rng.permutation(len(cells))
    entries = {
        (int(i), int(j)): (float(truth[i, j]), 1, int(day))
        for (i, j), day in zip(cells, days)
    }
    return mask, ObservationSet.from_entries(truth.shape, entries)


def record(
    user=0,
    slot=1,
    day=0,
    retry=0,
    attempted=True,
    picked=False,
    phase=PHASE_BASELINE,
    arm=ARM_TREATMENT,
) -> CallRecord:
    return CallRecord(
        user=user,
        slot=slot,
        day=day,
        retry=retry,
        attempted=attempted,
        picked=picked,
        phase=phase,
        arm=arm,
    )


def random_log(
    rng: np.random.Generator,
    n_users: int | None = None,
    n_days: int | None = None,
    baseline_days: int | None = None,
    pick_rate: float = 0.4,
    density: float = 0.12,
    dropout: dict | None = None,
) -> CallLog:
    """A random but invariant-satisfying log over a (user, slot, day, retry) grid.

    Users are split into arms by parity; phases follow the day cutoff, so
    the logs look like plausible trial output without using the simulator.
    """
    n_users = n_users if n_users is not None else int(rng.integers(2, 51))
    n_days = n_days if n_days is not None else int(rng.integers(2, 15))
    baseline_days = baseline_days if baseline_days is not None else n_days // 2
    records = []
    for user in range(n_users):
        for day in range(n_days):
            if rng.random() > density * 7:
                continue
            slot = int(rng.integers(1, 8))
            n_attempts = int(rng.integers(1, 4))
            for retry in range(n_attempts):
                picked = bool(rng.random() < pick_rate)
                records.append(
                    CallRecord(
                        user=user,
                        slot=slot,
                        day=day,
                        retry=retry,
                        attempted=True,
                        picked=picked,
                        phase=PHASE_BASELINE if day < baseline_days else PHASE_INTERVENTION,
                        arm=ARM_TREATMENT if user % 2 == 0 else ARM_CONTROL,
                    )
                )
                if picked:
                    break
    return CallLog(records, users=range(n_users), dropout_day=dropout)
