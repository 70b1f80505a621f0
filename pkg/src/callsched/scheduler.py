"""The weekly call-attempt protocol shared by both trial arms.

A message cycle tries a user up to 3 times on its first day, then up to
2 times on each of the next 3 days, re-asking the policy for that day's
slot, and stops the moment any attempt is picked up. Whatever happens,
the next message goes out exactly a week after the first call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import policy as policy_mod
from .domain import CallLog, CallRecord, N_SLOTS

ATTEMPTS_PER_DAY = (3, 2, 2, 2)
MESSAGE_PERIOD_DAYS = 7

OutcomeSource = Callable[[object, int, int, int], bool]


@dataclass(frozen=True)
class AttemptPlan:
    """The realized attempt sequence of one message cycle."""

    user: object
    attempts: tuple[tuple[int, int, int], ...]  # (day, slot, retry)
    terminated_by_pickup: bool
    next_message_day: int
    records: tuple[CallRecord, ...]


def run_message_cycle(
    user,
    start_day: int,
    state: policy_mod.PolicyState,
    outcome_source: OutcomeSource,
    rng: np.random.Generator,
    phase: str | Callable[[int], str] = "baseline",
    arm: str = "treatment",
    last_day: int | None = None,
    freeze_slot: bool = False,
) -> tuple[AttemptPlan, policy_mod.PolicyState]:
    """Run one message cycle for one user, feeding every attempt back.

    The policy is consulted once per calendar day for that day's slot
    (``freeze_slot`` keeps day one's slot instead); same-day retries never
    change slot. Attempts after ``last_day`` are dropped, which truncates
    cycles at dropout or at the end of the trial window.
    """
    attempts: list[tuple[int, int, int]] = []
    records: list[CallRecord] = []
    picked_up = False
    first_slot: int | None = None
    for offset, max_attempts in enumerate(ATTEMPTS_PER_DAY):
        day = start_day + offset
        if last_day is not None and day > last_day:
            break
        if freeze_slot and first_slot is not None:
            slot = first_slot
        else:
            slot = policy_mod.recommend(state, user, day, rng)
        if first_slot is None:
            first_slot = slot
        for retry in range(max_attempts):
            picked = bool(outcome_source(user, slot, day, retry))
            record = CallRecord(
                user=user,
                slot=slot,
                day=day,
                retry=retry,
                attempted=True,
                picked=picked,
                phase=phase(day) if callable(phase) else phase,
                arm=arm,
            )
            records.append(record)
            attempts.append((day, slot, retry))
            state = policy_mod.update(state, record)
            if picked:
                picked_up = True
                break
        if picked_up:
            break
    plan = AttemptPlan(
        user=user,
        attempts=tuple(attempts),
        terminated_by_pickup=picked_up,
        next_message_day=start_day + MESSAGE_PERIOD_DAYS,
        records=tuple(records),
    )
    return plan, state


def unique_first_calls(log: CallLog) -> dict[int, int]:
    """Attempted first calls (retry 0) per slot, the numerator behind the
    call-recommendation distribution."""
    mask = log.attempted & (log.retries == 0)
    counts = np.bincount(log.slots[mask], minlength=N_SLOTS + 1)
    return {slot: int(counts[slot]) for slot in range(1, N_SLOTS + 1)}
