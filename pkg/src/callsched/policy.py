"""Slot-selection policies.

Four interchangeable policies map (user, day, accumulated outcomes) to a
slot recommendation:

* random: uniform over the 7 slots (the control arm's behavior).
* phased_mc: periodically re-estimates the full pick-up matrix by low-rank
  completion and samples slots through a Boltzmann distribution whose
  temperature decays phase by phase.
* greedy_mc: uniform exploration for a fixed number of days, one completion,
  then pure argmax.
* per_user_exploit: each user's own empirically best slot, ignoring everyone
  else; the deterministic target used for off-policy evaluation.

State transitions are pure: ``update`` and ``advance_phase`` return new
states and never mutate their inputs.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import matcomp
from .domain import CallLog, CallRecord, N_SLOTS

RANDOM = "random"
PHASED_MC = "phased_mc"
GREEDY_MC = "greedy_mc"
PER_USER_EXPLOIT = "per_user_exploit"
POLICY_KINDS = (RANDOM, PHASED_MC, GREEDY_MC, PER_USER_EXPLOIT)


@dataclass(frozen=True)
class CompletionParams:
    """Solver settings used when a policy re-estimates its matrix.

    ``lam`` fixes the regularization weight; None means tune it on the
    first re-estimate (20% recency holdout) and reuse the tuned value in
    later phases. ``use_weights`` pools repeated observations into
    count-weighted means; with False every observed cell counts once,
    matching the unweighted objective exactly.
    """

    lam: float | None = None
    grid: tuple[float, ...] = (0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0)
    holdout_fraction: float = 0.2
    tol: float = 1e-6
    max_iter: int = 500
    use_weights: bool = True


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = RANDOM
    initial_phase_len: int | None = None  # None: resolved to one call per user
    phase_growth: float = 2.0
    temperature: float = 0.2
    temperature_decay: float = 0.8
    explore_days: int = 0  # greedy_mc only
    matcomp: CompletionParams = field(default_factory=CompletionParams)

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.initial_phase_len is not None and self.initial_phase_len <= 0:
            raise ValueError("initial_phase_len must be positive")
        if self.phase_growth < 1:
            raise ValueError("phase_growth must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.temperature_decay <= 1:
            raise ValueError("temperature_decay must be in (0, 1]")
        if self.explore_days < 0:
            raise ValueError("explore_days must be >= 0")


@dataclass(frozen=True)
class PolicyState:
    """A policy's accumulated knowledge.

    ``estimate`` holds pick-up probabilities in [0, 1]; ``observations``
    pools every fed-back outcome; ``phase_index``/``phase_budget``/
    ``temperature`` drive the phased schedule. ``user_rows`` maps external
    user ids to matrix rows; None means users already are row indices.
    """

    kind: str
    estimate: np.ndarray
    observations: matcomp.ObservationSet
    phase_index: int = 0
    phase_budget: int = 0
    temperature: float = 1.0
    rng_seed: int | None = None
    explore_days: int = 0
    last_lambda: float | None = None
    last_fit_converged: bool = True
    user_rows: dict | None = None

    @property
    def n_users(self) -> int:
        return self.estimate.shape[0]

    def row_of(self, user) -> int:
        row = self.user_rows[user] if self.user_rows is not None else user
        if not 0 <= row < self.n_users:
            raise IndexError(f"user {user!r} outside the {self.n_users}-row matrix")
        return row


def init_state(
    config: PolicyConfig,
    n_users: int,
    rng_seed: int | None = None,
    user_rows: dict | None = None,
) -> PolicyState:
    """Fresh state: flat 0.5 estimate (Boltzmann over it is uniform), no data."""
    budget = config.initial_phase_len if config.initial_phase_len is not None else n_users
    return PolicyState(
        kind=config.kind,
        estimate=np.full((n_users, N_SLOTS), 0.5),
        observations=matcomp.ObservationSet.empty((n_users, N_SLOTS)),
        phase_index=0,
        phase_budget=budget,
        temperature=config.temperature,
        rng_seed=rng_seed,
        explore_days=config.explore_days,
        user_rows=dict(user_rows) if user_rows is not None else None,
    )


def slot_probabilities(state: PolicyState, user) -> np.ndarray:
    """The recommendation distribution over slots 1..7 for one user."""
    row = state.estimate[state.row_of(user)]
    if state.kind == RANDOM:
        return np.full(N_SLOTS, 1.0 / N_SLOTS)
    if state.kind == PHASED_MC:
        scaled = (row - row.max()) / state.temperature
        weights = np.exp(scaled)
        return weights / weights.sum()
    # greedy_mc past exploration and per_user_exploit are deterministic
    probs = np.zeros(N_SLOTS)
    probs[int(np.argmax(row))] = 1.0
    return probs


def recommend(state: PolicyState, user, day: int, rng: np.random.Generator) -> int:
    """Pick a slot id in 1..7 for this user on this day."""
    if state.kind == RANDOM:
        return int(rng.integers(1, N_SLOTS + 1))
    if state.kind == GREEDY_MC and day < state.explore_days:
        return int(rng.integers(1, N_SLOTS + 1))
    if state.kind == PHASED_MC:
        probs = slot_probabilities(state, user)
        return int(rng.choice(N_SLOTS, p=probs)) + 1
    # deterministic argmax; ties resolve to the lowest slot id
    row = state.estimate[state.row_of(user)]
    return int(np.argmax(row)) + 1


def update(state: PolicyState, record: CallRecord) -> PolicyState:
    """Pool one attempted call's outcome into the state.

    The phase budget counts first calls only; same-day retries feed the
    observations without consuming budget.
    """
    if not record.attempted:
        raise ValueError("update requires an attempted call")
    row = state.row_of(record.user)
    obs = state.observations.add_outcome(row, record.slot - 1, float(record.picked), record.day)
    budget = state.phase_budget
    if record.retry == 0 and budget > 0:
        budget -= 1
    return dataclasses.replace(state, observations=obs, phase_budget=budget)


def advance_phase(state: PolicyState, config: PolicyConfig) -> PolicyState:
    """Close a phase: re-complete the matrix, grow the budget, cool the sampler.

    Requires the current budget to be spent. On solver failure the incoming
    state is returned unchanged apart from a cleared convergence flag.
    """
    if state.phase_budget != 0:
        raise ValueError(f"phase budget not exhausted ({state.phase_budget} calls left)")
    params = config.matcomp
    try:
        lam = params.lam if params.lam is not None else state.last_lambda
        if lam is None:
            lam, _ = matcomp.tune_lambda(
                state.observations,
                params.grid,
                holdout_fraction=params.holdout_fraction,
                tol=params.tol,
                max_iter=params.max_iter,
                use_weights=params.use_weights,
            )
        fit = matcomp.complete(
            state.observations,
            lam,
            tol=params.tol,
            max_iter=params.max_iter,
            use_weights=params.use_weights,
        )
    except (ValueError, matcomp.TuningError):
        return dataclasses.replace(state, last_fit_converged=False)

    next_index = state.phase_index + 1
    initial = config.initial_phase_len if config.initial_phase_len is not None else state.n_users
    return dataclasses.replace(
        state,
        estimate=np.clip(fit.values, 0.0, 1.0),
        phase_index=next_index,
        phase_budget=int(round(initial * config.phase_growth**next_index)),
        temperature=config.temperature * config.temperature_decay**next_index,
        last_lambda=lam,
        last_fit_converged=fit.converged,
    )


def maybe_advance(state: PolicyState, config: PolicyConfig, day: int) -> PolicyState:
    """Advance when the policy's own trigger fires; otherwise pass through.

    phased_mc re-estimates whenever its budget is spent; greedy_mc does its
    single completion once the exploration window ends.
    """
    if state.kind == PHASED_MC and state.phase_budget == 0:
        return advance_phase(state, config)
    if state.kind == GREEDY_MC and state.phase_index == 0 and day >= state.explore_days:
        return advance_phase(dataclasses.replace(state, phase_budget=0), config)
    return state


def fit_per_user_exploit(baseline_log: CallLog) -> PolicyState:
    """Fit the deterministic exploit policy from a baseline log.

    Each user gets probability 1 on their highest empirical pick-up-rate
    slot. Unattempted slots count as rate 0, so ties (including users with
    no picks at all) resolve to the lowest slot id, and users with no
    baseline attempts land on slot 1.
    """
    obs = matcomp.observations_from_log(baseline_log)
    estimate = np.where(obs.mask, obs.values, 0.0)
    user_rows = {user: i for i, user in enumerate(baseline_log.user_table)}
    return PolicyState(
        kind=PER_USER_EXPLOIT,
        estimate=estimate,
        observations=obs,
        phase_index=0,
        phase_budget=0,
        temperature=1.0,
        user_rows=user_rows,
    )


def exploit_slots(state: PolicyState) -> dict:
    """user id -> deterministic slot choice, for off-policy weighting."""
    best = np.argmax(state.estimate, axis=1) + 1
    if state.user_rows is None:
        return {user: int(best[user]) for user in range(state.n_users)}
    return {user: int(best[row]) for user, row in state.user_rows.items()}


def write_state_snapshot(state: PolicyState, prefix: str) -> list[Path]:
    """Dump a state as <prefix>_estimate.csv plus a one-row header record."""
    estimate_path = Path(f"{prefix}_estimate.csv")
    matcomp.write_matrix_csv(state.estimate, estimate_path)
    header_path = Path(f"{prefix}_state.csv")
    with header_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "phase_index", "phase_budget", "temperature", "last_lambda"])
        writer.writerow(
            [
                state.kind,
                state.phase_index,
                state.phase_budget,
                repr(state.temperature),
                "" if state.last_lambda is None else repr(state.last_lambda),
            ]
        )
    return [estimate_path, header_path]
