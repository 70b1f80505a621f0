"""Synthetic beneficiary populations and two-arm trial execution.

Worlds carry an approximately low-rank users x slots matrix of true
pick-up probabilities. Trials mirror the field protocol: a baseline of
uniform-random calling for both arms, then an intervention period where
the treatment arm switches to its configured policy while control stays
random, all through the same weekly 3-2-2-2 retry protocol.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from . import policy as policy_mod
from . import scheduler
from .domain import (
    ARM_CONTROL,
    ARM_TREATMENT,
    CallLog,
    CallRecord,
    N_SLOTS,
    PHASE_BASELINE,
    PHASE_INTERVENTION,
)

if TYPE_CHECKING:
    from .config import TrialConfig


@dataclass(frozen=True)
class WorldConfig:
    """Generation parameters for a synthetic population."""

    n_users: int
    rank: int = 3
    noise_sd: float = 0.02
    base_rate: float = 0.45
    factor_spread: float = 0.18
    dropout_rate_per_week: float = 0.0
    seed: int = 0
    n_slots: int = N_SLOTS

    def __post_init__(self) -> None:
        if self.n_users <= 0:
            raise ValueError("n_users must be positive")
        if self.n_slots != N_SLOTS:
            raise ValueError(f"n_slots is fixed at {N_SLOTS}")
        if not 1 <= self.rank <= min(self.n_users, N_SLOTS):
            raise ValueError("rank must be in [1, min(n_users, n_slots)]")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if not 0 <= self.base_rate <= 1:
            raise ValueError("base_rate must be in [0, 1]")
        if not 0 <= self.dropout_rate_per_week < 1:
            raise ValueError("dropout_rate_per_week must be in [0, 1)")


@dataclass(frozen=True)
class World:
    """Ground truth for a simulation: the probability matrix and dropouts.

    The generating factors are kept so tests can verify the low-rank
    structure without regenerating.
    """

    truth: np.ndarray
    dropout_day: dict[int, int]
    factors: tuple[np.ndarray, np.ndarray]

    @property
    def n_users(self) -> int:
        return self.truth.shape[0]

    def active_on(self, user: int, day: int) -> bool:
        dropout = self.dropout_day.get(user)
        return dropout is None or day < dropout


def generate_world(config: WorldConfig) -> World:
    """Sample a world: clip(base + U V' + noise, 0, 1) with a rank-limited
    signal whose entrywise spread is ``factor_spread``; dropout weeks are
    geometric."""
    rng = np.random.default_rng(config.seed)
    # entry variance of U V' with iid N(0, s^2) factors is rank * s^4
    s = np.sqrt(config.factor_spread) / config.rank**0.25
    u = rng.normal(0.0, s, size=(config.n_users, config.rank))
    v = rng.normal(0.0, s, size=(N_SLOTS, config.rank))
    signal = u @ v.T
    noise = rng.normal(0.0, config.noise_sd, size=signal.shape) if config.noise_sd > 0 else 0.0
    truth = np.clip(config.base_rate + signal + noise, 0.0, 1.0)
    dropout: dict[int, int] = {}
    if config.dropout_rate_per_week > 0:
        weeks = rng.geometric(config.dropout_rate_per_week, size=config.n_users)
        dropout = {user: int(weeks[user]) * 7 for user in range(config.n_users)}
    return World(truth=truth, dropout_day=dropout, factors=(u, v))


def sample_outcome(world: World, user: int, slot: int, day: int, rng: np.random.Generator) -> bool:
    """One Bernoulli pick-up draw; querying a dropped-out user is an error."""
    if not world.active_on(user, day):
        raise ValueError(f"user {user} dropped out on day {world.dropout_day[user]}")
    return bool(rng.random() < world.truth[user, slot - 1])


def assign_arms(n_users: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """50/50 randomization; treatment gets the extra user when n is odd."""
    perm = rng.permutation(n_users)
    n_treat = n_users - n_users // 2
    return np.sort(perm[:n_treat]), np.sort(perm[n_treat:])


def run_trial(world: World, trial: TrialConfig, seed: int) -> CallLog:
    """Execute one seeded two-arm trial and return the labeled call log.

    Weeks tick in lockstep: every active user gets one message cycle per
    week, users processed in ascending id order so the single random
    stream makes the whole log reproducible. At the baseline/intervention
    boundary the treatment policy re-estimates from the pooled baseline
    outcomes; afterwards phased policies keep re-estimating on their own
    schedule.
    """
    n = world.n_users
    total_days = trial.baseline_days + trial.intervention_days
    rng = np.random.default_rng(seed)
    treat_users, control_users = assign_arms(n, rng)
    arm_name = {}
    for u in treat_users:
        arm_name[int(u)] = ARM_TREATMENT
    for u in control_users:
        arm_name[int(u)] = ARM_CONTROL

    configs = {
        ARM_TREATMENT: _resolve_policy(trial.arms[ARM_TREATMENT], trial),
        ARM_CONTROL: _resolve_policy(trial.arms[ARM_CONTROL], trial),
    }
    rows = {
        ARM_TREATMENT: {int(u): i for i, u in enumerate(treat_users)},
        ARM_CONTROL: {int(u): i for i, u in enumerate(control_users)},
    }
    states = {
        arm: policy_mod.init_state(cfg, len(rows[arm]), rng_seed=seed, user_rows=rows[arm])
        for arm, cfg in configs.items()
    }

    def outcome(user, slot, day, retry):
        return sample_outcome(world, user, slot, day, rng)

    def phase_of(day: int) -> str:
        return PHASE_BASELINE if day < trial.baseline_days else PHASE_INTERVENTION

    records: list[CallRecord] = []
    in_intervention = False
    for start in range(0, total_days, scheduler.MESSAGE_PERIOD_DAYS):
        if start >= trial.baseline_days and not in_intervention:
            in_intervention = True
            for arm in (ARM_TREATMENT, ARM_CONTROL):
                states[arm] = _enter_intervention(states[arm], configs[arm], start)
        if in_intervention:
            for arm in (ARM_TREATMENT, ARM_CONTROL):
                states[arm] = policy_mod.maybe_advance(states[arm], configs[arm], start)
        for user in range(n):
            dropout = world.dropout_day.get(user)
            if dropout is not None and start >= dropout:
                continue
            arm = arm_name[user]
            state = states[arm]
            if not in_intervention and state.kind != policy_mod.RANDOM:
                # baseline: both arms call uniformly at random
                cycle_state = dataclasses.replace(state, kind=policy_mod.RANDOM)
            else:
                cycle_state = state
            last_day = total_days - 1
            if dropout is not None:
                last_day = min(last_day, dropout - 1)
            plan, cycle_state = scheduler.run_message_cycle(
                user,
                start,
                cycle_state,
                outcome,
                rng,
                phase=phase_of,
                arm=arm,
                last_day=last_day,
                freeze_slot=trial.freeze_retry_slot,
            )
            states[arm] = dataclasses.replace(cycle_state, kind=state.kind)
            records.extend(plan.records)

    dropout_map = {u: d for u, d in world.dropout_day.items()}
    return CallLog(records, users=range(n), dropout_day=dropout_map)


def write_world(world: World, out_dir: str | Path) -> list[Path]:
    """Dump the truth matrix and its generating factors as CSVs."""
    from .matcomp import write_matrix_csv

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    truth_path = out_dir / "truth.csv"
    write_matrix_csv(world.truth, truth_path)
    paths = [truth_path]
    for name, values in (
        ("factor_users.csv", world.factors[0]),
        ("factor_slots.csv", world.factors[1]),
    ):
        path = out_dir / name
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"factor_{k}" for k in range(values.shape[1])])
            for row in values:
                writer.writerow([repr(float(x)) for x in row])
        paths.append(path)
    return paths


def _resolve_policy(config: policy_mod.PolicyConfig, trial: TrialConfig) -> policy_mod.PolicyConfig:
    """Fill trial-dependent defaults: greedy exploration spans the baseline."""
    if config.kind == policy_mod.GREEDY_MC and config.explore_days == 0:
        return dataclasses.replace(config, explore_days=trial.baseline_days)
    return config


def _enter_intervention(
    state: policy_mod.PolicyState, config: policy_mod.PolicyConfig, day: int
) -> policy_mod.PolicyState:
    """Switch a policy from baseline data collection to its learned behavior."""
    if state.kind == policy_mod.PHASED_MC:
        return policy_mod.advance_phase(
            dataclasses.replace(state, phase_budget=0), config
        )
    if state.kind == policy_mod.PER_USER_EXPLOIT:
        obs = state.observations
        return dataclasses.replace(state, estimate=np.where(obs.mask, obs.values, 0.0))
    # greedy_mc completes via maybe_advance once its exploration window ends
    return state
