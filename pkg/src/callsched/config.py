"""Experiment configuration.

A trial is described by one nested YAML (or JSON) document; every constant
the method leaves open (regularization grid, temperature schedule, phase
lengths, bootstrap parameters, tie rules) is a named field here with the
library default, so a config file is a complete record of a run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .domain import ARM_CONTROL, ARM_TREATMENT
from .policy import CompletionParams, PolicyConfig
from .simworld import WorldConfig


class ConfigError(ValueError):
    """A config document is malformed; the message names the field."""


@dataclass(frozen=True)
class BootstrapParams:
    n_resamples: int = 2000
    level: float = 0.95

    def __post_init__(self) -> None:
        if self.n_resamples < 1:
            raise ConfigError("bootstrap.n_resamples must be >= 1")
        if not 0 < self.level < 1:
            raise ConfigError("bootstrap.level must be in (0, 1)")


@dataclass(frozen=True)
class AnalysisParams:
    ttest: str = "welch"
    is_call_set: str = "first"
    tier_tie_rule: str = "ascending_user_id"
    bootstrap: BootstrapParams = field(default_factory=BootstrapParams)

    def __post_init__(self) -> None:
        if self.ttest not in ("welch", "pooled"):
            raise ConfigError("analysis.ttest must be 'welch' or 'pooled'")
        if self.is_call_set not in ("first", "all"):
            raise ConfigError("analysis.is_call_set must be 'first' or 'all'")
        if self.tier_tie_rule != "ascending_user_id":
            raise ConfigError("analysis.tier_tie_rule supports only 'ascending_user_id'")


@dataclass(frozen=True)
class TrialConfig:
    """Full description of a simulated experiment."""

    world: WorldConfig
    arms: dict[str, PolicyConfig]
    baseline_days: int = 21
    intervention_days: int = 14
    n_seeds: int = 1
    seed: int = 0
    output_dir: str | None = None
    freeze_retry_slot: bool = False
    analysis: AnalysisParams = field(default_factory=AnalysisParams)

    def __post_init__(self) -> None:
        if self.baseline_days <= 0:
            raise ConfigError("baseline_days must be > 0")
        if self.intervention_days <= 0:
            raise ConfigError("intervention_days must be > 0")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if set(self.arms) != {ARM_TREATMENT, ARM_CONTROL}:
            raise ConfigError("arms must define exactly 'treatment' and 'control'")

    @property
    def total_days(self) -> int:
        return self.baseline_days + self.intervention_days


def default_trial_config() -> TrialConfig:
    """Field-trial-shaped defaults, scaled down to a single machine."""
    return TrialConfig(
        world=WorldConfig(n_users=4000, rank=3, noise_sd=0.02, base_rate=0.45, seed=0),
        arms={
            ARM_TREATMENT: PolicyConfig(kind="phased_mc"),
            ARM_CONTROL: PolicyConfig(kind="random"),
        },
        baseline_days=21,
        intervention_days=14,
        n_seeds=1,
        seed=0,
    )


def _build(cls, data: Mapping[str, Any], path: str, nested: Mapping[str, Any] | None = None):
    """Construct a dataclass from a mapping, rejecting unknown keys."""
    allowed = {f.name for f in fields(cls)}
    nested = nested or {}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key not in allowed:
            raise ConfigError(f"unknown field {path}.{key}")
        if key in nested:
            value = nested[key](value, f"{path}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path}: {exc}") from exc


def _parse_world(data: Mapping[str, Any], path: str) -> WorldConfig:
    return _build(WorldConfig, data, path)


def _parse_completion(data: Mapping[str, Any], path: str) -> CompletionParams:
    if "grid" in data:
        data = {**data, "grid": tuple(float(x) for x in data["grid"])}
    return _build(CompletionParams, data, path)


def _parse_policy(data: Mapping[str, Any], path: str) -> PolicyConfig:
    return _build(PolicyConfig, data, path, nested={"matcomp": _parse_completion})


def _parse_arms(data: Mapping[str, Any], path: str) -> dict[str, PolicyConfig]:
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path} must be a mapping of arm name to policy")
    return {name: _parse_policy(cfg, f"{path}.{name}") for name, cfg in data.items()}


def _parse_bootstrap(data: Mapping[str, Any], path: str) -> BootstrapParams:
    return _build(BootstrapParams, data, path)


def _parse_analysis(data: Mapping[str, Any], path: str) -> AnalysisParams:
    return _build(AnalysisParams, data, path, nested={"bootstrap": _parse_bootstrap})


def parse_trial_config(data: Mapping[str, Any]) -> TrialConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("config root must be a mapping")
    if "world" not in data:
        raise ConfigError("missing required field world")
    if "arms" not in data:
        raise ConfigError("missing required field arms")
    return _build(
        TrialConfig,
        data,
        "config",
        nested={
            "world": _parse_world,
            "arms": _parse_arms,
            "analysis": _parse_analysis,
        },
    )


def load_trial_config(path: str | Path) -> TrialConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_trial_config(data or {})


def config_to_dict(cfg: TrialConfig) -> dict[str, Any]:
    """Round-trippable plain-dict form, echoed into reports."""

    def world(w: WorldConfig) -> dict:
        return {
            "n_users": w.n_users,
            "rank": w.rank,
            "noise_sd": w.noise_sd,
            "base_rate": w.base_rate,
            "factor_spread": w.factor_spread,
            "dropout_rate_per_week": w.dropout_rate_per_week,
            "seed": w.seed,
        }

    def pol(p: PolicyConfig) -> dict:
        return {
            "kind": p.kind,
            "initial_phase_len": p.initial_phase_len,
            "phase_growth": p.phase_growth,
            "temperature": p.temperature,
            "temperature_decay": p.temperature_decay,
            "explore_days": p.explore_days,
            "matcomp": {
                "lam": p.matcomp.lam,
                "grid": list(p.matcomp.grid),
                "holdout_fraction": p.matcomp.holdout_fraction,
                "tol": p.matcomp.tol,
                "max_iter": p.matcomp.max_iter,
                "use_weights": p.matcomp.use_weights,
            },
        }

    return {
        "world": world(cfg.world),
        "arms": {name: pol(p) for name, p in sorted(cfg.arms.items())},
        "baseline_days": cfg.baseline_days,
        "intervention_days": cfg.intervention_days,
        "n_seeds": cfg.n_seeds,
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "freeze_retry_slot": cfg.freeze_retry_slot,
        "analysis": {
            "ttest": cfg.analysis.ttest,
            "is_call_set": cfg.analysis.is_call_set,
            "tier_tie_rule": cfg.analysis.tier_tie_rule,
            "bootstrap": {
                "n_resamples": cfg.analysis.bootstrap.n_resamples,
                "level": cfg.analysis.bootstrap.level,
            },
        },
    }
