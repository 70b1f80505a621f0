"""Collaborative-bandit call scheduling: policies, simulator, analytics."""

from .analysis import (
    BootstrapResult,
    RateReport,
    TestResult,
    TierSplit,
    bootstrap_ci,
    call_distribution,
    did,
    is_value,
    pct_improvement,
    pooled_pr,
    slot_pr,
    t_test,
    tier_split,
    user_pr,
)
from .config import AnalysisParams, BootstrapParams, TrialConfig, load_trial_config
from .domain import (
    CallLog,
    CallRecord,
    DEFAULT_SLOT_TABLE,
    SlotTable,
    export_log,
    filter_active,
    ingest_log,
    split_by_phase,
)
from .matcomp import (
    CompletedMatrix,
    ObservationSet,
    complete,
    objective_value,
    observations_from_log,
    shrink_singular_values,
    tune_lambda,
)
from .policy import (
    CompletionParams,
    PolicyConfig,
    PolicyState,
    advance_phase,
    exploit_slots,
    fit_per_user_exploit,
    init_state,
    recommend,
    slot_probabilities,
    update,
)
from .report import build_report, render_text, validate_report
from .scheduler import AttemptPlan, run_message_cycle, unique_first_calls
from .simworld import World, WorldConfig, generate_world, run_trial, sample_outcome

__version__ = "0.1.0"

__all__ = [
    "AnalysisParams",
    "AttemptPlan",
    "BootstrapParams",
    "BootstrapResult",
    "CallLog",
    "CallRecord",
    "CompletedMatrix",
    "CompletionParams",
    "DEFAULT_SLOT_TABLE",
    "ObservationSet",
    "PolicyConfig",
    "PolicyState",
    "RateReport",
    "SlotTable",
    "TestResult",
    "TierSplit",
    "TrialConfig",
    "World",
    "WorldConfig",
    "advance_phase",
    "bootstrap_ci",
    "build_report",
    "call_distribution",
    "complete",
    "did",
    "exploit_slots",
    "export_log",
    "filter_active",
    "fit_per_user_exploit",
    "generate_world",
    "ingest_log",
    "init_state",
    "is_value",
    "load_trial_config",
    "objective_value",
    "observations_from_log",
    "pct_improvement",
    "pooled_pr",
    "recommend",
    "render_text",
    "run_message_cycle",
    "run_trial",
    "sample_outcome",
    "shrink_singular_values",
    "slot_pr",
    "slot_probabilities",
    "split_by_phase",
    "t_test",
    "tier_split",
    "tune_lambda",
    "unique_first_calls",
    "update",
    "user_pr",
    "validate_report",
]
