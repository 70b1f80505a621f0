"""Report assembly and serialization.

``build_report`` turns one call log into a single structured document
covering the full trial analysis: pooled rates by phase and arm, tiered rates,
slot-wise rates with significance and difference-in-differences, the
first-call distribution, and the off-policy value of the per-user exploit
heuristic. The document serializes to JSON (validated against the schema
shipped with the package), a plain-text table view, and CSV extracts.
"""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import analysis
from .config import AnalysisParams
from .domain import (
    ARM_CONTROL,
    ARM_TREATMENT,
    ARMS,
    CallLog,
    PHASE_BASELINE,
    PHASE_INTERVENTION,
    PHASES,
    SLOT_IDS,
    filter_active,
    split_by_phase,
)
from .policy import exploit_slots, fit_per_user_exploit

SCHEMA_VERSION = 1


def _round(x: float | None, digits: int = 10) -> float | None:
    """Stabilize JSON floats without losing analysis precision."""
    return None if x is None else round(float(x), digits)


def _arm_phase_block(log: CallLog) -> dict[str, Any] | None:
    if len(log) == 0 or not log.attempted.any():
        return None
    per_user, user_avg = analysis.user_pr(log)
    return {
        "attempts": int(log.attempted.sum()),
        "picks": int(log.picked.sum()),
        "pooled_pr": _round(analysis.pooled_pr(log)),
        "user_avg_pr": _round(user_avg),
        "n_users": len(per_user),
    }


def _phase_section(phase_log: CallLog, params: AnalysisParams) -> dict[str, Any] | None:
    if len(phase_log) == 0:
        return None
    arms = {arm: phase_log.for_arm(arm) for arm in ARMS}
    blocks = {arm: _arm_phase_block(arms[arm]) for arm in ARMS}
    p_value = None
    statistic = None
    if blocks[ARM_TREATMENT] and blocks[ARM_CONTROL]:
        test = analysis.t_test(
            analysis.attempted_outcomes(arms[ARM_TREATMENT]),
            analysis.attempted_outcomes(arms[ARM_CONTROL]),
            equal_var=params.ttest == "pooled",
        )
        p_value = _round(test.p_value)
        statistic = _round(test.statistic)
    return {
        "treatment": blocks[ARM_TREATMENT],
        "control": blocks[ARM_CONTROL],
        "p_value": p_value,
        "statistic": statistic,
    }


def _tier_section(intervention: CallLog, params: AnalysisParams) -> dict[str, Any] | None:
    arms = {arm: intervention.for_arm(arm) for arm in ARMS}
    if any(len(arm_log) == 0 or not arm_log.attempted.any() for arm_log in arms.values()):
        return None
    rates = {arm: analysis.user_pr(arms[arm])[0] for arm in ARMS}
    try:
        split_t, split_c = analysis.tier_split(rates[ARM_TREATMENT], rates[ARM_CONTROL])
    except ValueError:
        return None
    splits = {ARM_TREATMENT: split_t, ARM_CONTROL: split_c}
    rows = []
    for tier in ("high", "mid", "low"):
        tier_logs = {}
        for arm in ARMS:
            members = getattr(splits[arm], tier)
            codes = [i for i, u in enumerate(arms[arm].user_table) if u in members]
            mask = np.isin(arms[arm].user_codes, codes)
            tier_logs[arm] = arms[arm].subset(mask)
        row: dict[str, Any] = {"tier": tier}
        outcomes = {}
        for arm in ARMS:
            tlog = tier_logs[arm]
            attempts = int(tlog.attempted.sum()) if len(tlog) else 0
            row[f"{arm}_calls"] = attempts
            row[f"{arm}_pr"] = _round(analysis.pooled_pr(tlog)) if attempts else None
            outcomes[arm] = analysis.attempted_outcomes(tlog) if attempts else None
        if row[f"{ARM_TREATMENT}_pr"] is not None and row[f"{ARM_CONTROL}_pr"] is not None:
            row["pct_improvement"] = _round(
                analysis.pct_improvement(row[f"{ARM_TREATMENT}_pr"], row[f"{ARM_CONTROL}_pr"])
            )
        else:
            row["pct_improvement"] = None
        if (
            outcomes[ARM_TREATMENT] is not None
            and outcomes[ARM_CONTROL] is not None
            and len(outcomes[ARM_TREATMENT]) >= 2
            and len(outcomes[ARM_CONTROL]) >= 2
        ):
            test = analysis.t_test(
                outcomes[ARM_TREATMENT],
                outcomes[ARM_CONTROL],
                equal_var=params.ttest == "pooled",
            )
            row["p_value"] = _round(test.p_value)
        else:
            row["p_value"] = None
        rows.append(row)
    return {
        "top_fraction": _round(split_t.top_fraction),
        "bottom_fraction": _round(split_t.bottom_fraction),
        "rows": rows,
    }


def _slot_rows(phase_log: CallLog | None, params: AnalysisParams) -> list[dict[str, Any]] | None:
    if phase_log is None or len(phase_log) == 0:
        return None
    arms = {arm: phase_log.for_arm(arm) for arm in ARMS}
    rates = {arm: analysis.slot_pr(arms[arm]) if len(arms[arm]) else {} for arm in ARMS}
    rows = []
    for slot in SLOT_IDS:
        t_rate = rates[ARM_TREATMENT].get(slot)
        c_rate = rates[ARM_CONTROL].get(slot)
        row: dict[str, Any] = {
            "slot": slot,
            "treatment_pr": _round(t_rate),
            "control_pr": _round(c_rate),
            "pct_improvement": (
                _round(analysis.pct_improvement(t_rate, c_rate))
                if t_rate is not None and c_rate is not None
                else None
            ),
        }
        p_value = None
        if t_rate is not None and c_rate is not None:
            x1 = analysis.slot_outcomes(arms[ARM_TREATMENT], slot)
            x2 = analysis.slot_outcomes(arms[ARM_CONTROL], slot)
            if len(x1) >= 2 and len(x2) >= 2:
                test = analysis.t_test(x1, x2, equal_var=params.ttest == "pooled")
                p_value = _round(test.p_value)
        row["p_value"] = p_value
        rows.append(row)
    return rows


def _slot_did(
    base_rows: list[dict[str, Any]] | None, int_rows: list[dict[str, Any]] | None
) -> dict[str, float | None] | None:
    if base_rows is None or int_rows is None:
        return None
    base = {row["slot"]: row for row in base_rows}
    out: dict[str, float | None] = {}
    for row in int_rows:
        slot = row["slot"]
        b = base.get(slot, {})
        values = (b.get("treatment_pr"), row["treatment_pr"], b.get("control_pr"), row["control_pr"])
        if any(v is None for v in values):
            out[str(slot)] = None
        else:
            out[str(slot)] = _round(analysis.did(values[0], values[1], values[2], values[3]))
    return out


def _distribution_section(phase_log: CallLog | None) -> dict[str, Any] | None:
    if phase_log is None or len(phase_log) == 0:
        return None
    section: dict[str, Any] = {}
    for arm in ARMS:
        arm_log = phase_log.for_arm(arm)
        try:
            dist = analysis.call_distribution(arm_log)
        except ValueError:
            section[arm] = None
            continue
        section[arm] = {str(slot): _round(dist[slot]) for slot in SLOT_IDS}
    return section


def _off_policy_section(
    baseline: CallLog, intervention: CallLog, params: AnalysisParams, seed: int
) -> dict[str, Any] | None:
    base_ctl = baseline.for_arm(ARM_CONTROL)
    int_ctl = intervention.for_arm(ARM_CONTROL)
    if len(base_ctl) == 0 or len(int_ctl) == 0:
        return None
    target = exploit_slots(fit_per_user_exploit(base_ctl))
    known = set(target)
    mask = np.isin(int_ctl.user_codes, [i for i, u in enumerate(int_ctl.user_table) if u in known])
    evaluable = int_ctl.subset(mask)
    if len(evaluable) == 0 or not evaluable.attempted.any():
        return None

    point = analysis.is_value(evaluable, target_slots=target, call_set=params.is_call_set)
    ci_low, ci_high = bootstrap_is_value(evaluable, target, params, seed)
    call_mask = evaluable.attempted.copy()
    if params.is_call_set == "first":
        call_mask &= evaluable.retries == 0
    return {
        "arm": ARM_CONTROL,
        "behavior": "uniform",
        "call_set": params.is_call_set,
        "n_calls": int(call_mask.sum()),
        "v_q": _round(point),
        "ci_low": _round(ci_low),
        "ci_high": _round(ci_high),
        "n_resamples": params.bootstrap.n_resamples,
        "level": params.bootstrap.level,
        "empirical_pooled_pr": _round(analysis.pooled_pr(evaluable)),
    }


def bootstrap_is_value(
    log: CallLog, target: dict, params: AnalysisParams, seed: int
) -> tuple[float, float]:
    """User-level bootstrap of the IS value. Resampling relabels drawn users
    by position, so each resample rebuilds the target map from the draw."""
    users = log.user_table
    rng = np.random.default_rng(seed)
    m = len(users)
    rows_by_code = [np.flatnonzero(log.user_codes == c) for c in range(m)]
    lengths = np.array([r.size for r in rows_by_code])
    values = []
    for _ in range(params.bootstrap.n_resamples):
        draw = rng.integers(0, m, size=m)
        idx = np.concatenate([rows_by_code[c] for c in draw])
        codes = np.repeat(np.arange(m, dtype=np.int32), lengths[draw])
        resample = CallLog._trusted(
            tuple(range(m)),
            codes,
            log.slots[idx],
            log.days[idx],
            log.retries[idx],
            log.attempted[idx],
            log.picked[idx],
            log.phase_codes[idx],
            log.arm_codes[idx],
        )
        target_map = {i: target[users[c]] for i, c in enumerate(draw)}
        try:
            values.append(
                analysis.is_value(resample, target_slots=target_map, call_set=params.is_call_set)
            )
        except ValueError:
            continue
    if not values:
        return (None, None)
    alpha = (1.0 - params.bootstrap.level) / 2.0
    low, high = np.quantile(values, [alpha, 1.0 - alpha])
    return float(low), float(high)


def build_report(
    log: CallLog,
    baseline_days: int,
    params: AnalysisParams | None = None,
    seed: int = 0,
) -> dict[str, Any]:
    """Compute the full analysis document for one call log.

    The log is first restricted to users who stayed through the trial,
    then split into phases by day index. Sections whose inputs are missing
    (an empty phase, an absent arm) come out as null rather than zeros.
    """
    params = params or AnalysisParams()
    active = filter_active(log)
    baseline, intervention = split_by_phase(active, baseline_days)

    base_section = _phase_section(baseline, params)
    int_section = _phase_section(intervention, params)

    overall_did = None
    if base_section and int_section:
        cells = (
            base_section["treatment"],
            int_section["treatment"],
            base_section["control"],
            int_section["control"],
        )
        if all(cells):
            overall_did = _round(
                analysis.did(
                    cells[0]["pooled_pr"],
                    cells[1]["pooled_pr"],
                    cells[2]["pooled_pr"],
                    cells[3]["pooled_pr"],
                )
            )

    base_slot_rows = _slot_rows(baseline if len(baseline) else None, params)
    int_slot_rows = _slot_rows(intervention if len(intervention) else None, params)

    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "analysis_report",
        "baseline_days": baseline_days,
        "n_records": len(active),
        "n_users": len(active.users),
        "n_dropped_users": len(log.users) - len(active.users),
        "overall": {
            "baseline": base_section,
            "intervention": int_section,
            "did": overall_did,
        },
        "tiers": _tier_section(intervention, params) if len(intervention) else None,
        "slots": {
            "baseline": base_slot_rows,
            "intervention": int_slot_rows,
            "did": _slot_did(base_slot_rows, int_slot_rows),
        },
        "call_distribution": {
            "baseline": _distribution_section(baseline if len(baseline) else None),
            "intervention": _distribution_section(intervention if len(intervention) else None),
        },
        "off_policy": (
            _off_policy_section(baseline, intervention, params, seed)
            if len(baseline) and len(intervention)
            else None
        ),
    }


def combine_reports(
    config_echo: dict[str, Any], per_seed: list[tuple[int, dict[str, Any]]]
) -> dict[str, Any]:
    """Wrap per-seed analysis reports with cross-seed aggregates."""

    def series(picker) -> list[float | None]:
        return [picker(rep) for _, rep in per_seed]

    def int_pr(arm: str):
        def pick(rep):
            sec = rep["overall"]["intervention"]
            return None if sec is None or sec[arm] is None else sec[arm]["pooled_pr"]

        return pick

    treatment = series(int_pr(ARM_TREATMENT))
    control = series(int_pr(ARM_CONTROL))
    diffs = [
        t - c for t, c in zip(treatment, control) if t is not None and c is not None
    ]
    aggregate: dict[str, Any] = {
        "n_seeds": len(per_seed),
        "treatment_intervention_pr": _summary(treatment),
        "control_intervention_pr": _summary(control),
        "seeds_treatment_above_control": sum(1 for d in diffs if d > 0),
        "mean_difference": _round(float(np.mean(diffs))) if diffs else None,
    }
    if len(diffs) >= 2 and float(np.std(diffs, ddof=1)) > 0:
        from scipy import stats as scipy_stats

        t_stat, p = scipy_stats.ttest_1samp(diffs, 0.0)
        aggregate["paired_t_statistic"] = _round(float(t_stat))
        aggregate["paired_p_value"] = _round(float(p))
    else:
        aggregate["paired_t_statistic"] = None
        aggregate["paired_p_value"] = None
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "simulation_report",
        "config": config_echo,
        "per_seed": [{"seed": seed, "report": rep} for seed, rep in per_seed],
        "aggregate": aggregate,
    }


def _summary(values: list[float | None]) -> dict[str, Any]:
    present = [v for v in values if v is not None]
    return {
        "mean": _round(float(np.mean(present))) if present else None,
        "values": [_round(v) for v in values],
    }


def load_schema() -> dict[str, Any]:
    with resources.files("callsched").joinpath("report_schema.json").open(
        "r", encoding="utf-8"
    ) as fh:
        return json.load(fh)


def validate_report(report: dict[str, Any]) -> None:
    jsonschema.validate(report, load_schema())


def report_to_json(report: dict[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _fmt(value, width: int = 10, digits: int = 4) -> str:
    if value is None:
        return "-".rjust(width)
    if isinstance(value, float):
        if value != 0 and abs(value) < 10 ** (-digits):
            return f"{value:.2e}".rjust(width)
        return f"{value:.{digits}f}".rjust(width)
    return str(value).rjust(width)


def render_text(report: dict[str, Any]) -> str:
    """Human-readable table view of an analysis report."""
    lines: list[str] = []
    add = lines.append
    add("pooled pick-up rates")
    add(f"{'phase':<14}{'treatment':>10}{'control':>10}{'p-value':>12}")
    for phase in PHASES:
        sec = report["overall"][phase]
        if sec is None:
            add(f"{phase:<14}{'-':>10}{'-':>10}{'-':>12}")
            continue
        t = sec["treatment"]["pooled_pr"] if sec["treatment"] else None
        c = sec["control"]["pooled_pr"] if sec["control"] else None
        add(f"{phase:<14}{_fmt(t)}{_fmt(c)}{_fmt(sec['p_value'], 12)}")
    add(f"overall DiD: {_fmt(report['overall']['did'], 10).strip()}")
    add("")

    tiers = report.get("tiers")
    if tiers:
        add(
            f"tiers (top {100 * tiers['top_fraction']:.2f}% / "
            f"bottom {100 * tiers['bottom_fraction']:.2f}% removed to high/low)"
        )
        add(
            f"{'tier':<6}{'t calls':>9}{'c calls':>9}{'t rate':>10}{'c rate':>10}"
            f"{'% improv':>10}{'p-value':>12}"
        )
        for row in tiers["rows"]:
            add(
                f"{row['tier']:<6}{row['treatment_calls']:>9}{row['control_calls']:>9}"
                f"{_fmt(row['treatment_pr'])}{_fmt(row['control_pr'])}"
                f"{_fmt(row['pct_improvement'], 10, 2)}{_fmt(row['p_value'], 12)}"
            )
        add("")

    for phase in (PHASE_INTERVENTION, PHASE_BASELINE):
        rows = report["slots"][phase]
        if not rows:
            continue
        did_col = report["slots"]["did"] if phase == PHASE_BASELINE else None
        add(f"slot rates ({phase})")
        header = f"{'slot':<6}{'treatment':>10}{'control':>10}{'% improv':>10}{'p-value':>12}"
        if did_col:
            header += f"{'DiD':>10}"
        add(header)
        for row in rows:
            line = (
                f"{row['slot']:<6}{_fmt(row['treatment_pr'])}{_fmt(row['control_pr'])}"
                f"{_fmt(row['pct_improvement'], 10, 2)}{_fmt(row['p_value'], 12)}"
            )
            if did_col:
                line += _fmt(did_col.get(str(row["slot"])), 10)
            add(line)
        add("")

    off = report.get("off_policy")
    if off:
        add("off-policy evaluation (per-user exploit target, uniform behavior)")
        add(
            f"V_q = {_fmt(off['v_q'], 8).strip()}  "
            f"[{_fmt(off['ci_low'], 8).strip()}, {_fmt(off['ci_high'], 8).strip()}]  "
            f"vs empirical {_fmt(off['empirical_pooled_pr'], 8).strip()} "
            f"on {off['n_calls']} calls"
        )
        add("")
    return "\n".join(lines)


def render_simulation_summary(combined: dict[str, Any]) -> str:
    """Compact per-seed summary printed by the simulate command."""

    def cell(rep: dict[str, Any], phase: str, arm: str) -> float | None:
        sec = rep["overall"][phase]
        if sec is None or sec[arm] is None:
            return None
        return sec[arm]["pooled_pr"]

    def mid(rep: dict[str, Any], field: str) -> float | None:
        tiers = rep.get("tiers")
        if not tiers:
            return None
        for row in tiers["rows"]:
            if row["tier"] == "mid":
                return row[field]
        return None

    lines = [
        f"{'seed':>6}{'t_base':>9}{'c_base':>9}{'p_base':>11}"
        f"{'t_int':>9}{'c_int':>9}{'p_int':>11}{'mid_t':>9}{'mid_c':>9}{'mid_p':>11}"
    ]
    for entry in combined["per_seed"]:
        rep = entry["report"]
        base = rep["overall"][PHASE_BASELINE]
        intv = rep["overall"][PHASE_INTERVENTION]
        lines.append(
            f"{entry['seed']:>6}"
            f"{_fmt(cell(rep, PHASE_BASELINE, ARM_TREATMENT), 9)}"
            f"{_fmt(cell(rep, PHASE_BASELINE, ARM_CONTROL), 9)}"
            f"{_fmt(base['p_value'] if base else None, 11)}"
            f"{_fmt(cell(rep, PHASE_INTERVENTION, ARM_TREATMENT), 9)}"
            f"{_fmt(cell(rep, PHASE_INTERVENTION, ARM_CONTROL), 9)}"
            f"{_fmt(intv['p_value'] if intv else None, 11)}"
            f"{_fmt(mid(rep, 'treatment_pr'), 9)}"
            f"{_fmt(mid(rep, 'control_pr'), 9)}"
            f"{_fmt(mid(rep, 'p_value'), 11)}"
        )
    agg = combined["aggregate"]
    lines += [
        "",
        f"seeds with treatment above control (intervention): "
        f"{agg['seeds_treatment_above_control']}/{agg['n_seeds']}",
        f"mean difference: {_fmt(agg['mean_difference'], 9).strip()}"
        f"   paired p-value: {_fmt(agg['paired_p_value'], 11).strip()}",
    ]
    return "\n".join(lines)


def render_combined_text(combined: dict[str, Any]) -> str:
    agg = combined["aggregate"]
    lines = [
        f"seeds: {agg['n_seeds']}",
        f"mean intervention rate, treatment: {_fmt(agg['treatment_intervention_pr']['mean'], 8).strip()}",
        f"mean intervention rate, control:   {_fmt(agg['control_intervention_pr']['mean'], 8).strip()}",
        f"seeds with treatment above control: {agg['seeds_treatment_above_control']}",
        f"paired p-value: {_fmt(agg['paired_p_value'], 8).strip()}",
        "",
    ]
    for entry in combined["per_seed"]:
        lines.append(f"===== seed {entry['seed']} =====")
        lines.append(render_text(entry["report"]))
    return "\n".join(lines)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_report_csvs(report: dict[str, Any], out_dir: Path, prefix: str = "") -> list[Path]:
    """Delimited extracts of the report tables."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    rows = []
    for phase in PHASES:
        sec = report["overall"][phase]
        if sec is None:
            continue
        for arm in ARMS:
            block = sec[arm]
            if block is None:
                continue
            rows.append(
                [
                    phase,
                    arm,
                    block["attempts"],
                    block["picks"],
                    block["pooled_pr"],
                    block["user_avg_pr"],
                    sec["p_value"] if arm == ARM_TREATMENT else "",
                ]
            )
    path = out_dir / f"{prefix}overall.csv"
    _write_csv(
        path, ["phase", "arm", "attempts", "picks", "pooled_pr", "user_avg_pr", "p_value"], rows
    )
    written.append(path)

    rows = []
    for phase in PHASES:
        slot_rows = report["slots"][phase]
        if not slot_rows:
            continue
        did_col = report["slots"]["did"] or {}
        for row in slot_rows:
            rows.append(
                [
                    phase,
                    row["slot"],
                    _blank(row["treatment_pr"]),
                    _blank(row["control_pr"]),
                    _blank(row["pct_improvement"]),
                    _blank(row["p_value"]),
                    _blank(did_col.get(str(row["slot"]))) if phase == PHASE_BASELINE else "",
                ]
            )
    path = out_dir / f"{prefix}slot_rates.csv"
    _write_csv(
        path,
        ["phase", "slot", "treatment_pr", "control_pr", "pct_improvement", "p_value", "did"],
        rows,
    )
    written.append(path)

    rows = []
    for phase in PHASES:
        section = report["call_distribution"][phase]
        if section is None:
            continue
        for arm in ARMS:
            dist = section.get(arm)
            if dist is None:
                continue
            for slot in SLOT_IDS:
                rows.append([phase, arm, slot, dist[str(slot)]])
    path = out_dir / f"{prefix}call_distribution.csv"
    _write_csv(path, ["phase", "arm", "slot", "probability"], rows)
    written.append(path)

    tiers = report.get("tiers")
    rows = []
    if tiers:
        for row in tiers["rows"]:
            rows.append(
                [
                    row["tier"],
                    row["treatment_calls"],
                    row["control_calls"],
                    _blank(row["treatment_pr"]),
                    _blank(row["control_pr"]),
                    _blank(row["pct_improvement"]),
                    _blank(row["p_value"]),
                ]
            )
    path = out_dir / f"{prefix}tier_rates.csv"
    _write_csv(
        path,
        [
            "tier",
            "treatment_calls",
            "control_calls",
            "treatment_pr",
            "control_pr",
            "pct_improvement",
            "p_value",
        ],
        rows,
    )
    written.append(path)
    return written


def _blank(value):
    return "" if value is None else value
