"""Figure rendering for analysis reports.

Every renderer takes the report dict and writes a PNG; the Agg backend
keeps output deterministic and headless-safe.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .domain import ARM_CONTROL, ARM_TREATMENT, ARMS, PHASE_INTERVENTION, SLOT_IDS

_ARM_COLOR = {ARM_TREATMENT: "#3465a4", ARM_CONTROL: "#999999"}
_DPI = 120


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI, metadata={"Software": "callsched"})
    plt.close(fig)
    return path


def plot_call_distribution(report: dict, path: str | Path, phase: str = PHASE_INTERVENTION) -> Path | None:
    """Side-by-side bars of the first-call share per slot for each arm."""
    section = report["call_distribution"].get(phase)
    if section is None:
        return None
    arms = [arm for arm in ARMS if section.get(arm)]
    if not arms:
        return None
    fig, axes = plt.subplots(1, len(arms), figsize=(4.0 * len(arms), 3.2), sharey=True)
    if len(arms) == 1:
        axes = [axes]
    for ax, arm in zip(axes, arms):
        dist = section[arm]
        ax.bar(SLOT_IDS, [dist[str(s)] for s in SLOT_IDS], color=_ARM_COLOR[arm])
        ax.axhline(1 / 7, color="black", linewidth=0.8, linestyle="--")
        ax.set_xlabel("slot")
        ax.set_title(arm)
        ax.set_xticks(SLOT_IDS)
    axes[0].set_ylabel(f"share of first calls ({phase})")
    fig.tight_layout()
    return _save(fig, Path(path))


def plot_slot_rates(report: dict, path: str | Path, phase: str = PHASE_INTERVENTION) -> Path | None:
    """Grouped per-slot pick-up rates, treatment next to control."""
    rows = report["slots"].get(phase)
    if not rows:
        return None
    width = 0.38
    fig, ax = plt.subplots(figsize=(6.4, 3.4))
    for k, arm in enumerate(ARMS):
        xs, ys = [], []
        for row in rows:
            rate = row[f"{arm}_pr"]
            if rate is not None:
                xs.append(row["slot"] + (k - 0.5) * width)
                ys.append(rate)
        ax.bar(xs, ys, width=width, label=arm, color=_ARM_COLOR[arm])
    ax.set_xticks(SLOT_IDS)
    ax.set_xlabel("slot")
    ax.set_ylabel(f"pick-up rate ({phase})")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, Path(path))


def plot_tier_rates(report: dict, path: str | Path) -> Path | None:
    """Pick-up rate by tier and arm for the intervention phase."""
    tiers = report.get("tiers")
    if not tiers:
        return None
    labels = [row["tier"] for row in tiers["rows"]]
    width = 0.38
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    for k, arm in enumerate(ARMS):
        xs, ys = [], []
        for i, row in enumerate(tiers["rows"]):
            rate = row[f"{arm}_pr"]
            if rate is not None:
                xs.append(i + (k - 0.5) * width)
                ys.append(rate)
        ax.bar(xs, ys, width=width, label=arm, color=_ARM_COLOR[arm])
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_ylabel("pick-up rate")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, Path(path))


def render_report_figures(report: dict, out_dir: str | Path, prefix: str = "") -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    for name, renderer in (
        ("call_distribution", plot_call_distribution),
        ("slot_rates", plot_slot_rates),
        ("tier_rates", plot_tier_rates),
    ):
        result = renderer(report, out_dir / f"{prefix}{name}.png")
        if result is not None:
            written.append(result)
    return written
