"""Figure rendering for evaluation reports.

The evaluate command drops these PNGs next to report.json/report.csv:
one per-kidney bar chart of per-case Dice (baseline in red, proposed in
green) and a paired-difference chart.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from geoforest.evaluation import DiceReport  # noqa: E402

BASELINE_COLOR = "#c44e52"
PROPOSED_COLOR = "#55a868"


def render_dice_bars(report: DiceReport, out_dir: str) -> list[str]:
    """Write dice_right.png / dice_left.png; returns the written paths."""
    paths = []
    for kidney in ("right", "left"):
        base = report.scores(report.baseline_mode, kidney)
        prop = report.scores(report.proposed_mode, kidney)
        cases = sorted(base)
        if not cases:
            continue
        x = np.arange(len(cases))
        width = 0.38
        fig, ax = plt.subplots(figsize=(max(6, 0.55 * len(cases) + 2), 3.6))
        ax.bar(x - width / 2, [base[c] for c in cases], width,
               color=BASELINE_COLOR, label=report.baseline_mode)
        ax.bar(x + width / 2, [prop[c] for c in cases], width,
               color=PROPOSED_COLOR, label=report.proposed_mode)
        ax.set_xticks(x)
        ax.set_xticklabels(cases, rotation=60, ha="right", fontsize=7)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("Dice")
        ax.set_title(f"{kidney.capitalize()} kidney: per-case Dice")
        ax.legend(loc="lower right", fontsize=8)
        ax.grid(axis="y", alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, f"dice_{kidney}.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths


def render_improvement(report: DiceReport, out_dir: str) -> str | None:
    """Paired per-case Dice differences (proposed minus baseline)."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4), sharey=True)
    drew = False
    for ax, kidney in zip(axes, ("right", "left")):
        base = report.scores(report.baseline_mode, kidney)
        prop = report.scores(report.proposed_mode, kidney)
        cases = sorted(base)
        if not cases:
            continue
        drew = True
        deltas = [prop[c] - base[c] for c in cases]
        colors = [PROPOSED_COLOR if d > 0 else BASELINE_COLOR for d in deltas]
        ax.bar(np.arange(len(cases)), deltas, color=colors)
        ax.axhline(0, color="black", linewidth=0.8)
        ax.set_xticks(np.arange(len(cases)))
        ax.set_xticklabels(cases, rotation=60, ha="right", fontsize=7)
        ax.set_title(f"{kidney} kidney")
    if not drew:
        plt.close(fig)
        return None
    axes[0].set_ylabel("Dice difference (proposed - baseline)")
    fig.tight_layout()
    path = os.path.join(out_dir, "dice_improvement.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
