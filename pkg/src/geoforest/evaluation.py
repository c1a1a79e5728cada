"""Dice scoring, cross-validation, and the baseline-vs-geodesic report."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from statistics import mean, median

import numpy as np

from geoforest.errors import DatasetError, ParameterError
from geoforest.pipeline import (
    CaseData,
    CaseRecord,
    PipelineConfig,
    load_case,
    run_prediction,
    run_training,
)
from geoforest.volume import LABEL_LEFT, LABEL_RIGHT, LabelVolume

CLASS_NAMES = {LABEL_RIGHT: "right", LABEL_LEFT: "left"}

# fold f of a comparison seeded with s trains with master seed s * _FOLD_STRIDE + f
_FOLD_STRIDE = 1_000_003


def dice(pred: LabelVolume, truth: LabelVolume, class_id: int) -> float:
    """Overlap score 2|P∩T| / (|P|+|T|); 1.0 when both sets are empty,
    0.0 when exactly one is."""
    if pred.dims != truth.dims:
        raise ParameterError(
            f"dice requires congruent volumes, got {pred.dims} vs {truth.dims}")
    p = pred.labels == class_id
    t = truth.labels == class_id
    p_size = int(p.sum())
    t_size = int(t.sum())
    if p_size == 0 and t_size == 0:
        return 1.0
    if p_size == 0 or t_size == 0:
        return 0.0
    return 2.0 * int((p & t).sum()) / (p_size + t_size)


def kfold_split(case_ids, k: int, seed: int) -> list[tuple[list, list]]:
    """Shuffled deterministic partition into k test folds of near-equal size."""
    ids = list(case_ids)
    if k < 2:
        raise ParameterError(f"k must be >= 2, got {k}")
    if k > len(ids):
        raise ParameterError(f"k={k} exceeds the number of cases ({len(ids)})")
    rng = np.random.default_rng(seed)
    shuffled = [ids[i] for i in rng.permutation(len(ids))]
    folds = [list(part) for part in np.array_split(np.arange(len(ids)), k)]
    out = []
    for fold in folds:
        test = [shuffled[i] for i in fold]
        train = [cid for cid in shuffled if cid not in test]
        out.append((train, test))
    return out


@dataclass(frozen=True)
class DiceRow:
    case_id: str
    kidney: str   # "right" | "left"
    mode: str
    fold: int
    dice: float


class DiceReport:
    """Per-case paired Dice rows plus win/loss aggregates per kidney."""

    def __init__(self, rows: list[DiceRow], k: int, seed: int,
                 modes: tuple[str, str]):
        self.rows = rows
        self.k = k
        self.seed = seed
        self.baseline_mode, self.proposed_mode = modes

    def scores(self, mode: str, kidney: str) -> dict[str, float]:
        return {r.case_id: r.dice for r in self.rows
                if r.mode == mode and r.kidney == kidney}

    def summary(self) -> dict:
        out = {}
        for kidney in ("right", "left"):
            base = self.scores(self.baseline_mode, kidney)
            prop = self.scores(self.proposed_mode, kidney)
            cases = sorted(base)
            deltas = {c: prop[c] - base[c] for c in cases}
            wins = [c for c in cases if deltas[c] > 0]
            losses = [c for c in cases if deltas[c] < 0]
            ties = [c for c in cases if deltas[c] == 0]
            rel_wins = [100.0 * deltas[c] / base[c] for c in wins if base[c] > 0]
            rel_losses = [-100.0 * deltas[c] / base[c] for c in losses if base[c] > 0]
            out[kidney] = {
                "cases": len(cases),
                "baseline_mean": mean(base.values()) if base else 0.0,
                "baseline_median": median(base.values()) if base else 0.0,
                "proposed_mean": mean(prop.values()) if prop else 0.0,
                "proposed_median": median(prop.values()) if prop else 0.0,
                "wins": len(wins),
                "losses": len(losses),
                "ties": len(ties),
                # improvement among wins, reported both ways: absolute Dice
                # points and percent relative to the baseline score
                "mean_improvement_wins_abs": mean(deltas[c] for c in wins) if wins else 0.0,
                "mean_improvement_wins_rel_pct": mean(rel_wins) if rel_wins else 0.0,
                "mean_decline_losses_abs": mean(-deltas[c] for c in losses) if losses else 0.0,
                "mean_decline_losses_rel_pct": mean(rel_losses) if rel_losses else 0.0,
            }
        return out

    def to_json_dict(self) -> dict:
        return {"k": self.k,
                "seed": self.seed,
                "modes": [self.baseline_mode, self.proposed_mode],
                "rows": [{"case": r.case_id, "class": r.kidney, "mode": r.mode,
                          "fold": r.fold, "dice": r.dice} for r in self.rows],
                "summary": self.summary()}

    def write_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["case", "class", "mode", "dice"])
            for r in self.rows:
                writer.writerow([r.case_id, r.kidney, r.mode, repr(r.dice)])


def score_case(pred: LabelVolume, truth: LabelVolume, case_id: str,
               mode: str, fold: int) -> list[DiceRow]:
    return [DiceRow(case_id, CLASS_NAMES[cid], mode, fold,
                    dice(pred, truth, cid))
            for cid in (LABEL_RIGHT, LABEL_LEFT)]


def run_cv(cases: list[CaseRecord], config: PipelineConfig, k: int, seed: int,
           mode_name: str, folds=None,
           progress=None) -> list[DiceRow]:
    """Cross-validate one configuration; returns one row per case and kidney."""
    by_id = {c.case_id: c for c in cases}
    if len(by_id) != len(cases):
        raise DatasetError("case ids must be unique")
    folds = folds if folds is not None else kfold_split(sorted(by_id), k, seed)
    cache: dict[str, CaseData] = {}

    def data_for(cid: str) -> CaseData:
        if cid not in cache:
            cache[cid] = load_case(by_id[cid], config, need_truth=True)
        return cache[cid]

    rows: list[DiceRow] = []
    for fold_i, (train_ids, test_ids) in enumerate(folds):
        if progress:
            progress(f"[{mode_name}] fold {fold_i + 1}/{len(folds)}: "
                     f"training on {len(train_ids)} cases")
        forest = run_training([by_id[c] for c in train_ids], config,
                              seed * _FOLD_STRIDE + fold_i,
                              case_data=[data_for(c) for c in train_ids])
        for cid in test_ids:
            data = data_for(cid)
            pred = run_prediction(by_id[cid], forest, config, case_data=data)
            rows.extend(score_case(pred, data.truth, cid, mode_name, fold_i))
    return rows


def compare_modes(cases: list[CaseRecord],
                  config_pair: tuple[PipelineConfig, PipelineConfig],
                  k: int, seed: int, progress=None) -> DiceReport:
    """Run the full CV for both configurations with shared folds and seeds."""
    baseline_config, proposed_config = config_pair
    ids = sorted({c.case_id for c in cases})
    if len(ids) != len(cases):
        raise DatasetError("case ids must be unique")
    folds = kfold_split(ids, k, seed)
    names = [baseline_config.mode, proposed_config.mode]
    if names[0] == names[1]:  # self-comparison: keep the row labels distinct
        names = [names[0] + "_a", names[1] + "_b"]
    rows: list[DiceRow] = []
    for config, mode_name in ((baseline_config, names[0]),
                              (proposed_config, names[1])):
        rows.extend(run_cv(cases, config, k, seed, mode_name, folds=folds,
                           progress=progress))
    return DiceReport(rows, k, seed, (names[0], names[1]))
