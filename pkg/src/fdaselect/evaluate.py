"""Simulation-study scoring and batch experiment orchestration: sensitivity,
false rejection rate, and the probability of at least one false rejection
against the generator's ground truth.
"""

from __future__ import annotations

import csv
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from .analysis import AnalysisSettings, analyze
from .errors import GridMismatch
from .iwt import SelectionReport, correct_alpha
from .simulate import GroundTruth, ScenarioConfig, generate

FAILURE_FLAG_FRACTION = 0.05


@dataclass(frozen=True)
class SelectionScore:
    """Per-dataset selection quality; sensitivity is None when the truth has
    no separable points (pure null design)."""

    sensitivity: float | None
    frr: float
    false_rejection_present: bool
    n_separable: int
    n_selected: int
    true_positives: int
    false_positives: int


def score(truth: GroundTruth, report: SelectionReport, m: int) -> SelectionScore:
    """Sensitivity = |A ∩ Â| / |A|; FRR = |Â \\ A| / |Â| (0 for empty Â)."""
    if truth.mu1.size != m:
        raise GridMismatch(f"truth grid has {truth.mu1.size} points, report grid {m}")
    selected = np.asarray(report.selected, dtype=int)
    if selected.size and (selected.min() < 0 or selected.max() >= m):
        raise GridMismatch("selected indices fall outside the grid")
    a = set(int(j) for j in truth.separable_idx)
    a_hat = set(int(j) for j in selected)
    tp = len(a & a_hat)
    fp = len(a_hat - a)
    sensitivity = tp / len(a) if a else None
    frr = fp / len(a_hat) if a_hat else 0.0
    return SelectionScore(
        sensitivity=sensitivity,
        frr=frr,
        false_rejection_present=fp > 0,
        n_separable=len(a),
        n_selected=len(a_hat),
        true_positives=tp,
        false_positives=fp,
    )


@dataclass(frozen=True)
class DesignCell:
    name: str
    config: ScenarioConfig
    replicates: int

    def to_dict(self) -> dict:
        return {"name": self.name, "replicates": self.replicates, "config": self.config.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DesignCell":
        return cls(
            name=d["name"],
            config=ScenarioConfig.from_dict(d["config"]),
            replicates=int(d["replicates"]),
        )


@dataclass(frozen=True, eq=False)
class ReplicateResult:
    cell: str
    replicate: int
    seed: int
    score: SelectionScore | None
    adjusted_p: np.ndarray | None  # (L+1, m), kept for correction comparisons
    error: str | None = None


def run_replicate(
    cell: DesignCell, settings: AnalysisSettings, replicate: int
) -> ReplicateResult:
    """One fully seeded simulate-analyze-score pass (seed = base XOR replicate)."""
    seed = cell.config.seed ^ replicate
    try:
        config = ScenarioConfig.from_dict({**cell.config.to_dict(), "seed": seed})
        ds, truth = generate(config)
        run_settings = AnalysisSettings.from_dict({**settings.to_dict(), "seed": seed, "threads": 1})
        result = analyze(ds, run_settings)
        sc = score(truth, result.report, ds.grid.m)
        return ReplicateResult(
            cell=cell.name,
            replicate=replicate,
            seed=seed,
            score=sc,
            adjusted_p=result.pvalues.adjusted,
        )
    except Exception as exc:  # recorded per replicate, cell flagged past 5%
        return ReplicateResult(
            cell=cell.name,
            replicate=replicate,
            seed=seed,
            score=None,
            adjusted_p=None,
            error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}",
        )


def _replicate_task(args) -> ReplicateResult:
    cell, settings, replicate = args
    return run_replicate(cell, settings, replicate)


@dataclass(frozen=True, eq=False)
class CellSummary:
    name: str
    replicates: int
    failed: int
    mean_sensitivity: float | None
    mean_frr: float | None
    p_any_false_rejection: float | None
    flagged: bool


def summarize_cell(name: str, results: list[ReplicateResult]) -> CellSummary:
    ok = [r for r in results if r.score is not None]
    failed = len(results) - len(ok)
    sens = [r.score.sensitivity for r in ok if r.score.sensitivity is not None]
    frr = [r.score.frr for r in ok]
    any_fr = [r.score.false_rejection_present for r in ok]
    return CellSummary(
        name=name,
        replicates=len(results),
        failed=failed,
        mean_sensitivity=float(np.mean(sens)) if sens else None,
        mean_frr=float(np.mean(frr)) if frr else None,
        p_any_false_rejection=float(np.mean(any_fr)) if any_fr else None,
        flagged=failed > FAILURE_FLAG_FRACTION * max(len(results), 1),
    )


def run_experiment(
    cells: list[DesignCell],
    settings: AnalysisSettings,
    workers: int = 1,
) -> tuple[list[CellSummary], list[ReplicateResult]]:
    """Run every (cell, replicate) job; reduction order is fixed by job index so
    output is independent of worker count."""
    jobs = [(cell, settings, r) for cell in cells for r in range(cell.replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as pool:
            results = list(pool.map(_replicate_task, jobs, chunksize=1))
    else:
        results = [_replicate_task(j) for j in jobs]
    summaries = []
    for cell in cells:
        cell_results = [r for r in results if r.cell == cell.name]
        summaries.append(summarize_cell(cell.name, cell_results))
    return summaries, results


def _cell_field(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_summary_csv(summaries: list[CellSummary], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["cell", "replicates", "failed", "mean_sensitivity", "mean_frr",
             "p_any_false_rejection", "flagged"]
        )
        for s in summaries:
            writer.writerow(
                [s.name, s.replicates, s.failed, _cell_field(s.mean_sensitivity),
                 _cell_field(s.mean_frr), _cell_field(s.p_any_false_rejection),
                 _cell_field(s.flagged)]
            )


def write_replicates_csv(results: list[ReplicateResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["cell", "replicate", "seed", "sensitivity", "frr",
             "false_rejection_present", "n_selected", "true_positives",
             "false_positives", "error"]
        )
        for r in results:
            if r.score is None:
                writer.writerow(
                    [r.cell, r.replicate, r.seed, "NA", "NA", "NA", "NA", "NA", "NA",
                     (r.error or "").splitlines()[0]]
                )
            else:
                s = r.score
                writer.writerow(
                    [r.cell, r.replicate, r.seed, _cell_field(s.sensitivity),
                     _cell_field(s.frr), _cell_field(s.false_rejection_present),
                     s.n_selected, s.true_positives, s.false_positives, ""]
                )


def correction_agreement(adjusted_p: np.ndarray, alpha: float) -> float:
    """Fraction of (order, grid point) decisions where Holm and Hochberg agree
    with Bonferroni on one p-value matrix."""
    k = adjusted_p.shape[0]
    bon = correct_alpha(alpha, k - 1, "bonferroni").decide(adjusted_p)
    holm = correct_alpha(alpha, k - 1, "holm").decide(adjusted_p)
    hoch = correct_alpha(alpha, k - 1, "hochberg").decide(adjusted_p)
    agree = (bon == holm) & (bon == hoch)
    return float(agree.mean())
