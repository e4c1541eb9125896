"""End-to-end analysis of one dataset: pre-smoothing, per-group M-estimation
with model selection, interval-wise testing, and (optionally) effect-size maps.

This is the glue layer the CLI subcommands and the experiment runner share.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import GroupedDataset
from .effectsize import EffectSizeMap, bootstrap_variance, effect_size_map
from .iwt import (
    IwtConfig,
    PointwiseStatField,
    PValueFunctions,
    SelectionReport,
    run_iwt,
)
from .presmooth import SmoothedSample, SmoothingConfig, smooth_dataset
from .splinefit import GroupFit, MEstimatorConfig, fit_group


@dataclass(frozen=True)
class AnalysisSettings:
    """Every analysis knob in one serializable bundle."""

    L: int = 1
    B: int = 1000
    R: int = 500
    alpha: float = 0.05
    correction: str = "bonferroni"
    delta: float = 1.0
    knot_candidates: tuple[int, ...] = (10, 20, 40)
    lambda_range: tuple[float, float] = (1e-6, 1e2)
    n_lambda: int = 20
    penalty_kind: str = "difference"
    global_bandwidth: bool = False
    pointwise_window: int = 1
    block_size: int = 128
    threads: int = 1
    seed: int = 0

    def mest_config(self) -> MEstimatorConfig:
        return MEstimatorConfig(
            delta=self.delta,
            knot_candidates=tuple(self.knot_candidates),
            n_lambda=self.n_lambda,
            lambda_range=tuple(self.lambda_range),
            penalty_kind=self.penalty_kind,
        )

    def iwt_config(self) -> IwtConfig:
        return IwtConfig(
            B=self.B,
            alpha=self.alpha,
            correction=self.correction,
            seed=self.seed,
            block_size=self.block_size,
            workers=self.threads,
            pointwise_window=self.pointwise_window,
        )

    def smoothing_config(self) -> SmoothingConfig:
        return SmoothingConfig(orders=self.L, global_bandwidth=self.global_bandwidth)

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "B": self.B,
            "R": self.R,
            "alpha": self.alpha,
            "correction": self.correction,
            "delta": self.delta,
            "knot_candidates": list(self.knot_candidates),
            "lambda_range": list(self.lambda_range),
            "n_lambda": self.n_lambda,
            "penalty_kind": self.penalty_kind,
            "global_bandwidth": self.global_bandwidth,
            "pointwise_window": self.pointwise_window,
            "block_size": self.block_size,
            "threads": self.threads,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisSettings":
        d = dict(d)
        if "knot_candidates" in d:
            d["knot_candidates"] = tuple(d["knot_candidates"])
        if "lambda_range" in d:
            d["lambda_range"] = tuple(d["lambda_range"])
        return cls(**d)


def stack_samples(
    samples: list[SmoothedSample], L: int
) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray], np.ndarray, list[str]]:
    """Arrange smoothed samples as per-order value/mask matrices plus labels."""
    y_by_order = {l: np.array([s.values[l] for s in samples]) for l in range(L + 1)}
    masks_by_order = {l: np.array([s.masks[l] for s in samples]) for l in range(L + 1)}
    labels = np.array([s.group_id for s in samples])
    group_ids = list(dict.fromkeys(labels.tolist()))
    return y_by_order, masks_by_order, labels, group_ids


def fit_all_groups(
    grid,
    y_by_order: dict[int, np.ndarray],
    masks_by_order: dict[int, np.ndarray],
    labels: np.ndarray,
    group_ids: list[str],
    mcfg: MEstimatorConfig,
    seed: int,
) -> dict[tuple[str, int], GroupFit]:
    """Observed-data fits with knot/lambda selection per (group, order)."""
    fits: dict[tuple[str, int], GroupFit] = {}
    for order in sorted(y_by_order):
        y = y_by_order[order]
        masks = masks_by_order[order]
        for gid in group_ids:
            idx = labels == gid
            fits[(gid, order)] = fit_group(
                y[idx], masks[idx], grid, gid, order, mcfg, seed=seed
            )
    return fits


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    dataset: GroupedDataset
    samples: list[SmoothedSample]
    labels: np.ndarray
    group_ids: list[str]
    y_by_order: dict[int, np.ndarray]
    masks_by_order: dict[int, np.ndarray]
    fits: dict[tuple[str, int], GroupFit]
    fields: dict[int, PointwiseStatField]
    pvalues: PValueFunctions
    report: SelectionReport
    effect_maps: dict[int, EffectSizeMap] = field(default_factory=dict)


def analyze(
    ds: GroupedDataset,
    settings: AnalysisSettings,
    samples: list[SmoothedSample] | None = None,
    fits: dict[tuple[str, int], GroupFit] | None = None,
    with_effect_size: bool = False,
) -> AnalysisResult:
    """Run the full testing workflow on a validated dataset.

    Pre-smoothed samples and frozen fits may be passed in to resume from
    intermediate artifacts.
    """
    if samples is None:
        samples = smooth_dataset(ds, settings.smoothing_config())
    y_by_order, masks_by_order, labels, group_ids = stack_samples(samples, settings.L)
    mcfg = settings.mest_config()
    if fits is None:
        fits = fit_all_groups(
            ds.grid, y_by_order, masks_by_order, labels, group_ids, mcfg, settings.seed
        )
    metadata = {}
    if ds.coverage is not None:
        metadata["min_coverage"] = float(ds.coverage.min())
    fields, pvals, report = run_iwt(
        ds.grid,
        y_by_order,
        masks_by_order,
        labels,
        group_ids,
        fits,
        settings.iwt_config(),
        mcfg,
        metadata=metadata,
    )
    effect_maps: dict[int, EffectSizeMap] = {}
    if with_effect_size:
        sizes = np.array([(labels == g).sum() for g in group_ids], dtype=float)
        for order in sorted(y_by_order):
            variance = bootstrap_variance(
                ds.grid,
                y_by_order[order],
                masks_by_order[order],
                labels,
                group_ids,
                fits,
                order,
                settings.R,
                settings.seed,
                mcfg,
                block_size=settings.block_size,
                workers=settings.threads,
            )
            theta = np.array([fits[(g, order)].grid_values for g in group_ids])
            effect_maps[order] = effect_size_map(ds.grid, theta, sizes, variance)
    return AnalysisResult(
        dataset=ds,
        samples=samples,
        labels=labels,
        group_ids=group_ids,
        y_by_order=y_by_order,
        masks_by_order=masks_by_order,
        fits=fits,
        fields=fields,
        pvalues=pvals,
        report=report,
        effect_maps=effect_maps,
    )
