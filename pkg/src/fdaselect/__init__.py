"""Robust domain selection for grouped functional data: interval-wise
permutation testing on penalized-spline M-estimates, with multiscale
effect-size maps."""

__version__ = "0.1.0"

from .analysis import AnalysisSettings, analyze
from .datamodel import Grid, GriddedCurve, GroupedDataset, enumerate_arcs, validate_dataset
from .simulate import ScenarioConfig, generate

__all__ = [
    "AnalysisSettings",
    "analyze",
    "Grid",
    "GriddedCurve",
    "GroupedDataset",
    "enumerate_arcs",
    "validate_dataset",
    "ScenarioConfig",
    "generate",
    "__version__",
]
