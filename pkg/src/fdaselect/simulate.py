"""Synthetic grouped-dataset generator: two-group location functions equal on a
leading sub-interval, four error/contamination scenarios, and segment-structured
partial sampling with known ground truth.

All randomness flows through counter-based per-curve substreams so generation
is bit-reproducible regardless of evaluation order or parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import Grid, GriddedCurve, GroupedDataset, validate_dataset
from .errors import ConfigError, FactorizationFailure, NumericalError, UnknownPreset
from .rngutil import substream

SCENARIOS = ("gaussian", "t3", "curve_outlier", "local_outlier")
SAMPLINGS = ("full", "partial")
PRESETS = ("one-signed", "cross-over")

# substream tags so distinct random purposes never share a stream
_ERR, _MASK, _SHIFT_SEL, _SHIFT, _CELL_SEL, _CELL_NOISE = range(6)

DEFAULT_AMPLITUDE = 6.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of one simulated two-group dataset."""

    n_per_group: int = 50
    m: int = 100
    domain: tuple[float, float] = (0.0, 1.0)
    sigma_e: float = 1.0
    phi: float = 0.2
    scenario: str = "gaussian"
    sampling: str = "full"
    d: float = 1.2
    f: float = 0.3
    bernoulli_p: float = 0.5
    outlier_fraction: float = 0.05
    outliers_per_group: bool = False
    c1: float = 0.34
    preset: str = "one-signed"
    amplitude: float = DEFAULT_AMPLITUDE
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.sampling not in SAMPLINGS:
            raise ConfigError(f"unknown sampling {self.sampling!r}")
        if self.n_per_group < 1 or self.m < 3:
            raise ConfigError("need n_per_group >= 1 and m >= 3")
        if not (self.sigma_e > 0):
            raise ConfigError("sigma_e must be positive")
        if not (self.phi > 0):
            raise ConfigError("phi must be positive")
        if not (0.0 <= self.outlier_fraction <= 1.0):
            raise ConfigError("outlier_fraction must be in [0, 1]")
        if self.d < 0 or self.f < 0:
            raise ConfigError("d and f must be nonnegative")
        if not (0.0 <= self.bernoulli_p <= 1.0):
            raise ConfigError("bernoulli_p must be in [0, 1]")
        if not (0.0 < self.c1 <= 1.0):
            raise ConfigError("c1 must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "n_per_group": self.n_per_group,
            "m": self.m,
            "domain": list(self.domain),
            "sigma_e": self.sigma_e,
            "phi": self.phi,
            "scenario": self.scenario,
            "sampling": self.sampling,
            "d": self.d,
            "f": self.f,
            "bernoulli_p": self.bernoulli_p,
            "outlier_fraction": self.outlier_fraction,
            "outliers_per_group": self.outliers_per_group,
            "c1": self.c1,
            "preset": self.preset,
            "amplitude": self.amplitude,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "domain" in d:
            d["domain"] = tuple(d["domain"])
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    """Location functions on the grid and the separable index set A."""

    mu1: np.ndarray
    mu2: np.ndarray
    equal_idx: np.ndarray
    separable_idx: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mu1": [float(x) for x in self.mu1],
            "mu2": [float(x) for x in self.mu2],
            "equal_idx": [int(j) for j in self.equal_idx],
            "separable_idx": [int(j) for j in self.separable_idx],
        }


def _smoothstep(v: np.ndarray) -> np.ndarray:
    """Quintic smoothstep: 0 at 0, 1 at 1, with two vanishing derivatives at both ends."""
    v = np.clip(v, 0.0, 1.0)
    return v**3 * (10.0 - 15.0 * v + 6.0 * v**2)


def _separation(u: np.ndarray, preset: str, amplitude: float) -> np.ndarray:
    """Difference mu2 - mu1 as a function of u = (t - c1)/(1 - c1), C^2 everywhere
    with s = s' = s'' = 0 at u <= 0."""
    ramp = _smoothstep(u / 0.3)
    if preset == "one-signed":
        return amplitude * ramp
    if preset == "cross-over":
        # flips sign once, smoothly, midway through the separable region
        flip = 1.0 - 2.0 * _smoothstep((u - 0.35) / 0.3)
        return amplitude * ramp * flip
    raise UnknownPreset(f"unknown location preset {preset!r}")


def make_location_pair(
    grid: Grid, c1: float, preset: str = "one-signed", amplitude: float = DEFAULT_AMPLITUDE
) -> GroundTruth:
    """Two smooth location functions, identical (values and derivatives) up to c1
    and separated beyond it."""
    if preset not in PRESETS:
        raise UnknownPreset(f"unknown location preset {preset!r}")
    if not (0.0 < c1 <= 1.0):
        raise ConfigError("c1 must be in (0, 1]")
    t = grid.points
    a, b = grid.domain
    tc = a + c1 * (b - a)
    mu1 = np.sin(2.0 * np.pi * (t - a) / (b - a)) + 2.0 * (t - a) / (b - a)
    if c1 >= 1.0:
        s = np.zeros_like(t)
    else:
        u = (t - tc) / (b - tc)
        s = _separation(u, preset, amplitude)
        s[t <= tc] = 0.0
    mu2 = mu1 + s
    equal = np.flatnonzero(s == 0.0)
    sep = np.flatnonzero(s != 0.0)
    return GroundTruth(mu1=mu1, mu2=mu2, equal_idx=equal, separable_idx=sep)


def exp_covariance(dist, sigma_e: float, phi: float):
    """Exponential scatter function: sigma_e^2 * exp(-d / phi)."""
    if phi <= 0:
        raise ConfigError("phi must be positive")
    return sigma_e**2 * np.exp(-np.asarray(dist, dtype=float) / phi)


def _gram_cholesky(grid: Grid, sigma_e: float, phi: float) -> np.ndarray:
    t = grid.points
    gram = exp_covariance(np.abs(t[:, None] - t[None, :]), sigma_e, phi)
    try:
        return np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        try:
            return np.linalg.cholesky(gram + 1e-10 * np.eye(grid.m))
        except np.linalg.LinAlgError as exc:
            raise FactorizationFailure("error Gram matrix is not positive definite") from exc


def sample_gaussian_errors(
    grid: Grid, n: int, sigma_e: float, phi: float, seed: int, stream_offset: int = 0
) -> np.ndarray:
    """n zero-mean curves with the exponential covariance, one substream per curve."""
    chol = _gram_cholesky(grid, sigma_e, phi)
    out = np.empty((n, grid.m))
    for i in range(n):
        z = substream(seed, _ERR, stream_offset + i).standard_normal(grid.m)
        out[i] = chol @ z
    return out


def sample_t3_errors(
    grid: Grid,
    n: int,
    sigma_e: float,
    phi: float,
    seed: int,
    stream_offset: int = 0,
    fixed_w: float | None = None,
) -> np.ndarray:
    """Elliptical t_3 process: Gaussian curve scaled by sqrt(3 / W), W ~ chi^2_3.

    Marginal variance is 3 * sigma_e^2. ``fixed_w=3.0`` reduces to the Gaussian
    draw (debug hook).
    """
    chol = _gram_cholesky(grid, sigma_e, phi)
    out = np.empty((n, grid.m))
    for i in range(n):
        rng = substream(seed, _ERR, stream_offset + i)
        z = rng.standard_normal(grid.m)
        w = fixed_w if fixed_w is not None else rng.chisquare(3)
        out[i] = (chol @ z) * np.sqrt(3.0 / w)
    return out


def apply_curve_outliers(
    curves: np.ndarray,
    fraction: float,
    sigma_e: float,
    seed: int,
    groups: np.ndarray | None = None,
) -> np.ndarray:
    """Shift ceil(fraction * n) curves by one scalar t_3 draw scaled to variance
    3 * sigma_e^2 (constant over the domain).

    Selection is pooled over all curves; pass ``groups`` to select the fraction
    within each group instead.
    """
    curves = np.array(curves, dtype=float)
    n = curves.shape[0]
    if fraction == 0.0 or n == 0:
        return curves
    rng_sel = substream(seed, _SHIFT_SEL)
    if groups is None:
        chosen = rng_sel.choice(n, size=int(np.ceil(fraction * n)), replace=False)
    else:
        groups = np.asarray(groups)
        chosen_parts = []
        for g in dict.fromkeys(groups.tolist()):
            idx = np.flatnonzero(groups == g)
            k = int(np.ceil(fraction * idx.size))
            chosen_parts.append(rng_sel.choice(idx, size=k, replace=False))
        chosen = np.concatenate(chosen_parts)
    # Var(t_3) = 3, so scaling by sigma_e gives variance 3 * sigma_e^2
    for i in np.sort(chosen):
        shift = sigma_e * substream(seed, _SHIFT, int(i)).standard_t(3)
        curves[i] += shift
    return curves


def apply_local_outliers(
    curves: np.ndarray, fraction: float, sigma_e: float, seed: int
) -> np.ndarray:
    """Add t_3 noise scaled to variance 2 * sigma_e^2 to ceil(fraction * n * m)
    cells drawn without replacement from the pooled (curve, grid point) cells."""
    curves = np.array(curves, dtype=float)
    n, m = curves.shape
    n_cells = int(np.ceil(fraction * n * m))
    if n_cells == 0:
        return curves
    flat = substream(seed, _CELL_SEL).choice(n * m, size=n_cells, replace=False)
    flat = np.sort(flat)
    noise = np.sqrt(2.0 / 3.0) * sigma_e * substream(seed, _CELL_NOISE).standard_t(3, size=n_cells)
    curves.ravel()[flat] += noise
    return curves


def sample_missing_masks(
    grid: Grid,
    n: int,
    d: float,
    f: float,
    p: float,
    seed: int,
    stream_offset: int = 0,
    return_info: bool = False,
):
    """Per-curve missing intervals M = [C - E, C + E] with C = d*U1, E = f*U2,
    masked out with probability p; every curve keeps at least one observed point.

    Masks are generated without reading any curve values. With ``return_info``
    also returns an (n, 3) array of (masked flag, C - E, C + E) per curve, with
    NaN bounds where no interval was drawn.
    """
    t = grid.points
    masks = np.ones((n, grid.m), dtype=bool)
    info = np.full((n, 3), np.nan)
    info[:, 0] = 0.0
    for i in range(n):
        rng = substream(seed, _MASK, stream_offset + i)
        if rng.random() >= p:
            continue
        info[i, 0] = 1.0
        for _ in range(100):
            c = d * rng.random()
            e = f * rng.random()
            removed = (t >= c - e) & (t <= c + e)
            if not removed.all():
                masks[i, removed] = False
                info[i, 1] = c - e
                info[i, 2] = c + e
                break
        else:
            raise NumericalError(
                f"could not draw a non-emptying missing interval for curve {i}"
            )
    if return_info:
        return masks, info
    return masks


def generate(config: ScenarioConfig) -> tuple[GroupedDataset, GroundTruth]:
    """Build one validated two-group dataset plus its ground truth."""
    grid = Grid(np.linspace(config.domain[0], config.domain[1], config.m))
    truth = make_location_pair(grid, config.c1, config.preset, config.amplitude)
    n = config.n_per_group
    n_total = 2 * n

    if config.scenario == "t3":
        errors = sample_t3_errors(grid, n_total, config.sigma_e, config.phi, config.seed)
    else:
        errors = sample_gaussian_errors(grid, n_total, config.sigma_e, config.phi, config.seed)

    values = errors
    values[:n] += truth.mu1
    values[n:] += truth.mu2
    group_labels = np.array(["g1"] * n + ["g2"] * n)

    if config.scenario == "curve_outlier":
        values = apply_curve_outliers(
            values,
            config.outlier_fraction,
            config.sigma_e,
            config.seed,
            groups=group_labels if config.outliers_per_group else None,
        )
    elif config.scenario == "local_outlier":
        values = apply_local_outliers(values, config.outlier_fraction, config.sigma_e, config.seed)

    if config.sampling == "partial":
        masks = sample_missing_masks(
            grid, n_total, config.d, config.f, config.bernoulli_p, config.seed
        )
    else:
        masks = np.ones((n_total, config.m), dtype=bool)

    curves = tuple(
        GriddedCurve(values[i], masks[i], curve_id=f"c{i:04d}", group_id=group_labels[i])
        for i in range(n_total)
    )
    return validate_dataset(GroupedDataset(grid=grid, curves=curves)), truth


def truth_record(config: ScenarioConfig, truth: GroundTruth, grid: Grid) -> dict:
    """JSON-ready ground-truth record with full provenance."""
    rec = truth.to_dict()
    rec["grid"] = [float(x) for x in grid.points]
    rec["config"] = config.to_dict()
    return rec
