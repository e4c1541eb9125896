"""Kernel-weighted local polynomial pre-smoothing of each observed segment,
yielding values and derivatives up to order L on the common grid.

The smoother never crosses a missing segment: every local fit uses only the
points of the run containing the target. Each (run, bandwidth, degree, order)
defines a fixed linear operator, which makes leave-one-out cross-validation a
cheap diagonal identity and lets identical masks share work.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .datamodel import Grid, GroupedDataset, mask_runs
from .errors import BandwidthWarning, SingularLocalFit, TooFewPoints

_WIDEN_CAP = 3  # bandwidth doublings allowed when a local fit lacks support


@dataclass(frozen=True)
class SmoothingConfig:
    orders: int = 1  # L: derivatives computed for orders 0..L
    bandwidth_inflation: float = 1.5  # per derivative order
    n_candidates: int = 12
    global_bandwidth: bool = False

    def degree(self, order: int) -> int:
        return order + 1


@dataclass(frozen=True, eq=False)
class SmoothedSample:
    """Per-curve smoothed values and derivatives on the grid.

    ``values[l]`` is defined only where ``masks[l]`` is True; derivative masks
    drop runs shorter than the minimum length for their fitting degree.
    """

    curve_id: str
    group_id: str
    values: np.ndarray  # (L+1, m)
    masks: np.ndarray  # (L+1, m) bool
    bandwidths: tuple[float, ...]
    degrees: tuple[int, ...]


def bandwidth_candidates(grid: Grid, n_candidates: int = 12) -> np.ndarray:
    """Log-spaced candidates from 2x the mean spacing to a quarter of the domain."""
    lo = 2.0 * grid.mean_spacing()
    hi = 0.25 * grid.length
    if hi <= lo:
        hi = lo * 1.0001
    return np.geomspace(lo, hi, n_candidates)


def _epanechnikov(u: np.ndarray) -> np.ndarray:
    out = 1.0 - u * u
    out[out < 0.0] = 0.0
    return 0.75 * out


def _run_smoother(pts: np.ndarray, h: float, degree: int, order: int) -> np.ndarray:
    """Linear operator S (R x R) mapping run values to order-th local-poly
    coefficients times order!, at every run point. Widens the bandwidth locally
    (doubling, capped) where the kernel support is too thin."""
    r = pts.size
    diff = pts[None, :] - pts[:, None]  # (target, source)
    w = _epanechnikov(diff / h)
    support = (w > 0.0).sum(axis=1)
    need = degree + 1
    deficient = np.flatnonzero(support < need)
    for tau in deficient:
        h_loc = h
        for _ in range(_WIDEN_CAP):
            h_loc *= 2.0
            w_tau = _epanechnikov(diff[tau] / h_loc)
            if (w_tau > 0.0).sum() >= need:
                w[tau] = w_tau
                break
        else:
            raise SingularLocalFit(
                f"local fit at t={pts[tau]} lacks {need} in-bandwidth points "
                f"after {_WIDEN_CAP} bandwidth doublings"
            )
    powers = diff[:, None, :] ** np.arange(degree + 1)[None, :, None]  # (R, p+1, R)
    xw = powers * w[:, None, :]
    normal = xw @ powers.transpose(0, 2, 1)  # (R, p+1, p+1)
    rows = np.linalg.solve(normal, xw)  # (R, p+1, R)
    return math.factorial(order) * rows[:, order, :]


class _SmootherCache:
    """Memoizes run smoothers keyed by (run points, h, degree, order)."""

    def __init__(self):
        self._store: dict = {}

    def get(self, pts: np.ndarray, h: float, degree: int, order: int) -> np.ndarray:
        key = (pts.tobytes(), float(h), degree, order)
        s = self._store.get(key)
        if s is None:
            s = _run_smoother(pts, h, degree, order)
            self._store[key] = s
        return s


def local_poly(
    grid: Grid,
    values: np.ndarray,
    mask: np.ndarray,
    bandwidth: float,
    degree: int,
    order: int = 0,
    _cache: _SmootherCache | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Smooth one curve at the given derivative order.

    Returns (smoothed, out_mask); runs shorter than degree + 2 points are
    masked out rather than extrapolated.
    """
    if degree < order:
        raise TooFewPoints(f"degree {degree} cannot produce order-{order} derivatives")
    if bandwidth <= 0:
        raise TooFewPoints("bandwidth must be positive")
    cache = _cache or _SmootherCache()
    out = np.full(grid.m, np.nan)
    out_mask = np.zeros(grid.m, dtype=bool)
    for start, stop in mask_runs(mask):
        if stop - start < degree + 2:
            continue
        pts = grid.points[start:stop]
        s = cache.get(pts, bandwidth, degree, order)
        out[start:stop] = s @ values[start:stop]
        out_mask[start:stop] = True
    return out, out_mask


def _loo_cv_error(
    grid: Grid, values: np.ndarray, mask: np.ndarray, h: float, degree: int,
    cache: _SmootherCache,
) -> float:
    """Mean squared leave-one-point-out prediction error; inf when some target
    cannot be predicted at this bandwidth."""
    total = 0.0
    count = 0
    for start, stop in mask_runs(mask):
        if stop - start < degree + 2:
            continue
        pts = grid.points[start:stop]
        diff = np.abs(pts[None, :] - pts[:, None])
        support_wo_self = ((diff < h) & (diff > 0.0)).sum(axis=1)
        if np.any(support_wo_self < degree + 1):
            return np.inf
        s = cache.get(pts, h, degree, 0)
        diag = np.diag(s)
        if np.any(1.0 - diag < 1e-10):
            return np.inf
        y = values[start:stop]
        fitted = s @ y
        loo = (fitted - diag * y) / (1.0 - diag)
        total += float(np.sum((y - loo) ** 2))
        count += y.size
    if count == 0:
        return np.inf
    return total / count


def select_bandwidth(
    grid: Grid,
    values: np.ndarray,
    mask: np.ndarray,
    degree: int,
    candidates: np.ndarray | None = None,
    _cache: _SmootherCache | None = None,
) -> tuple[float, np.ndarray]:
    """Leave-one-point-out CV over the candidate bandwidths.

    Returns (bandwidth, cv_scores); ties go to the smallest candidate.
    """
    n_obs = int(np.asarray(mask, bool).sum())
    if n_obs < degree + 2:
        raise TooFewPoints(f"need at least {degree + 2} observed points, have {n_obs}")
    if n_obs == degree + 2:
        warnings.warn(
            "bandwidth CV running with the minimal number of observed points",
            BandwidthWarning,
            stacklevel=2,
        )
    if candidates is None:
        candidates = bandwidth_candidates(grid)
    cache = _cache or _SmootherCache()
    scores = np.array(
        [_loo_cv_error(grid, values, mask, float(h), degree, cache) for h in candidates]
    )
    if not np.any(np.isfinite(scores)):
        raise TooFewPoints("no candidate bandwidth admits a leave-one-out fit")
    best = int(np.argmin(scores))
    return float(candidates[best]), scores


def smooth_curve(
    grid: Grid,
    values: np.ndarray,
    mask: np.ndarray,
    curve_id: str,
    group_id: str,
    config: SmoothingConfig = SmoothingConfig(),
    bandwidth: float | None = None,
    candidates: np.ndarray | None = None,
    _cache: _SmootherCache | None = None,
) -> SmoothedSample:
    """Pre-smooth one curve for every order 0..L."""
    cache = _cache or _SmootherCache()
    if bandwidth is None:
        bandwidth, _ = select_bandwidth(
            grid, values, mask, config.degree(0), candidates, _cache=cache
        )
    n_orders = config.orders + 1
    vals = np.full((n_orders, grid.m), np.nan)
    masks = np.zeros((n_orders, grid.m), dtype=bool)
    bandwidths = []
    degrees = []
    for order in range(n_orders):
        h = bandwidth * config.bandwidth_inflation**order
        deg = config.degree(order)
        vals[order], masks[order] = local_poly(
            grid, values, mask, h, deg, order, _cache=cache
        )
        bandwidths.append(h)
        degrees.append(deg)
    return SmoothedSample(
        curve_id=curve_id,
        group_id=group_id,
        values=vals,
        masks=masks,
        bandwidths=tuple(bandwidths),
        degrees=tuple(degrees),
    )


def smooth_dataset(
    ds: GroupedDataset, config: SmoothingConfig = SmoothingConfig()
) -> list[SmoothedSample]:
    """Pre-smooth every curve; with ``global_bandwidth`` one shared bandwidth
    minimizes the summed CV error across curves."""
    cache = _SmootherCache()
    candidates = bandwidth_candidates(ds.grid, config.n_candidates)
    shared: float | None = None
    if config.global_bandwidth:
        totals = np.zeros(candidates.size)
        for c in ds.curves:
            _, scores = select_bandwidth(
                ds.grid, c.values, c.mask, config.degree(0), candidates, _cache=cache
            )
            totals += scores
        if not np.any(np.isfinite(totals)):
            raise TooFewPoints("no shared bandwidth is feasible for every curve")
        shared = float(candidates[int(np.argmin(totals))])
    return [
        smooth_curve(
            ds.grid, c.values, c.mask, c.curve_id, c.group_id, config,
            bandwidth=shared, candidates=candidates, _cache=cache,
        )
        for c in ds.curves
    ]
