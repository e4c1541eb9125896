"""Robust functional signal-to-noise ratio and its multiscale window-averaged
aggregation, rendered as the effect-size heatmap.

The estimator variance is pooled across groups from within-group curve
bootstraps refitted with the frozen knots and penalty of the observed fits.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from ._svgplot import render_heatmap_svg
from .datamodel import Grid
from .errors import ConfigError, DegenerateResample, EffectSizeWarning
from .rngutil import substream
from .splinefit import GroupFit, MEstimatorConfig, base_weights, build_basis, fit_many, make_penalty

_BOOT = 0xB007


@dataclass(frozen=True, eq=False)
class VarianceEstimate:
    """Pooled per-observation variance of the group location estimates."""

    order: int
    xi_sq: np.ndarray  # (m,)
    per_group_variance: np.ndarray  # (k, m) raw bootstrap replicate variances
    R: int


@dataclass(frozen=True, eq=False)
class EffectSizeMap:
    """Pointwise fSNR^2 and its window means over the scale ladder.

    ``matrix[r]`` holds the means for window width ``ladder[r]``; ``symmetric``
    flags cells whose window fit inside the domain without truncation.
    """

    order: int
    fsnr_sq: np.ndarray  # (m,)
    ladder: np.ndarray  # (S,)
    matrix: np.ndarray  # (S, m)
    symmetric: np.ndarray  # (S, m) bool


def _draw_counts(rng: np.random.Generator, n_g: int) -> np.ndarray:
    """Within-group resample multiplicities; redraws degenerate resamples."""
    for _ in range(10):
        draw = rng.integers(0, n_g, n_g)
        if n_g < 2 or np.unique(draw).size >= 2:
            return np.bincount(draw, minlength=n_g).astype(float)
    raise DegenerateResample(f"resample of group size {n_g} kept collapsing")


def _boot_block(args) -> np.ndarray:
    y, base_w, cw_block, basis, penalty, lam, mcfg, init = args
    return fit_many(y, base_w, cw_block, basis, penalty, lam, mcfg, init=init).coef @ basis.T


def bootstrap_variance(
    grid: Grid,
    y: np.ndarray,
    masks: np.ndarray,
    labels: np.ndarray,
    group_ids: list[str],
    fits: dict[tuple[str, int], GroupFit],
    order: int,
    R: int,
    seed: int,
    mcfg: MEstimatorConfig,
    block_size: int = 128,
    workers: int = 1,
) -> VarianceEstimate:
    """Pointwise variance of each group's refitted location estimate over R
    within-group curve resamples, pooled across groups on the per-observation
    scale: xi^2 = sum_g (n_g / n) * n_g * v_g."""
    if R < 100:
        raise ConfigError(f"need at least 100 bootstrap replicates, got {R}")
    labels = np.asarray(labels)
    n = labels.size
    base_w = base_weights(masks)
    per_group = []
    sizes = []
    for gi, gid in enumerate(group_ids):
        idx = np.flatnonzero(labels == gid)
        n_g = idx.size
        sizes.append(n_g)
        gf = fits[(gid, order)]
        basis, _ = build_basis(grid, gf.n_interior, gf.degree)
        penalty = make_penalty(gf.knot_vector, gf.degree, mcfg)
        cw = np.zeros((R, n))
        for r in range(R):
            cw[r, idx] = _draw_counts(substream(seed, _BOOT, gi, r), n_g)
        # resampled fits sit near the observed fit, so seed the batch with it
        tasks = [
            (y, base_w, cw[lo : min(lo + block_size, R)], basis, penalty, gf.lam, mcfg, gf.coef)
            for lo in range(0, R, block_size)
        ]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as pool:
                blocks = list(pool.map(_boot_block, tasks))
        else:
            blocks = [_boot_block(t) for t in tasks]
        theta = np.concatenate(blocks, axis=0)  # (R, m)
        per_group.append(theta.var(axis=0, ddof=1))
    per_group = np.array(per_group)
    sizes = np.array(sizes, dtype=float)
    weights = sizes / sizes.sum()
    xi_sq = np.einsum("g,g,gm->m", weights, sizes, per_group)
    return VarianceEstimate(order=order, xi_sq=xi_sq, per_group_variance=per_group, R=R)


def fsnr(theta: np.ndarray, group_sizes: np.ndarray, xi_sq: np.ndarray) -> np.ndarray:
    """Robust functional signal-to-noise ratio squared:
    sum_g n_g (theta_g - theta_bar)^2 / xi^2, with 0/0 defined as 0."""
    theta = np.asarray(theta, dtype=float)
    sizes = np.asarray(group_sizes, dtype=float)
    alphas = sizes / sizes.sum()
    bar = np.einsum("g,gm->m", alphas, theta)
    num = np.einsum("g,gm->m", sizes, (theta - bar[None, :]) ** 2)
    xi_sq = np.asarray(xi_sq, dtype=float)
    out = np.zeros_like(num)
    pos = xi_sq > 0
    out[pos] = num[pos] / xi_sq[pos]
    bad = (~pos) & (num > 0)
    if np.any(bad):
        warnings.warn(
            f"zero variance with nonzero signal at {int(bad.sum())} grid point(s); "
            "reporting +inf",
            EffectSizeWarning,
            stacklevel=2,
        )
        out[bad] = np.inf
    return out


def default_ladder(grid: Grid) -> np.ndarray:
    """Linear window ladder: multiples of the mean spacing up to the domain."""
    s = grid.mean_spacing()
    return s * np.arange(1, grid.m)


def aggregate(
    fsnr_sq: np.ndarray, grid: Grid, ladder: np.ndarray | None = None, order: int = 0
) -> EffectSizeMap:
    """Window means of fSNR^2 for every scale in the ladder.

    Each cell averages the grid points inside [max(a, t - w/2), min(b, t + w/2)]
    by trapezoidal quadrature over the realized point span (single-point windows
    return the pointwise value, which makes the bottom row the fSNR^2 sequence
    itself). Rows at the full domain width average the whole domain. The
    ``symmetric`` mask marks cells whose window needed no boundary truncation.
    """
    f = np.asarray(fsnr_sq, dtype=float)
    t = grid.points
    a, b = grid.domain
    span_t = grid.length
    tol = 1e-9 * max(span_t, 1.0)
    if ladder is None:
        ladder = default_ladder(grid)
    ladder = np.asarray(ladder, dtype=float)
    if np.any(ladder <= 0) or np.any(ladder > span_t + tol):
        raise ConfigError("ladder widths must lie in (0, |domain|]")

    seg = 0.5 * (f[:-1] + f[1:]) * np.diff(t)
    ct = np.concatenate([[0.0], np.cumsum(seg)])
    full_mean = ct[-1] / (t[-1] - t[0])

    matrix = np.empty((ladder.size, grid.m))
    symmetric = np.empty((ladder.size, grid.m), dtype=bool)
    for r, width in enumerate(ladder):
        symmetric[r] = (t - width / 2.0 >= a - tol) & (t + width / 2.0 <= b + tol)
        if width >= span_t - tol:
            matrix[r] = full_mean
            continue
        lo = np.searchsorted(t, t - width / 2.0 - tol, side="left")
        hi = np.searchsorted(t, t + width / 2.0 + tol, side="right") - 1
        span = t[hi] - t[lo]
        integral = ct[hi] - ct[lo]
        with np.errstate(invalid="ignore", divide="ignore"):
            matrix[r] = np.where(span > 0, integral / np.where(span > 0, span, 1.0), f)
    return EffectSizeMap(
        order=order, fsnr_sq=f, ladder=ladder, matrix=matrix, symmetric=symmetric
    )


def effect_size_map(
    grid: Grid,
    theta: np.ndarray,
    group_sizes: np.ndarray,
    variance: VarianceEstimate,
    ladder: np.ndarray | None = None,
) -> EffectSizeMap:
    values = fsnr(theta, group_sizes, variance.xi_sq)
    return aggregate(values, grid, ladder, order=variance.order)


def render_heatmap(emap: EffectSizeMap, grid: Grid, path, title: str | None = None) -> None:
    """Write the heatmap SVG: scale on the vertical axis (fine at the bottom),
    triangle contour, sequential colors, and a numeric legend."""
    render_heatmap_svg(
        emap.matrix,
        emap.ladder,
        grid.points,
        emap.symmetric,
        path,
        title=title or f"effect size map (order {emap.order})",
    )
