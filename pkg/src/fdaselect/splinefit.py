"""Penalized B-spline M-estimation of a group location function via IRWLS with
Huber loss, plus GCV selection of the roughness penalty and curve-wise CV
selection of the knot count.

``fit_many`` is the workhorse: it runs many fits that share one data matrix but
differ in per-curve weights and/or penalty strength (model-selection folds,
permutation relabelings, bootstrap multiplicities) as a single batched
computation. The surrogate-quadratic update guarantees a monotone objective;
every fit records its objective trail and a violation raises DescentViolation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .datamodel import Grid
from .errors import (
    AllFitsFailed,
    ConfigError,
    ConvergenceWarning,
    DegenerateKnots,
    DescentViolation,
    SingularSystem,
)
from .rngutil import substream

_OBJ_SLACK = 1e-12  # relative slack for the monotone-objective assertion
_LAMBDA_FLOOR = 1e-8

try:  # single fused pass over the weight tensor; falls back to numpy if absent
    from numba import njit, prange

    # Branchless inner loop over local row buffers so it vectorizes; each batch
    # row accumulates sequentially, which keeps results identical for any
    # thread count.
    @njit(parallel=True, cache=True, fastmath=True)
    def _irls_pass(y0, bw, cw, fitted, delta):
        n_fits, n = cw.shape
        m = y0.shape[1]
        a = np.empty((n_fits, m))
        z = np.empty((n_fits, m))
        obj = np.empty(n_fits)
        wrss = np.empty(n_fits)
        for b in prange(n_fits):
            av = np.zeros(m)
            zv = np.zeros(m)
            obj_b = 0.0
            wrss_b = 0.0
            fb = fitted[b]
            for i in range(n):
                c = cw[b, i]
                if c == 0.0:
                    continue
                yr = y0[i]
                br = bw[i]
                for j in range(m):
                    u = c * br[j]
                    r = yr[j] - fb[j]
                    ar = abs(r)
                    small = min(ar, delta)
                    v = u * (delta / max(ar, delta))
                    av[j] += v
                    zv[j] += v * yr[j]
                    obj_b += u * (0.5 * small * small + delta * max(ar - delta, 0.0))
                    wrss_b += v * r * r
            a[b] = av
            z[b] = zv
            obj[b] = obj_b
            wrss[b] = wrss_b
        return a, z, obj, wrss

    # B-spline rows have at most degree+1 consecutive nonzeros, so the normal
    # matrix B' diag(a) B accumulates in O(m k^2) per fit instead of O(m d^2).
    @njit(parallel=True, cache=True)
    def _normal_matrix(a, offsets, vals, d):
        n_fits, m = a.shape
        k = vals.shape[1]
        out = np.zeros((n_fits, d, d))
        for b in prange(n_fits):
            for j in range(m):
                ab = a[b, j]
                if ab != 0.0:
                    o = offsets[j]
                    for p in range(k):
                        vp = ab * vals[j, p]
                        for q in range(k):
                            out[b, o + p, o + q] += vp * vals[j, q]
        return out

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard speedup, soft dependency
    _HAVE_NUMBA = False

    def _irls_pass(y0, bw, cw, fitted, delta):
        u = cw[:, :, None] * bw[None, :, :]
        r = y0[None, :, :] - fitted[:, None, :]
        ar = np.abs(r)
        w = delta / np.maximum(ar, delta)
        rho = 0.5 * np.minimum(ar, delta) ** 2 + delta * np.maximum(ar - delta, 0.0)
        v = u * w
        a = v.sum(axis=1)
        z = (v * y0[None, :, :]).sum(axis=1)
        obj = np.einsum("bnm,bnm->b", u, rho)
        wrss = np.einsum("bnm,bnm->b", v, r * r)
        return a, z, obj, wrss

    def _normal_matrix(a, offsets, vals, d):
        n_fits, m = a.shape
        k = vals.shape[1]
        out = np.zeros((n_fits, d, d))
        for j in range(m):
            o = offsets[j]
            block = vals[j, :, None] * vals[j, None, :]
            out[:, o : o + k, o : o + k] += a[:, j, None, None] * block[None]
        return out


@dataclass(frozen=True)
class MEstimatorConfig:
    delta: float = 1.0
    knot_candidates: tuple[int, ...] = (10, 20, 40)
    n_lambda: int = 20
    lambda_range: tuple[float, float] = (1e-6, 1e2)
    degree: int = 3
    penalty_order: int = 2
    penalty_kind: str = "difference"  # or "curvature_gram"
    max_iter: int = 100
    tol: float = 1e-8
    cv_folds: int = 5

    def __post_init__(self):
        if self.delta <= 0:
            raise ConfigError("huber delta must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if self.lambda_range[0] <= 0:
            raise ConfigError("lambda candidates must be positive")
        if self.penalty_kind not in ("difference", "curvature_gram"):
            raise ConfigError(f"unknown penalty kind {self.penalty_kind!r}")
        if not self.knot_candidates:
            raise ConfigError("need at least one knot candidate")


@dataclass(frozen=True, eq=False)
class GroupFit:
    """Converged M-estimate for one (group, derivative order)."""

    group_id: str
    order: int
    n_interior: int
    knot_vector: np.ndarray
    degree: int
    lam: float
    delta: float
    coef: np.ndarray
    grid_values: np.ndarray
    iterations: int
    converged: bool
    objective_history: np.ndarray
    gcv_scores: dict | None = None
    knot_scores: dict | None = None


def huber_rho(x, delta: float):
    """Huber loss: x^2/2 inside +-delta, linear beyond."""
    if delta <= 0:
        raise ConfigError("huber delta must be positive")
    ax = np.abs(np.asarray(x, dtype=float))
    return np.where(ax <= delta, 0.5 * ax * ax, delta * ax - 0.5 * delta * delta)


def huber_weight(r: np.ndarray, delta: float) -> np.ndarray:
    """IRWLS weight psi(r)/r = min(1, delta/|r|)."""
    ar = np.abs(r)
    with np.errstate(divide="ignore"):
        w = np.where(ar > delta, delta / ar, 1.0)
    return w


def knot_vector(domain: tuple[float, float], n_interior: int, degree: int) -> np.ndarray:
    """Clamped knot vector with equally spaced interior knots."""
    a, b = domain
    if n_interior < 0:
        raise DegenerateKnots("interior knot count must be >= 0")
    if not b > a:
        raise DegenerateKnots("degenerate domain for knots")
    interior = np.linspace(a, b, n_interior + 2)[1:-1]
    return np.concatenate([np.full(degree + 1, a), interior, np.full(degree + 1, b)])


def build_basis(grid: Grid, n_interior: int, degree: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """B-spline design matrix (m x d) on the grid; d = n_interior + degree + 1."""
    kv = knot_vector(grid.domain, n_interior, degree)
    x = np.clip(grid.points, kv[degree], kv[-degree - 1])
    design = BSpline.design_matrix(x, kv, degree).toarray()
    return design, kv


def basis_derivative(kv: np.ndarray, degree: int, x: np.ndarray, deriv: int) -> np.ndarray:
    d = kv.size - degree - 1
    spl = BSpline(kv, np.eye(d), degree, axis=0)
    return spl.derivative(deriv)(x)


def penalty_matrix(d: int, order: int = 2) -> np.ndarray:
    """Coefficient difference penalty P = D_order' D_order (P-spline form)."""
    if order >= d:
        raise ConfigError(f"penalty order {order} needs more than {order} coefficients")
    diff = np.diff(np.eye(d), order, axis=0)
    return diff.T @ diff


def curvature_gram(kv: np.ndarray, degree: int) -> np.ndarray:
    """Exact Gram matrix of second basis derivatives, integral of B_i'' B_j''."""
    if degree < 2:
        raise ConfigError("curvature penalty needs degree >= 2")
    d = kv.size - degree - 1
    spans = np.unique(kv)
    nodes, weights = np.polynomial.legendre.leggauss(max(degree, 2))
    gram = np.zeros((d, d))
    for lo, hi in zip(spans[:-1], spans[1:]):
        half = 0.5 * (hi - lo)
        x = lo + half * (nodes + 1.0)
        b2 = basis_derivative(kv, degree, x, 2)
        gram += half * (b2 * weights[:, None]).T @ b2
    return gram


def make_penalty(kv: np.ndarray, degree: int, config: MEstimatorConfig) -> np.ndarray:
    d = kv.size - degree - 1
    if config.penalty_kind == "curvature_gram":
        return curvature_gram(kv, degree)
    return penalty_matrix(d, config.penalty_order)


def base_weights(masks: np.ndarray) -> np.ndarray:
    """Per-cell weights delta_ij / sum_j delta_ij (one unit of weight per curve).

    Curves with no observed cells get all-zero weight and contribute nothing.
    """
    masks = np.asarray(masks, dtype=bool)
    counts = masks.sum(axis=1, keepdims=True)
    out = np.zeros(masks.shape)
    nz = counts[:, 0] > 0
    out[nz] = masks[nz] / counts[nz]
    return out


def lambda_scale(basis: np.ndarray, base_w: np.ndarray, penalty: np.ndarray) -> float:
    """Balance factor putting the relative lambda grid on the data's scale."""
    a0 = base_w.sum(axis=0)
    tr_fit = float(np.einsum("j,jp,jp->", a0, basis, basis))
    tr_pen = float(np.trace(penalty))
    if tr_pen <= 0:
        return 1.0
    return tr_fit / tr_pen


def lambda_grid(config: MEstimatorConfig, scale: float) -> np.ndarray:
    lo, hi = config.lambda_range
    return scale * np.geomspace(lo, hi, config.n_lambda)


@dataclass(frozen=True, eq=False)
class FitBatch:
    coef: np.ndarray  # (B, d)
    iterations: np.ndarray  # (B,)
    converged: np.ndarray  # (B,) bool
    objective_history: np.ndarray  # (n_steps, B), column b is fit b's trail
    wrss: np.ndarray | None = None
    n_cells: np.ndarray | None = None
    hat_trace: np.ndarray | None = None

    def gcv(self) -> np.ndarray:
        denom = (self.n_cells - self.hat_trace) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(denom > 0, self.n_cells * self.wrss / denom, np.inf)


def _basis_bands(basis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Compact row storage of a basis matrix whose rows have a short run of
    consecutive nonzeros (B-spline design matrices)."""
    m, d = basis.shape
    width = 1
    firsts = np.zeros(m, dtype=np.int64)
    for j in range(m):
        nz = np.flatnonzero(basis[j])
        if nz.size:
            firsts[j] = nz[0]
            width = max(width, int(nz[-1] - nz[0] + 1))
    width = min(width, d)
    offsets = np.minimum(firsts, d - width)
    vals = np.zeros((m, width))
    for j in range(m):
        o = offsets[j]
        vals[j] = basis[j, o : o + width]
    return offsets, vals


def _solve_penalized(bands, a: np.ndarray, rhs: np.ndarray,
                     lams: np.ndarray, penalty: np.ndarray) -> np.ndarray:
    """Solve (B' diag(a) B + 2*lam*P) c = rhs for a batch of fits."""
    offsets, vals, d = bands

    def _attempt(lam_vec):
        lhs = _normal_matrix(a, offsets, vals, d) + 2.0 * lam_vec[:, None, None] * penalty[None]
        return np.linalg.solve(lhs, rhs[:, :, None])[:, :, 0]

    try:
        return _attempt(lams)
    except np.linalg.LinAlgError:
        if np.any(lams <= 0.0):
            try:
                return _attempt(np.maximum(lams, _LAMBDA_FLOOR))
            except np.linalg.LinAlgError as exc:
                raise SingularSystem("penalized system singular even at the lambda floor") from exc
        raise SingularSystem("penalized least-squares system is singular")


def fit_many(
    y: np.ndarray,
    base_w: np.ndarray,
    curve_w: np.ndarray,
    basis: np.ndarray,
    penalty: np.ndarray,
    lams,
    config: MEstimatorConfig,
    want_gcv: bool = False,
    init: np.ndarray | None = None,
) -> FitBatch:
    """Run a batch of IRWLS fits sharing the data matrix ``y`` (n x m).

    ``curve_w`` (B x n) carries per-fit curve weights: 0/1 subsets for folds and
    permutation groups, resample multiplicities for the bootstrap. ``lams`` is a
    scalar or a per-fit vector of absolute penalty strengths. Fits start at the
    penalized least-squares solution unless ``init`` supplies coefficients
    (the objective is convex, so the start only affects iteration count).
    """
    y0 = np.ascontiguousarray(np.where(base_w > 0, np.nan_to_num(y, nan=0.0), 0.0))
    base_w = np.ascontiguousarray(base_w, dtype=float)
    curve_w = np.ascontiguousarray(np.atleast_2d(np.asarray(curve_w, dtype=float)))
    n_fits = curve_w.shape[0]
    lams = np.broadcast_to(np.asarray(lams, dtype=float), (n_fits,)).copy()
    if np.any(curve_w @ base_w.sum(axis=1) <= 0):
        raise ConfigError("each fit needs positive total observation weight")
    bands = (*_basis_bands(basis), basis.shape[1])
    m_i = (base_w > 0).sum(axis=1)
    delta = config.delta

    def quad_pen(c):
        return np.einsum("bp,pq,bq->b", c, penalty, c)

    if init is None:
        # penalized least-squares start (huber weights = 1)
        a0 = curve_w @ base_w
        rhs0 = (curve_w @ (base_w * y0)) @ basis
        coef = _solve_penalized(bands, a0, rhs0, lams, penalty)
    else:
        coef = np.array(np.broadcast_to(np.asarray(init, dtype=float), (n_fits, basis.shape[1])))

    iterations = np.zeros(n_fits, dtype=int)
    converged = np.zeros(n_fits, dtype=bool)
    cur_obj = np.empty(n_fits)
    final_a = np.empty((n_fits, y0.shape[1]))
    final_wrss = np.empty(n_fits)
    prev_step = np.full(n_fits, np.nan)

    # one fused pass gives the weights for the next solve plus the objective
    # and diagnostics at the current coefficients
    a, z, obj_data, wrss = _irls_pass(y0, base_w, curve_w, coef @ basis.T, delta)
    cur_obj[:] = obj_data + lams * quad_pen(coef)
    final_a[:] = a
    final_wrss[:] = wrss
    history = [cur_obj.copy()]

    rows = np.arange(n_fits)
    while rows.size and int(iterations[rows].max(initial=0)) < config.max_iter:
        new_coef = _solve_penalized(bands, a, z @ basis, lams[rows], penalty)
        irls_step = new_coef - coef[rows]
        step = np.linalg.norm(irls_step, axis=1)
        size = np.linalg.norm(coef[rows], axis=1)
        done = step <= config.tol * (size + 1e-30)

        # IRLS converges linearly, so extrapolate along the step by the
        # estimated rate; the move is kept only if the objective drops, which
        # leaves the limit point and the monotone-descent contract intact.
        rho = step / prev_step[rows]
        with np.errstate(invalid="ignore"):
            use_ext = (~done) & np.isfinite(rho) & (rho > 0.2) & (rho < 0.98)
        cand = new_coef.copy()
        if np.any(use_ext):
            factor = np.clip(rho[use_ext] / (1.0 - rho[use_ext]), 0.0, 49.0)
            cand[use_ext] += factor[:, None] * irls_step[use_ext]
        prev_step[rows] = step

        a, z, obj_data, wrss = _irls_pass(y0, base_w, curve_w[rows], cand @ basis.T, delta)
        obj_cand = obj_data + lams[rows] * quad_pen(cand)
        slack = _OBJ_SLACK * (1.0 + np.abs(cur_obj[rows]))
        fallback = obj_cand > cur_obj[rows] + slack
        if np.any(fallback & ~use_ext):
            worst = int(np.flatnonzero(fallback & ~use_ext)[0])
            raise DescentViolation(
                f"objective increased from {cur_obj[rows][worst]!r} to "
                f"{obj_cand[worst]!r} at iteration {int(iterations[rows][worst]) + 1}"
            )
        if np.any(fallback):
            fb = np.flatnonzero(fallback)
            cand[fb] = new_coef[fb]
            a_f, z_f, obj_f, wrss_f = _irls_pass(
                y0, base_w, curve_w[rows[fb]], new_coef[fb] @ basis.T, delta
            )
            obj_fb = obj_f + lams[rows[fb]] * quad_pen(new_coef[fb])
            bad = obj_fb > cur_obj[rows[fb]] + slack[fb]
            if np.any(bad):
                worst = int(np.flatnonzero(bad)[0])
                raise DescentViolation(
                    f"objective increased from {cur_obj[rows[fb]][worst]!r} to "
                    f"{obj_fb[worst]!r} at iteration {int(iterations[rows[fb]][worst]) + 1}"
                )
            a[fb] = a_f
            z[fb] = z_f
            obj_cand[fb] = obj_fb
            wrss[fb] = wrss_f

        coef[rows] = cand
        iterations[rows] += 1
        cur_obj[rows] = obj_cand
        final_a[rows] = a
        final_wrss[rows] = wrss
        history.append(cur_obj.copy())
        converged[rows[done]] = True
        keep = ~done
        rows = rows[keep]
        a = a[keep]
        z = z[keep]

    batch = FitBatch(
        coef=coef,
        iterations=iterations,
        converged=converged,
        objective_history=np.array(history),
    )
    if not want_gcv:
        return batch

    n_cells = curve_w @ m_i
    bab = _normal_matrix(final_a, *bands)
    lhs = bab + 2.0 * lams[:, None, None] * penalty[None]
    hat_trace = np.einsum("bpp->b", np.linalg.solve(lhs, bab))
    return FitBatch(
        coef=coef,
        iterations=iterations,
        converged=converged,
        objective_history=batch.objective_history,
        wrss=final_wrss,
        n_cells=n_cells,
        hat_trace=hat_trace,
    )


def irwls_fit(
    y: np.ndarray,
    base_w: np.ndarray,
    basis: np.ndarray,
    penalty: np.ndarray,
    lam: float,
    config: MEstimatorConfig,
    curve_w: np.ndarray | None = None,
) -> FitBatch:
    """Single IRWLS fit (batch of one)."""
    if curve_w is None:
        curve_w = np.ones((1, y.shape[0]))
    batch = fit_many(y, base_w, curve_w, basis, penalty, lam, config)
    if not batch.converged.all():
        warnings.warn(
            f"IRWLS stopped at the iteration cap ({config.max_iter})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return batch


def select_lambda_gcv(
    y: np.ndarray,
    base_w: np.ndarray,
    basis: np.ndarray,
    penalty: np.ndarray,
    lam_candidates: np.ndarray,
    config: MEstimatorConfig,
    curve_w: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """GCV = N * WRSS / (N - tr(H))^2 over the candidates; ties -> larger lambda."""
    lam_candidates = np.asarray(lam_candidates, dtype=float)
    if lam_candidates.size == 1:
        return float(lam_candidates[0]), np.zeros(1)
    n = y.shape[0]
    row = np.ones(n) if curve_w is None else np.asarray(curve_w, dtype=float)
    cw = np.tile(row, (lam_candidates.size, 1))
    # one fit at the middle candidate seeds the whole sweep
    mid = fit_many(y, base_w, row[None, :], basis, penalty,
                   lam_candidates[lam_candidates.size // 2], config)
    batch = fit_many(
        y, base_w, cw, basis, penalty, lam_candidates, config,
        want_gcv=True, init=mid.coef[0],
    )
    scores = batch.gcv()
    if not np.any(np.isfinite(scores)):
        raise AllFitsFailed("no lambda candidate produced a finite GCV score")
    best = lam_candidates.size - 1 - int(np.argmin(scores[::-1]))
    return float(lam_candidates[best]), scores


def select_knots_cv(
    y: np.ndarray,
    base_w: np.ndarray,
    grid: Grid,
    config: MEstimatorConfig,
    seed: int = 0,
) -> tuple[int, dict]:
    """5-fold CV over curves: fit train folds at their GCV lambda, score the
    Huber loss on held-out observed cells. Ties -> fewer knots."""
    candidates = tuple(config.knot_candidates)
    if len(candidates) == 1:
        return candidates[0], {"scores": {candidates[0]: 0.0}}
    n = y.shape[0]
    n_folds = min(config.cv_folds, n)
    if n_folds < 2:
        return min(candidates), {"scores": {}}
    perm = substream(seed, 0xF01D).permutation(n)
    fold_of = np.empty(n, dtype=int)
    fold_of[perm] = np.arange(n) % n_folds

    y0 = np.where(base_w > 0, np.nan_to_num(y, nan=0.0), 0.0)
    scores: dict[int, float] = {}
    per_candidate: dict[int, dict] = {}
    for n_interior in candidates:
        basis, kv = build_basis(grid, n_interior, config.degree)
        penalty = make_penalty(kv, config.degree, config)
        lams_rel = lambda_grid(config, lambda_scale(basis, base_w, penalty))
        cw = np.repeat(1.0 - (fold_of[None, :] == np.arange(n_folds)[:, None]), lams_rel.size, axis=0)
        lams = np.tile(lams_rel, n_folds)
        seed_fit = fit_many(y, base_w, np.ones((1, n)), basis, penalty,
                            lams_rel[lams_rel.size // 2], config)
        batch = fit_many(y, base_w, cw, basis, penalty, lams, config,
                         want_gcv=True, init=seed_fit.coef[0])
        gcv = batch.gcv().reshape(n_folds, lams_rel.size)
        # within each fold ties go to the larger lambda
        pick = lams_rel.size - 1 - np.argmin(gcv[:, ::-1], axis=1)
        chosen_rows = np.arange(n_folds) * lams_rel.size + pick
        fitted = batch.coef[chosen_rows] @ basis.T  # (n_folds, m)
        total = 0.0
        for fold in range(n_folds):
            test = fold_of == fold
            resid = y0[test] - fitted[fold][None, :]
            total += float(np.sum(base_w[test] * huber_rho(resid, config.delta)))
        scores[n_interior] = total
        per_candidate[n_interior] = {"lambda_per_fold": lams_rel[pick].tolist()}
    best = min(candidates)
    best_score = scores[best]
    for cand in sorted(candidates):
        if scores[cand] < best_score:
            best, best_score = cand, scores[cand]
    return best, {"scores": scores, "folds": n_folds, "per_candidate": per_candidate}


def fit_group(
    y: np.ndarray,
    masks: np.ndarray,
    grid: Grid,
    group_id: str,
    order: int,
    config: MEstimatorConfig,
    seed: int = 0,
    n_interior: int | None = None,
    lam: float | None = None,
) -> GroupFit:
    """Select knots and lambda on the given samples (unless frozen values are
    passed) and return the converged group fit."""
    base_w = base_weights(masks)
    knot_scores = None
    if n_interior is None:
        n_interior, knot_scores = select_knots_cv(y, base_w, grid, config, seed=seed)
    basis, kv = build_basis(grid, n_interior, config.degree)
    penalty = make_penalty(kv, config.degree, config)
    gcv_info = None
    if lam is None:
        lams = lambda_grid(config, lambda_scale(basis, base_w, penalty))
        lam, gcv_scores = select_lambda_gcv(y, base_w, basis, penalty, lams, config)
        gcv_info = {"candidates": lams.tolist(), "scores": gcv_scores.tolist()}
    batch = irwls_fit(y, base_w, basis, penalty, lam, config)
    coef = batch.coef[0]
    return GroupFit(
        group_id=group_id,
        order=order,
        n_interior=n_interior,
        knot_vector=kv,
        degree=config.degree,
        lam=float(lam),
        delta=config.delta,
        coef=coef,
        grid_values=basis @ coef,
        iterations=int(batch.iterations[0]),
        converged=bool(batch.converged[0]),
        objective_history=batch.objective_history[:, 0],
        gcv_scores=gcv_info,
        knot_scores=knot_scores,
    )
