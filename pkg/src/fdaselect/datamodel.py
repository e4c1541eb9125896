"""Core domain types: sampling grid, masked curves, grouped datasets, and the
circular interval (arc) family used by the interval-wise testing engine.

All types are immutable after construction; operations are pure functions.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    CoverageWarning,
    EmptyGroup,
    InputError,
    NonFiniteValue,
    ScatteredMask,
    UncoveredGridPoint,
)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing sample points t_1 < ... < t_m inside a domain [a, b]."""

    points: np.ndarray
    domain: tuple[float, float] | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 3:
            raise InputError(f"grid needs at least 3 points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteValue("grid contains non-finite points")
        if not np.all(np.diff(pts) > 0):
            raise InputError("grid points must be strictly increasing")
        dom = self.domain
        if dom is None:
            dom = (float(pts[0]), float(pts[-1]))
        a, b = float(dom[0]), float(dom[1])
        if not (a <= pts[0] and pts[-1] <= b):
            raise InputError(f"grid points must lie within the domain [{a}, {b}]")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "domain", (a, b))

    @property
    def m(self) -> int:
        return self.points.size

    @property
    def length(self) -> float:
        """Domain length b - a."""
        a, b = self.domain
        return b - a

    def spacing(self) -> np.ndarray:
        """Consecutive gaps t_{j+1} - t_j (length m - 1)."""
        return np.diff(self.points)

    def mean_spacing(self) -> float:
        return float(np.mean(self.spacing()))

    def same_as(self, other: "Grid") -> bool:
        return np.array_equal(self.points, other.points) and self.domain == other.domain


def mask_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True entries as half-open index pairs (start, stop)."""
    m = np.asarray(mask, dtype=bool)
    if m.size == 0:
        return []
    padded = np.concatenate(([False], m, [False])).astype(int)
    d = np.diff(padded)
    starts = np.flatnonzero(d == 1)
    stops = np.flatnonzero(d == -1)
    return list(zip(starts.tolist(), stops.tolist()))


@dataclass(frozen=True, eq=False)
class GriddedCurve:
    """One subject's sampled trajectory with its observation mask.

    ``values`` may hold anything (NaN included) at masked-out entries; numeric
    code must never read them there.
    """

    values: np.ndarray
    mask: np.ndarray
    curve_id: str
    group_id: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        mk = np.asarray(self.mask, dtype=bool)
        if v.shape != mk.shape or v.ndim != 1:
            raise InputError(
                f"curve {self.curve_id}: values/mask shape mismatch {v.shape} vs {mk.shape}"
            )
        if not mk.any():
            raise InputError(f"curve {self.curve_id}: mask has no observed entries")
        if not np.all(np.isfinite(v[mk])):
            raise NonFiniteValue(f"curve {self.curve_id}: non-finite observed value")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "mask", _readonly(mk))

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    def observed_runs(self) -> list[tuple[int, int]]:
        return mask_runs(self.mask)


@dataclass(frozen=True)
class ValidationConfig:
    """Knobs for dataset validation.

    ``max_observed_runs`` caps how many contiguous observed segments a curve
    may have (segment-structured missingness); ``None`` disables the check.
    """

    low_coverage_threshold: float = 0.2
    max_observed_runs: int | None = 2


@dataclass(frozen=True, eq=False)
class GroupedDataset:
    """k labeled groups of curves sampled on one common grid."""

    grid: Grid
    curves: tuple[GriddedCurve, ...]
    coverage: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        curves = tuple(self.curves)
        if not curves:
            raise InputError("dataset has no curves")
        m = self.grid.m
        for c in curves:
            if c.values.size != m:
                raise InputError(f"curve {c.curve_id}: length {c.values.size} != grid m={m}")
        object.__setattr__(self, "curves", curves)
        if self.coverage is not None:
            object.__setattr__(self, "coverage", _readonly(np.asarray(self.coverage, float)))

    @property
    def group_ids(self) -> list[str]:
        """Distinct group ids in order of first appearance."""
        seen: dict[str, None] = {}
        for c in self.curves:
            seen.setdefault(c.group_id, None)
        return list(seen)

    @property
    def group_sizes(self) -> dict[str, int]:
        sizes = {g: 0 for g in self.group_ids}
        for c in self.curves:
            sizes[c.group_id] += 1
        return sizes

    @property
    def n(self) -> int:
        return len(self.curves)

    @property
    def k(self) -> int:
        return len(self.group_ids)

    def group_indices(self, group_id: str) -> np.ndarray:
        return np.array([i for i, c in enumerate(self.curves) if c.group_id == group_id])

    def value_matrix(self) -> np.ndarray:
        """(n, m) matrix of values with NaN at masked-out cells."""
        out = np.full((self.n, self.grid.m), np.nan)
        for i, c in enumerate(self.curves):
            out[i, c.mask] = c.values[c.mask]
        return out

    def mask_matrix(self) -> np.ndarray:
        return np.array([c.mask for c in self.curves])


def validate_dataset(
    raw: GroupedDataset, config: ValidationConfig = ValidationConfig()
) -> GroupedDataset:
    """Verify dataset invariants and attach the coverage fraction per grid point.

    Raises EmptyGroup, UncoveredGridPoint, NonFiniteValue, or ScatteredMask;
    emits a CoverageWarning when coverage dips below the configured floor.
    """
    if raw.k < 2:
        raise EmptyGroup(f"need at least 2 groups, found {raw.k}")
    for g, size in raw.group_sizes.items():
        if size == 0:
            raise EmptyGroup(f"group {g} is empty")
    if config.max_observed_runs is not None:
        for c in raw.curves:
            runs = c.observed_runs()
            if len(runs) > config.max_observed_runs:
                raise ScatteredMask(
                    f"curve {c.curve_id}: {len(runs)} observed segments exceed the "
                    f"cap of {config.max_observed_runs}; pass max_observed_runs=None "
                    "to accept scattered masks"
                )
    masks = raw.mask_matrix()
    coverage = masks.mean(axis=0)
    uncovered = np.flatnonzero(~masks.any(axis=0))
    if uncovered.size:
        t_bad = raw.grid.points[uncovered[0]]
        raise UncoveredGridPoint(
            f"{uncovered.size} grid point(s) observed by no curve (first at t={t_bad})"
        )
    low = np.flatnonzero(coverage < config.low_coverage_threshold)
    if low.size:
        warnings.warn(
            f"{low.size} grid point(s) with coverage below "
            f"{config.low_coverage_threshold} (min={coverage.min():.3f})",
            CoverageWarning,
            stacklevel=2,
        )
    return GroupedDataset(grid=raw.grid, curves=raw.curves, coverage=coverage)


@dataclass(frozen=True, eq=False)
class IntervalSet:
    """The circular arc family over grid indices 0..m-1.

    Contains every contiguous window of length 1..m-1 (wrap-around arcs realize
    complements of ordinary windows) plus the full domain: m*(m-1) + 1 arcs.
    """

    m: int
    starts: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "starts", _readonly(np.asarray(self.starts, dtype=np.int64)))
        object.__setattr__(self, "lengths", _readonly(np.asarray(self.lengths, dtype=np.int64)))

    @property
    def n_arcs(self) -> int:
        return self.starts.size

    def members(self, arc_index: int) -> np.ndarray:
        """Grid indices covered by one arc, in circular order."""
        s = int(self.starts[arc_index])
        ln = int(self.lengths[arc_index])
        return (s + np.arange(ln)) % self.m

    def pieces(self, arc_index: int) -> list[tuple[int, int]]:
        """The arc as 1 or 2 contiguous inclusive index ranges in t-order."""
        s = int(self.starts[arc_index])
        ln = int(self.lengths[arc_index])
        if s + ln <= self.m:
            return [(s, s + ln - 1)]
        return [(0, s + ln - self.m - 1), (s, self.m - 1)]

    def contains(self, arc_index: int, j: int) -> bool:
        s = int(self.starts[arc_index])
        ln = int(self.lengths[arc_index])
        return (j - s) % self.m < ln

    def complement_arc(self, arc_index: int) -> tuple[int, int]:
        """(start, length) of the complement arc; full-domain arcs have none."""
        s = int(self.starts[arc_index])
        ln = int(self.lengths[arc_index])
        if ln >= self.m:
            raise InputError("full-domain arc has no complement in the family")
        return ((s + ln) % self.m, self.m - ln)

    def windows_only(self) -> "IntervalSet":
        """Sub-family of non-wrapping arcs (ordinary windows incl. full domain)."""
        keep = self.starts + self.lengths <= self.m
        return IntervalSet(self.m, self.starts[keep], self.lengths[keep])

    def singleton_index(self) -> np.ndarray:
        """Map grid index j -> position of the singleton arc {j}."""
        out = np.full(self.m, -1, dtype=np.int64)
        ones = np.flatnonzero(self.lengths == 1)
        out[self.starts[ones]] = ones
        if np.any(out < 0):
            raise InputError("arc family lacks some singleton arc")
        return out


def enumerate_arcs(m: int) -> IntervalSet:
    """All circular arcs of length 1..m-1 plus the full domain: m(m-1)+1 arcs."""
    if m < 3:
        raise InputError(f"need m >= 3, got {m}")
    lengths = np.repeat(np.arange(1, m), m)
    starts = np.tile(np.arange(m), m - 1)
    starts = np.concatenate([starts, [0]])
    lengths = np.concatenate([lengths, [m]])
    return IntervalSet(m, starts, lengths)


CSV_HEADER = ["curve_id", "group", "t", "value"]


def load_dataset(path, config: ValidationConfig = ValidationConfig()) -> GroupedDataset:
    """Ingest a long-format CSV (curve_id, group, t, value); absent (curve, t)
    rows mean unobserved. The grid is the sorted set of distinct t values."""
    rows: list[tuple[str, str, float, float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise InputError(f"{path}: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise InputError(f"{path}:{lineno}: expected 4 columns")
            try:
                rows.append((row[0], row[1], float(row[2]), float(row[3])))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    t_all = np.array([r[2] for r in rows])
    grid_pts = np.unique(t_all)
    grid = Grid(grid_pts)
    t_index = {t: j for j, t in enumerate(grid_pts.tolist())}
    order: dict[tuple[str, str], int] = {}
    for cid, gid, _, _ in rows:
        order.setdefault((cid, gid), len(order))
    values = np.full((len(order), grid.m), np.nan)
    masks = np.zeros((len(order), grid.m), dtype=bool)
    for cid, gid, t, v in rows:
        i = order[(cid, gid)]
        j = t_index[t]
        values[i, j] = v
        masks[i, j] = True
    curves = tuple(
        GriddedCurve(values[i], masks[i], curve_id=cid, group_id=gid)
        for (cid, gid), i in order.items()
    )
    return validate_dataset(GroupedDataset(grid=grid, curves=curves), config)


def write_dataset(ds: GroupedDataset, path) -> None:
    """Write the observed cells of a dataset in the long CSV format."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        pts = ds.grid.points
        for c in ds.curves:
            for j in np.flatnonzero(c.mask):
                writer.writerow([c.curve_id, c.group_id, repr(float(pts[j])), repr(float(c.values[j]))])


def dataset_metadata(ds: GroupedDataset) -> dict:
    """JSON-ready description of a dataset (grid, groups, coverage)."""
    cov = ds.coverage
    return {
        "m": ds.grid.m,
        "domain": list(ds.grid.domain),
        "grid": [float(t) for t in ds.grid.points],
        "n_curves": ds.n,
        "groups": [
            {"group_id": g, "size": ds.group_sizes[g]} for g in ds.group_ids
        ],
        "coverage": None if cov is None else [float(x) for x in cov],
        "min_coverage": None if cov is None else float(cov.min()),
    }
