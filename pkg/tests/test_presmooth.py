import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdaselect.datamodel import Grid
from fdaselect.errors import BandwidthWarning, TooFewPoints
from fdaselect.presmooth import (
    SmoothingConfig,
    bandwidth_candidates,
    local_poly,
    select_bandwidth,
    smooth_curve,
    smooth_dataset,
)

from conftest import make_dataset

GRID = Grid(np.linspace(0, 1, 60))
FULL = np.ones(60, dtype=bool)


class TestLocalPoly:
    def test_linear_reproduction_order0(self):
        y = 3.0 * GRID.points - 1.0
        out, mask = local_poly(GRID, y, FULL, bandwidth=0.1, degree=1, order=0)
        assert mask.all()
        assert np.max(np.abs(out - y)) < 1e-10

    def test_linear_slope_order1(self):
        y = 2.0 * GRID.points + 5.0
        out, mask = local_poly(GRID, y, FULL, bandwidth=0.15, degree=2, order=1)
        assert np.max(np.abs(out[mask] - 2.0)) < 1e-8

    def test_sin_derivative_accuracy(self):
        grid = Grid(np.linspace(0, 1, 100))
        y = np.sin(2 * np.pi * grid.points)
        sample = smooth_curve(grid, y, np.ones(100, dtype=bool), "c", "g",
                              SmoothingConfig(orders=1))
        truth = 2 * np.pi * np.cos(2 * np.pi * grid.points)
        interior = slice(10, 90)
        err = np.abs(sample.values[1][interior] - truth[interior])
        assert np.max(err) < 0.05 * 2 * np.pi

    def test_locality_across_runs(self):
        mask = FULL.copy()
        mask[25:35] = False
        rng = np.random.default_rng(0)
        y = rng.normal(size=60)
        base, _ = local_poly(GRID, y, mask, 0.08, 1, 0)
        y2 = y.copy()
        y2[:25] += 100.0  # perturb only the first run
        pert, _ = local_poly(GRID, y2, mask, 0.08, 1, 0)
        assert np.allclose(base[35:], pert[35:], atol=1e-12, equal_nan=True)
        assert not np.allclose(base[:25], pert[:25], equal_nan=True)

    def test_linearity_in_data(self):
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=60), rng.normal(size=60)
        sx, _ = local_poly(GRID, x, FULL, 0.1, 2, 0)
        sy, _ = local_poly(GRID, y, FULL, 0.1, 2, 0)
        sc, _ = local_poly(GRID, 2.0 * x - 3.0 * y, FULL, 0.1, 2, 0)
        assert np.max(np.abs(sc - (2.0 * sx - 3.0 * sy))) < 1e-9

    @given(
        st.integers(min_value=1, max_value=3),
        st.lists(st.floats(min_value=-3, max_value=3), min_size=4, max_size=4),
    )
    @settings(max_examples=20, deadline=None)
    def test_polynomial_reproduction(self, degree, coefs):
        poly = np.polynomial.Polynomial(coefs[: degree + 1])
        y = poly(GRID.points)
        out, mask = local_poly(GRID, y, FULL, 0.2, degree, 0)
        assert np.max(np.abs(out[mask] - y[mask])) < 1e-8

    def test_short_run_masked_out(self):
        mask = np.zeros(60, dtype=bool)
        mask[:3] = True   # 3-point run
        mask[10:30] = True
        out0, m0 = local_poly(GRID, np.ones(60), mask, 0.1, 1, 0)
        out1, m1 = local_poly(GRID, np.ones(60), mask, 0.1, 2, 1)
        assert m0[:3].all()          # degree 1 needs 3 points
        assert not m1[:3].any()      # degree 2 needs 4 points
        assert m1[10:30].all()

    def test_degree_below_order_rejected(self):
        with pytest.raises(TooFewPoints):
            local_poly(GRID, np.ones(60), FULL, 0.1, degree=1, order=2)


class TestSelectBandwidth:
    def test_noiseless_quadratic_flat_cv_and_reproduction(self):
        y = 4.0 * (GRID.points - 0.3) ** 2
        h, scores = select_bandwidth(GRID, y, FULL, degree=2)
        feasible = np.isfinite(scores)
        assert feasible.any()
        # local quadratic reproduces a quadratic at every feasible bandwidth
        assert np.all(scores[feasible] < 1e-12)
        out, mask = local_poly(GRID, y, FULL, h, 2, 0)
        assert np.max(np.abs(out[mask] - y[mask])) < 1e-8

    def test_white_noise_prefers_large_bandwidths(self):
        candidates = bandwidth_candidates(GRID)
        top = set(range(len(candidates) - 3, len(candidates)))
        hits = 0
        reps = 200
        rng = np.random.default_rng(42)
        for _ in range(reps):
            y = rng.normal(size=60)
            h, _ = select_bandwidth(GRID, y, FULL, degree=1, candidates=candidates)
            if int(np.argmin(np.abs(candidates - h))) in top:
                hits += 1
        assert hits / reps > 0.5

    def test_three_points_boundary_case(self):
        grid = Grid(np.array([0.0, 0.5, 1.0]))
        y = np.array([0.0, 1.0, 2.0])
        candidates = np.array([0.6, 1.2, 2.4])
        with pytest.warns(BandwidthWarning):
            h, scores = select_bandwidth(grid, y, np.ones(3, bool), 1, candidates)
        assert h == 1.2  # smallest feasible candidate
        assert not np.isfinite(scores[0])

    def test_too_few_points(self):
        mask = np.zeros(60, dtype=bool)
        mask[5] = True
        mask[10] = True
        with pytest.raises(TooFewPoints):
            select_bandwidth(GRID, np.ones(60), mask, degree=1)


class TestSmoothDataset:
    def test_derivative_bandwidth_inflation(self):
        y = np.sin(2 * np.pi * GRID.points)
        s = smooth_curve(GRID, y, FULL, "c", "g", SmoothingConfig(orders=2))
        assert s.bandwidths[1] == pytest.approx(1.5 * s.bandwidths[0])
        assert s.bandwidths[2] == pytest.approx(2.25 * s.bandwidths[0])
        assert s.degrees == (1, 2, 3)

    def test_global_bandwidth_shared(self):
        rng = np.random.default_rng(4)
        values = rng.normal(size=(6, 24))
        ds = make_dataset(values, None, ["a"] * 3 + ["b"] * 3)
        out = smooth_dataset(ds, SmoothingConfig(orders=0, global_bandwidth=True))
        assert len({s.bandwidths[0] for s in out}) == 1

    def test_per_curve_bandwidths_may_differ(self):
        rng = np.random.default_rng(5)
        values = np.vstack([
            np.sin(2 * np.pi * np.linspace(0, 1, 24)) + 0.01 * rng.normal(size=24),
            rng.normal(size=(3, 24)) * 2.0,
        ])
        ds = make_dataset(values, None, ["a", "a", "b", "b"])
        out = smooth_dataset(ds, SmoothingConfig(orders=0))
        assert len({s.bandwidths[0] for s in out}) > 1
