import numpy as np
import pytest
from scipy import stats

from fdaselect.datamodel import Grid
from fdaselect.errors import ConfigError, UnknownPreset
from fdaselect.simulate import (
    ScenarioConfig,
    apply_curve_outliers,
    apply_local_outliers,
    exp_covariance,
    generate,
    make_location_pair,
    sample_gaussian_errors,
    sample_missing_masks,
    sample_t3_errors,
)

GRID = Grid(np.linspace(0, 1, 100))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(sigma_e=0.0)
        with pytest.raises(ConfigError):
            ScenarioConfig(scenario="cauchy")
        with pytest.raises(ConfigError):
            ScenarioConfig(outlier_fraction=1.5)
        with pytest.raises(ConfigError):
            ScenarioConfig(c1=0.0)

    def test_roundtrip(self):
        cfg = ScenarioConfig(seed=9, sigma_e=3.0, scenario="t3")
        assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg


class TestLocationPair:
    def test_one_signed_equal_set(self):
        truth = make_location_pair(GRID, 0.34, "one-signed")
        assert truth.separable_idx.size == 66
        assert truth.equal_idx.size == 34
        diff = truth.mu2 - truth.mu1
        assert np.all(diff[truth.separable_idx] > 0)
        assert np.all(diff[truth.equal_idx] == 0.0)

    def test_global_null(self):
        truth = make_location_pair(GRID, 1.0)
        assert truth.separable_idx.size == 0
        assert np.array_equal(truth.mu1, truth.mu2)

    def test_cross_over_single_sign_change(self):
        truth = make_location_pair(GRID, 0.34, "cross-over")
        diff = (truth.mu2 - truth.mu1)[truth.separable_idx]
        signs = np.sign(diff)
        changes = np.sum(signs[:-1] != signs[1:])
        assert changes == 1

    def test_unknown_preset(self):
        with pytest.raises(UnknownPreset):
            make_location_pair(GRID, 0.34, "zigzag")

    def test_c2_smooth_junction(self):
        # second finite differences stay continuous through the junction
        fine = Grid(np.linspace(0, 1, 2001))
        truth = make_location_pair(fine, 0.34, "one-signed", amplitude=4.0)
        s = truth.mu2 - truth.mu1
        h = fine.points[1] - fine.points[0]
        d2 = np.diff(s, 2) / h**2
        assert np.max(np.abs(np.diff(d2))) < 2.0  # no O(1/h) jump anywhere


class TestExpCovariance:
    def test_zero_distance(self):
        assert exp_covariance(0.0, 3.0, 0.2) == pytest.approx(9.0)

    def test_zero_scale(self):
        assert exp_covariance(0.7, 0.0, 0.2) == 0.0

    def test_analytic_point(self):
        assert exp_covariance(0.2, 1.0, 0.2) == pytest.approx(np.exp(-1.0), abs=1e-12)

    def test_rejects_bad_phi(self):
        with pytest.raises(ConfigError):
            exp_covariance(0.1, 1.0, 0.0)


class TestGaussianErrors:
    def test_marginal_variance_and_correlation(self):
        grid = Grid(np.array([0.0, 0.1, 0.2, 0.5, 1.0]))
        sigma = 2.0
        e = sample_gaussian_errors(grid, 5000, sigma, 0.2, seed=11)
        var = e.var(axis=0, ddof=1)
        assert np.all(np.abs(var - sigma**2) < 0.05 * sigma**2)
        corr = np.corrcoef(e[:, 0], e[:, 2])[0, 1]
        assert abs(corr - np.exp(-1.0)) < 0.05

    def test_deterministic(self):
        a = sample_gaussian_errors(GRID, 10, 1.0, 0.2, seed=5)
        b = sample_gaussian_errors(GRID, 10, 1.0, 0.2, seed=5)
        assert np.array_equal(a, b)

    def test_per_curve_substreams_allow_any_order(self):
        # curve i depends only on (seed, i): generating a larger batch keeps
        # earlier curves identical
        a = sample_gaussian_errors(GRID, 4, 1.0, 0.2, seed=5)
        b = sample_gaussian_errors(GRID, 12, 1.0, 0.2, seed=5)
        assert np.array_equal(a, b[:4])


class TestT3Errors:
    def test_marginal_variance_three_sigma_sq(self):
        grid = Grid(np.array([0.0, 0.5, 1.0]))
        sigma = 1.5
        e = sample_t3_errors(grid, 20000, sigma, 0.2, seed=3)
        var = e.var(axis=0, ddof=1)
        assert np.all(np.abs(var - 3 * sigma**2) < 0.1 * 3 * sigma**2)

    def test_fixed_w_reduces_to_gaussian(self):
        e_t = sample_t3_errors(GRID, 6, 1.0, 0.2, seed=4, fixed_w=3.0)
        e_g = sample_gaussian_errors(GRID, 6, 1.0, 0.2, seed=4)
        assert np.allclose(e_t, e_g)

    def test_heavier_tails_than_gaussian(self):
        grid = Grid(np.array([0.0, 0.5, 1.0]))
        e_t = sample_t3_errors(grid, 20000, 1.0, 0.2, seed=6)[:, 0]
        e_g = sample_gaussian_errors(grid, 20000, 1.0, 0.2, seed=7)[:, 0]
        assert stats.kurtosis(e_t) > stats.kurtosis(e_g) + 1.0


class TestCurveOutliers:
    def test_zero_fraction_identity(self):
        base = np.ones((10, 5))
        out = apply_curve_outliers(base, 0.0, 1.0, seed=1)
        assert np.array_equal(out, base)

    def test_exactly_five_of_hundred(self):
        base = np.zeros((100, 5))
        out = apply_curve_outliers(base, 0.05, 1.0, seed=1)
        shifted = np.any(out != 0, axis=1)
        assert shifted.sum() == 5

    def test_shift_constant_over_grid(self):
        base = np.zeros((20, 50))
        out = apply_curve_outliers(base, 0.2, 2.0, seed=2)
        diff = out - base
        for row in diff:
            assert np.allclose(row, row[0])

    def test_per_group_option(self):
        base = np.zeros((40, 5))
        groups = np.array(["a"] * 20 + ["b"] * 20)
        out = apply_curve_outliers(base, 0.1, 1.0, seed=3, groups=groups)
        shifted = np.any(out != 0, axis=1)
        assert shifted[:20].sum() == 2 and shifted[20:].sum() == 2


class TestLocalOutliers:
    def test_zero_fraction_identity(self):
        base = np.ones((10, 5))
        assert np.array_equal(apply_local_outliers(base, 0.0, 1.0, seed=1), base)

    def test_cell_count(self):
        base = np.zeros((100, 100))
        out = apply_local_outliers(base, 0.05, 1.0, seed=1)
        assert np.count_nonzero(out != base) == 500

    def test_variance_inflation(self):
        base = np.zeros((5000, 10))
        sigma = 2.0
        out = apply_local_outliers(base, 0.1, sigma, seed=9)
        noise = out[out != 0]
        target = 2 * sigma**2
        assert abs(noise.var() - target) < 0.1 * target


class TestPartialSampling:
    def test_p_zero_keeps_everything(self):
        masks = sample_missing_masks(GRID, 50, 1.2, 0.3, 0.0, seed=1)
        assert masks.all()

    def test_removed_fraction_calibration(self):
        # paper quotes 25.6% average removal for curves with non-null missing
        # interval; measured as masked grid fraction among such curves
        masks, info = sample_missing_masks(
            GRID, 10000, 1.2, 0.3, 1.0, seed=77, return_info=True
        )
        nonnull = (info[:, 0] == 1.0) & (info[:, 1] <= 1.0)
        removed = 1.0 - masks[nonnull].mean(axis=1)
        assert abs(removed.mean() - 0.256) <= 0.01

    def test_null_effective_intervals_exist(self):
        _, info = sample_missing_masks(GRID, 10000, 1.2, 0.3, 1.0, seed=8, return_info=True)
        null_eff = (info[:, 0] == 1.0) & (info[:, 1] > 1.0)
        # analytic frequency is about 5.6% of drawn intervals
        assert 0.03 < null_eff.mean() < 0.09

    def test_curve_never_emptied(self):
        grid = Grid(np.linspace(0, 1, 5))
        masks = sample_missing_masks(grid, 500, 0.6, 2.0, 1.0, seed=3)
        assert masks.any(axis=1).all()

    def test_masks_independent_of_values(self):
        # generation never reads curve values: same seed, different amplitude
        cfg_a = ScenarioConfig(n_per_group=6, m=30, sampling="partial", seed=12, amplitude=1.0)
        cfg_b = ScenarioConfig(n_per_group=6, m=30, sampling="partial", seed=12, amplitude=9.0)
        ds_a, _ = generate(cfg_a)
        ds_b, _ = generate(cfg_b)
        assert np.array_equal(ds_a.mask_matrix(), ds_b.mask_matrix())


class TestGenerate:
    @pytest.mark.parametrize("scenario", ["gaussian", "t3", "curve_outlier", "local_outlier"])
    def test_deterministic(self, scenario):
        cfg = ScenarioConfig(n_per_group=5, m=20, scenario=scenario, sampling="partial", seed=3)
        ds_a, truth_a = generate(cfg)
        ds_b, truth_b = generate(cfg)
        assert np.array_equal(np.nan_to_num(ds_a.value_matrix()), np.nan_to_num(ds_b.value_matrix()))
        assert np.array_equal(ds_a.mask_matrix(), ds_b.mask_matrix())
        assert np.array_equal(truth_a.mu2, truth_b.mu2)

    def test_null_embedding(self):
        cfg = ScenarioConfig(n_per_group=4, m=20, c1=1.0, seed=2)
        _, truth = generate(cfg)
        assert truth.separable_idx.size == 0

    def test_group_structure(self):
        cfg = ScenarioConfig(n_per_group=7, m=20, seed=2)
        ds, _ = generate(cfg)
        assert ds.k == 2
        assert ds.group_sizes == {"g1": 7, "g2": 7}
