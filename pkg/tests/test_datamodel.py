import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdaselect.datamodel import (
    Grid,
    GriddedCurve,
    GroupedDataset,
    ValidationConfig,
    dataset_metadata,
    enumerate_arcs,
    load_dataset,
    mask_runs,
    validate_dataset,
    write_dataset,
)
from fdaselect.errors import (
    CoverageWarning,
    EmptyGroup,
    InputError,
    NonFiniteValue,
    ScatteredMask,
    UncoveredGridPoint,
)
from fdaselect.simulate import sample_missing_masks

from conftest import make_dataset


class TestGrid:
    def test_rejects_short_grid(self):
        with pytest.raises(InputError):
            Grid(np.array([0.0, 1.0]))

    def test_rejects_non_increasing(self):
        with pytest.raises(InputError):
            Grid(np.array([0.0, 0.5, 0.5, 1.0]))

    def test_rejects_nonfinite(self):
        with pytest.raises(NonFiniteValue):
            Grid(np.array([0.0, np.nan, 1.0]))

    def test_rejects_points_outside_domain(self):
        with pytest.raises(InputError):
            Grid(np.array([0.0, 0.5, 1.0]), domain=(0.1, 1.0))

    def test_spacing(self):
        g = Grid(np.array([0.0, 0.2, 0.7, 1.0]))
        assert np.allclose(g.spacing(), [0.2, 0.5, 0.3])
        assert g.length == 1.0


def arc_member_sets(iv):
    return {frozenset(iv.members(a).tolist()) for a in range(iv.n_arcs)}


def brute_force_arcs(m):
    """Every ordinary window plus every window complement, plus the domain."""
    fam = set()
    for lo in range(m):
        for hi in range(lo, m):
            window = frozenset(range(lo, hi + 1))
            fam.add(window)
            comp = frozenset(range(m)) - window
            if comp:
                fam.add(comp)
    fam.add(frozenset(range(m)))
    return fam


class TestArcs:
    def test_m3_exhaustive_hand_oracle(self):
        iv = enumerate_arcs(3)
        expected = {
            frozenset({0}),
            frozenset({1}),
            frozenset({2}),
            frozenset({0, 1}),
            frozenset({1, 2}),
            frozenset({2, 0}),
            frozenset({0, 1, 2}),
        }
        assert iv.n_arcs == 7
        assert arc_member_sets(iv) == expected

    def test_m4_count_matches_brute_force(self):
        iv = enumerate_arcs(4)
        assert iv.n_arcs == 4 * 3 + 1 == 13
        assert arc_member_sets(iv) == brute_force_arcs(4)

    def test_m3_containment_count(self):
        # counted from the 7-arc list: each index lies in 4 arcs (total
        # incidence 3*1 + 3*2 + 3 = 12 over 3 indices)
        iv = enumerate_arcs(3)
        for j in range(3):
            assert sum(iv.contains(a, j) for a in range(iv.n_arcs)) == 4

    def test_rejects_small_m(self):
        with pytest.raises(InputError):
            enumerate_arcs(2)

    @given(st.integers(min_value=3, max_value=12))
    @settings(max_examples=10, deadline=None)
    def test_count_and_complement_symmetry(self, m):
        iv = enumerate_arcs(m)
        assert iv.n_arcs == m * (m - 1) + 1
        fam = arc_member_sets(iv)
        assert fam == brute_force_arcs(m)
        for a in range(iv.n_arcs):
            if iv.lengths[a] < m:
                s, ln = iv.complement_arc(a)
                comp = frozenset(((s + np.arange(ln)) % m).tolist())
                assert comp in fam

    def test_equal_containment_by_symmetry(self):
        iv = enumerate_arcs(7)
        counts = [sum(iv.contains(a, j) for a in range(iv.n_arcs)) for j in range(7)]
        assert len(set(counts)) == 1

    def test_pieces_of_wrap_arc(self):
        iv = enumerate_arcs(5)
        idx = [
            a
            for a in range(iv.n_arcs)
            if iv.starts[a] == 3 and iv.lengths[a] == 4
        ][0]
        assert iv.pieces(idx) == [(0, 1), (3, 4)]

    def test_windows_only_subfamily(self):
        iv = enumerate_arcs(6)
        sub = iv.windows_only()
        assert sub.n_arcs == 6 * 7 // 2 + 1 - 6  # windows of length 1..5 plus domain
        assert np.all(sub.starts + sub.lengths <= 6)


class TestValidate:
    def test_full_observation_coverage(self):
        ds = make_dataset(np.zeros((4, 10)), None, ["a", "a", "b", "b"])
        assert np.allclose(ds.coverage, 1.0)

    def test_uncovered_point_rejected(self):
        masks = np.ones((4, 10), dtype=bool)
        masks[:, 3] = False
        with pytest.raises(UncoveredGridPoint):
            make_dataset(np.zeros((4, 10)), masks, ["a", "a", "b", "b"])

    def test_single_group_rejected(self):
        with pytest.raises(EmptyGroup):
            make_dataset(np.zeros((3, 10)), None, ["a", "a", "a"])

    def test_nonfinite_observed_value_rejected(self):
        values = np.zeros((4, 10))
        values[1, 2] = np.inf
        with pytest.raises(NonFiniteValue):
            make_dataset(values, None, ["a", "a", "b", "b"])

    def test_nan_allowed_where_masked(self):
        values = np.zeros((4, 10))
        masks = np.ones((4, 10), dtype=bool)
        values[1, 2] = np.nan
        masks[1, 2] = False
        ds = make_dataset(values, masks, ["a", "a", "b", "b"])
        assert ds.coverage[2] == 0.75

    def test_empty_mask_rejected(self):
        masks = np.ones((4, 10), dtype=bool)
        masks[0] = False
        with pytest.raises(InputError):
            make_dataset(np.zeros((4, 10)), masks, ["a", "a", "b", "b"])

    def test_scattered_mask_rejected_and_relaxable(self):
        masks = np.ones((4, 12), dtype=bool)
        masks[0, ::2] = False  # six observed runs
        with pytest.raises(ScatteredMask):
            make_dataset(np.zeros((4, 12)), masks, ["a", "a", "b", "b"])
        ds = make_dataset(np.zeros((4, 12)), masks, ["a", "a", "b", "b"], validate=False)
        out = validate_dataset(ds, ValidationConfig(max_observed_runs=None))
        assert out.coverage is not None

    def test_idempotent(self, two_group_dataset):
        again = validate_dataset(two_group_dataset)
        assert np.array_equal(again.coverage, two_group_dataset.coverage)
        assert again.group_ids == two_group_dataset.group_ids

    def test_low_coverage_warning(self):
        masks = np.ones((8, 10), dtype=bool)
        masks[1:, 4] = False  # coverage 1/8 at one point
        with pytest.warns(CoverageWarning):
            make_dataset(np.zeros((8, 10)), masks, ["a"] * 4 + ["b"] * 4)

    def test_mask_monotonicity(self):
        # removing a curve only breaks validation when it was the sole observer
        masks = np.ones((4, 10), dtype=bool)
        masks[1:, 6] = False
        values = np.zeros((4, 10))
        groups = ["a", "a", "b", "b"]
        ds = make_dataset(values, masks, groups)
        without_redundant = make_dataset(values[1:], masks[1:], groups[1:], validate=False)
        with pytest.raises(UncoveredGridPoint):
            validate_dataset(without_redundant)
        keep = [0, 2, 3]
        still_fine = make_dataset(values[keep], masks[keep], [groups[i] for i in keep])
        assert still_fine.coverage[6] == pytest.approx(1 / 3)

    def test_partial_scheme_keeps_positive_coverage(self):
        # Kraus-style masks (d=1.2, f=0.3) over 1000 datasets of 2x50 curves:
        # the minimum coverage stays positive in at least 99% of them
        grid = Grid(np.linspace(0, 1, 100))
        ok = 0
        reps = 1000
        for rep in range(reps):
            masks = sample_missing_masks(grid, 100, 1.2, 0.3, 0.5, seed=rep)
            if masks.any(axis=0).all():
                ok += 1
        assert ok / reps >= 0.99


class TestMaskRuns:
    def test_runs(self):
        assert mask_runs(np.array([1, 1, 0, 1, 0, 1, 1], dtype=bool)) == [
            (0, 2),
            (3, 4),
            (5, 7),
        ]

    def test_empty(self):
        assert mask_runs(np.zeros(4, dtype=bool)) == []


class TestCsv:
    def test_roundtrip(self, tmp_path, two_group_dataset):
        path = tmp_path / "data.csv"
        write_dataset(two_group_dataset, path)
        back = load_dataset(path)
        assert back.grid.same_as(two_group_dataset.grid)
        assert back.group_ids == two_group_dataset.group_ids
        for c0, c1 in zip(two_group_dataset.curves, back.curves):
            assert np.array_equal(c0.mask, c1.mask)
            assert np.allclose(c0.values[c0.mask], c1.values[c1.mask])

    def test_missing_rows_mean_unobserved(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text(
            "curve_id,group,t,value\n"
            "c0,a,0.0,1.0\nc0,a,0.5,2.0\nc0,a,1.0,3.0\n"
            "c1,b,0.0,4.0\nc1,b,1.0,6.0\n"
        )
        ds = load_dataset(path)
        assert ds.grid.m == 3
        assert ds.curves[1].mask.tolist() == [True, False, True]

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("curve,grp,t,v\nc0,a,0.0,1.0\n")
        with pytest.raises(InputError):
            load_dataset(path)

    def test_metadata(self, two_group_dataset):
        meta = dataset_metadata(two_group_dataset)
        assert meta["m"] == 24
        assert meta["n_curves"] == 8
        assert meta["min_coverage"] == 1.0
        assert [g["group_id"] for g in meta["groups"]] == ["a", "b"]
