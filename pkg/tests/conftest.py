import numpy as np
import pytest

from fdaselect.datamodel import Grid, GriddedCurve, GroupedDataset, validate_dataset


def make_dataset(values, masks, groups, grid_points=None, domain=None, validate=True):
    """Assemble a dataset from plain arrays; group sizes follow ``groups``."""
    values = np.asarray(values, dtype=float)
    n, m = values.shape
    if masks is None:
        masks = np.ones((n, m), dtype=bool)
    if grid_points is None:
        grid_points = np.linspace(0.0, 1.0, m)
    grid = Grid(grid_points, domain=domain)
    curves = tuple(
        GriddedCurve(values[i], masks[i], curve_id=f"c{i:03d}", group_id=groups[i])
        for i in range(n)
    )
    ds = GroupedDataset(grid=grid, curves=curves)
    return validate_dataset(ds) if validate else ds


@pytest.fixture
def two_group_dataset():
    rng = np.random.default_rng(7)
    values = rng.normal(size=(8, 24))
    groups = ["a"] * 4 + ["b"] * 4
    return make_dataset(values, None, groups)
