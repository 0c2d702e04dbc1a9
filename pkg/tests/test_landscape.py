import json

import numpy as np
import pytest

from roskd.data import generate
from roskd.landscape import (GridSpec, basin_width, eval_loss, evaluate_grid, filter_normalize,
                             random_directions, save_grid)
from roskd.nn import ModelSpec, ParamVector, init_model


@pytest.fixture(scope="module")
def base_and_batch():
    return init_model(ModelSpec((5, 7, 3), 1)), generate(3, 5, 20, 2.0, seed=0)


def test_coords_are_antisymmetric():
    c = GridSpec().coords()
    assert len(c) == 41 and c[20] == 0.0 and c[0] == -1.0 and c[-1] == 1.0
    assert np.array_equal(c, -c[::-1])


def test_filter_normalize_row_norms(base_and_batch):
    base, _ = base_and_batch
    d = filter_normalize(np.random.default_rng(0).standard_normal(base.spec.n_params), base)
    for (Wd, bd), (Wb, _) in zip(d.layers(), base.layers()):
        assert np.allclose(np.linalg.norm(Wd, axis=1), np.linalg.norm(Wb, axis=1), rtol=1e-12)
        assert np.all(bd == 0.0)


def test_filter_normalize_zero_rows():
    spec = ModelSpec((2, 2))
    base = ParamVector(np.array([0.0, 0.0, 1.0, 1.0, 0.5, 0.5]), spec)
    d = filter_normalize(np.ones(6), base)
    assert d.values.tolist()[:2] == [0.0, 0.0]
    zero_dir = filter_normalize(np.zeros(6), base)
    assert np.all(zero_dir.values == 0.0)


def test_directions_are_not_collinear(base_and_batch):
    base, _ = base_and_batch
    d1, d2 = random_directions(base, seed=3)
    cos = d1.values @ d2.values / (np.linalg.norm(d1.values) * np.linalg.norm(d2.values))
    assert abs(cos) < 0.9
    e1, _ = random_directions(base, seed=3)
    assert e1.equals(d1)


@pytest.fixture(scope="module")
def grid(base_and_batch):
    base, batch = base_and_batch
    d1, d2 = random_directions(base, seed=4)
    return evaluate_grid(base, d1, d2, batch, seed=4, eval_batch_id="t")


def test_grid_center_and_size(grid, base_and_batch):
    base, batch = base_and_batch
    assert grid.losses.shape == (41, 41)
    assert abs(grid.center_loss - eval_loss(base, batch)) <= 1e-9
    assert grid.losses.max() <= 8.0


def test_grid_clamps_large_losses(base_and_batch):
    base, batch = base_and_batch
    d1, d2 = random_directions(base, seed=4)
    g = evaluate_grid(base, 50 * d1, 50 * d2, batch, GridSpec(n_points=5))
    assert g.losses.max() == 8.0


def test_negated_directions_rotate_grid(grid, base_and_batch):
    base, batch = base_and_batch
    d1, d2 = grid.directions
    flipped = evaluate_grid(base, -d1, -d2, batch, GridSpec(n_points=9))
    small = evaluate_grid(base, d1, d2, batch, GridSpec(n_points=9))
    assert np.array_equal(flipped.losses, small.losses[::-1, ::-1])


def test_basin_width_edges(grid):
    assert basin_width(grid, 8.0) == 1.0
    assert basin_width(grid, grid.losses.min()) >= 1 / 1681
    assert basin_width(grid, 0.0) == 0.0
    for bad in (-1.0, 9.0, np.nan):
        with pytest.raises(ValueError):
            basin_width(grid, bad)


def test_basin_width_monotone(grid):
    th = np.linspace(0, 8, 30)
    widths = [basin_width(grid, t) for t in th]
    assert all(b >= a for a, b in zip(widths, widths[1:]))


def test_save_grid(tmp_path, grid):
    csv_path, side = save_grid(grid, tmp_path / "g.csv")
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "alpha,beta,loss" and len(lines) == 1 + 41 * 41
    meta = json.loads(side.read_text())
    assert meta["center_loss"] == grid.center_loss and meta["seed"] == 4


def test_architecture_mismatch(base_and_batch):
    base, batch = base_and_batch
    other = init_model(ModelSpec((5, 3)))
    with pytest.raises(ValueError):
        evaluate_grid(base, other, other, batch)
