import numpy as np
import pytest

from cvarsafe.grids import GridAxis, box_clip, box_contains, corner_weights, interp_flat


def test_axis_nodes_and_spacing():
    ax = GridAxis(0.0, 2.0, 21)
    nodes = ax.nodes
    assert nodes[0] == 0.0 and nodes[-1] == 2.0
    assert len(nodes) == 21
    assert np.all(np.diff(nodes) > 0)
    assert ax.spacing == pytest.approx(0.1)
    assert ax.node(5) == pytest.approx(nodes[5])


def test_axis_validation():
    with pytest.raises(ValueError):
        GridAxis(0.0, 1.0, 1)
    with pytest.raises(ValueError):
        GridAxis(1.0, 1.0, 3)
    with pytest.raises(ValueError):
        GridAxis(2.0, 1.0, 3)


def test_locate_endpoints_and_interior():
    ax = GridAxis(0.0, 1.0, 5)
    idx, frac = ax.locate(np.array([0.0, 0.25, 0.3, 1.0]))
    assert idx.tolist() == [0, 1, 1, 3]
    assert frac[0] == 0.0
    assert frac[1] == pytest.approx(0.0)
    assert frac[2] == pytest.approx(0.2)
    assert frac[3] == 1.0  # top node folds into the last cell


def test_nearest_rounds_and_clips():
    ax = GridAxis(0.0, 1.0, 5)
    assert ax.nearest(0.12) == 0
    assert ax.nearest(0.13) == 1
    assert ax.nearest(-3.0) == 0
    assert ax.nearest(9.0) == 4


def test_box_helpers():
    axes = [GridAxis(0.0, 1.0, 3), GridAxis(0.0, 2.0, 3)]
    assert box_contains(axes, [0.5, 1.5])
    assert not box_contains(axes, [1.5, 1.5])
    clipped = box_clip(axes, np.array([[2.0, -1.0]]))
    assert clipped.tolist() == [[1.0, 0.0]]


def test_corner_weights_partition_of_unity():
    rng = np.random.default_rng(0)
    axes = [GridAxis(0.0, 1.0, 4), GridAxis(-1.0, 1.0, 5)]
    pts = np.column_stack([rng.uniform(0, 1, 50), rng.uniform(-1, 1, 50)])
    flat, wts = corner_weights(axes, pts)
    assert flat.shape == wts.shape == (50, 4)
    assert np.all(wts >= 0)
    assert np.allclose(wts.sum(axis=1), 1.0, atol=1e-14)


def test_interp_exact_on_nodes_and_linear_functions():
    rng = np.random.default_rng(1)
    axes = [GridAxis(0.0, 1.0, 6), GridAxis(0.0, 2.0, 4)]
    mesh = np.meshgrid(axes[0].nodes, axes[1].nodes, indexing="ij")
    # linear function is reproduced exactly by multilinear interpolation
    vals = (3.0 * mesh[0] - 0.5 * mesh[1] + 1.0).ravel()
    pts = np.column_stack([rng.uniform(0, 1, 80), rng.uniform(0, 2, 80)])
    got = interp_flat(axes, vals, pts)
    want = 3.0 * pts[:, 0] - 0.5 * pts[:, 1] + 1.0
    assert np.allclose(got, want, atol=1e-12)
    # and node queries return node values untouched
    nodes = np.column_stack([mesh[0].ravel(), mesh[1].ravel()])
    assert np.allclose(interp_flat(axes, vals, nodes), vals, atol=1e-13)


def test_interp_monotone_and_bounded():
    rng = np.random.default_rng(2)
    axes = [GridAxis(0.0, 1.0, 5)]
    vals = np.sort(rng.uniform(0, 1, 5))
    pts = np.sort(rng.uniform(0, 1, 40))[:, None]
    got = interp_flat(axes, vals, pts)
    assert np.all(np.diff(got) >= -1e-15)
    assert got.min() >= vals.min() - 1e-15 and got.max() <= vals.max() + 1e-15
