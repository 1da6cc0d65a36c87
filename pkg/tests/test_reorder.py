import numpy as np
import pytest

from sfcoctree.geometry import PointCloud
from sfcoctree.reorder import EmptyCloudError, compute_codes, reorder_cloud
from sfcoctree.sfc import Discretizer, encode_cells


@pytest.fixture
def cloud():
    return PointCloud(np.random.default_rng(4).random((10_000, 3)) * [3, 1, 2])


def test_empty_cloud():
    with pytest.raises(EmptyCloudError):
        compute_codes(PointCloud(np.empty((0, 3))), "morton")
    with pytest.raises(EmptyCloudError):
        reorder_cloud(PointCloud(np.empty((0, 3))), "hilbert")


def test_single_and_duplicate_points():
    one = PointCloud([[1.0, 2.0, 3.0]])
    assert len(compute_codes(one, "morton")) == 1
    twin = PointCloud([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
    a, b = compute_codes(twin, "hilbert")
    assert a == b


@pytest.mark.parametrize("curve", ["morton", "hilbert"])
def test_codes_match_per_point(cloud, curve):
    codes = compute_codes(cloud, curve)
    d = Discretizer.for_bbox(cloud.bbox)
    sample = np.random.default_rng(0).choice(len(cloud), 1000, replace=False)
    for i in sample:
        cell = np.array([d.discretize(cloud[i])])
        assert codes[i] == encode_cells(cell, 21, curve)[0]


@pytest.mark.parametrize("curve", ["morton", "hilbert"])
def test_reorder_contract(cloud, curve):
    coded = reorder_cloud(cloud, curve)
    assert (np.diff(coded.codes.astype(np.float64)) >= 0).all()
    assert np.array_equal(np.sort(coded.permutation), np.arange(len(cloud)))
    assert np.array_equal(coded.xyz, cloud.xyz[coded.permutation])
    # inverse permutation restores the input bit for bit
    assert np.array_equal(coded.xyz[coded.inverse_permutation()], cloud.xyz)
    # same order as a comparison sort on (code, original index)
    codes = compute_codes(cloud, curve)
    assert np.array_equal(coded.permutation, np.lexsort((np.arange(len(cloud)), codes)))


def test_reorder_idempotent(cloud):
    once = reorder_cloud(cloud, "hilbert")
    twice = reorder_cloud(once.cloud, "hilbert")
    assert np.array_equal(twice.permutation, np.arange(len(cloud)))
    assert np.array_equal(twice.codes, once.codes)


def test_reverse_order_gives_reversal(cloud):
    sorted_cloud = reorder_cloud(cloud, "morton")
    codes = sorted_cloud.codes
    distinct = np.r_[True, np.diff(codes.astype(np.float64)) != 0]
    rev = PointCloud(sorted_cloud.xyz[distinct][::-1])
    perm = reorder_cloud(rev, "morton").permutation
    assert np.array_equal(perm, np.arange(len(rev))[::-1])


def test_stable_for_coincident_points():
    rng = np.random.default_rng(9)
    xyz = rng.random((500, 3))
    xyz[rng.choice(500, 100, replace=False)] = [0.25, 0.5, 0.75]
    cloud = PointCloud(xyz)
    coded = reorder_cloud(cloud, "hilbert")
    same = np.flatnonzero((xyz == [0.25, 0.5, 0.75]).all(axis=1))
    pos = coded.inverse_permutation()[same]
    assert (np.diff(pos) == 1).all()
