import numpy as np
import pytest

from sfcoctree.geometry import PointCloud
from sfcoctree.io import SyntheticSpec, generate_cloud
from sfcoctree.linear_octree import build_linear_octree
from sfcoctree.reorder import reorder_cloud


def kernel_oracle(xyz, shape, center, r):
    """Numpy scan, written independently of the jitted predicate."""
    d = np.asarray(xyz, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    if shape in ("circle", "square", 1, 3):
        d = d[:, :2]
    if shape in ("sphere", "circle", 0, 1):
        inside = (d * d).sum(axis=1) < r * r
    else:
        inside = np.abs(d).max(axis=1) < r
    return np.flatnonzero(inside)


def knn_oracle(xyz, center, k):
    """Full sort by (squared distance, index)."""
    d2 = ((np.asarray(xyz) - np.asarray(center)) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(len(d2)), d2))[:k]
    return order, d2[order]


@pytest.fixture(scope="session")
def uniform_20k():
    return PointCloud(np.random.default_rng(11).random((20_000, 3)))


@pytest.fixture(scope="session", params=["morton", "hilbert"])
def coded_tree(request, uniform_20k):
    coded = reorder_cloud(uniform_20k, request.param)
    return coded, build_linear_octree(coded, 32)


@pytest.fixture(scope="session")
def mixed_clouds():
    specs = [
        SyntheticSpec("uniform", 8000, seed=1),
        SyntheticSpec("clusters", 8000, seed=2, num_clusters=5, sigma=0.02),
        SyntheticSpec("surface", 8000, seed=3),
    ]
    return [generate_cloud(s) for s in specs]
