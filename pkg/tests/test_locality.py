import numpy as np
import pytest

from sfcoctree.geometry import PointCloud
from sfcoctree.linear_octree import build_linear_octree
from sfcoctree.locality import (
    LocalityHistogram,
    coded_histogram,
    fisher_pearson_skewness,
    histogram_quantiles,
    locality_histogram,
    locality_histogram_approx,
    storage_order_histogram,
)
from sfcoctree.reorder import reorder_cloud


def hist(bins, k=1, n=1):
    return LocalityHistogram.from_mapping(k, n, n, bins)


def direct_skewness(bins):
    samples = np.repeat(list(bins), list(bins.values())).astype(float)
    mu = samples.mean()
    sd = samples.std()
    return ((samples - mu) ** 3).mean() / sd**3


@pytest.fixture(scope="module")
def small():
    cloud = PointCloud(np.random.default_rng(3).random((3000, 3)))
    coded = reorder_cloud(cloud, "hilbert")
    return cloud, coded, build_linear_octree(coded, 32)


@pytest.mark.parametrize("k", [1, 2, 10, 50])
def test_invariants(small, k):
    _, coded, tree = small
    h = locality_histogram(tree, coded, k)
    assert h[0] == len(coded)
    assert h.total == k * len(coded)
    assert (h.counts > 0).all() and (np.diff(h.distances) > 0).all()


def test_collinear_example():
    xyz = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
    coded = reorder_cloud(PointCloud(xyz), "morton")
    assert coded.permutation.tolist() == [0, 1, 2, 3]
    h = locality_histogram(build_linear_octree(coded, 1), coded, 2)
    assert h.as_dict() == {0: 4, 1: 4}


def test_k_larger_than_n_rejected(small):
    _, coded, tree = small
    with pytest.raises(ValueError):
        locality_histogram(tree, coded, len(coded) + 1)


def test_backend_and_thread_invariance(small):
    _, coded, tree = small
    a = locality_histogram(tree, coded, 7, threads=1)
    b = locality_histogram(tree, coded, 7, threads=4)
    c = locality_histogram(None, coded, 7, brute=True)
    assert a == b == c


def test_storage_order_matches_brute_scan(small):
    cloud, _, _ = small
    shuffled = PointCloud(cloud.xyz[np.random.default_rng(0).permutation(len(cloud))])
    assert storage_order_histogram(shuffled, 6) == locality_histogram(None, shuffled, 6, brute=True)


def test_skewness_conventions():
    assert fisher_pearson_skewness(hist({0: 1, 2: 1})) == 0
    assert fisher_pearson_skewness(hist({5: 12})) == 0
    bins = {0: 9, 100: 1}
    assert fisher_pearson_skewness(hist(bins)) == pytest.approx(direct_skewness(bins), rel=1e-12)
    bins = {0: 40, 1: 30, 3: 9, 17: 2, 400: 1}
    assert fisher_pearson_skewness(hist(bins)) == pytest.approx(direct_skewness(bins), rel=1e-12)


def test_quantile_conventions():
    assert histogram_quantiles(hist({0: 10})) == (0, 0, 0)
    assert histogram_quantiles(hist({0: 7, 1: 7}, k=2, n=7)) == (0, 0, 1)
    # against numpy's "inverted_cdf", which is the same lower-value rule
    bins = {0: 5, 2: 3, 3: 1, 9: 6, 40: 2}
    samples = np.repeat(list(bins), list(bins.values()))
    want = tuple(int(np.quantile(samples, q, method="inverted_cdf")) for q in (0.25, 0.5, 0.75))
    assert histogram_quantiles(hist(bins)) == want


def test_empty_histogram_rejected():
    with pytest.raises(ValueError):
        fisher_pearson_skewness(hist({}))


def test_approx_edges(small):
    _, coded, tree = small
    exact = locality_histogram(tree, coded, 5)
    assert locality_histogram_approx(tree, coded, 5, len(coded), seed=1) == exact
    one = locality_histogram_approx(tree, coded, 5, 1, seed=1)
    assert one[0] == 1 and one.total == 5
    part = locality_histogram_approx(tree, coded, 5, 300, seed=2)
    assert part[0] == 300 and part.total == 1500
    assert part == locality_histogram_approx(tree, coded, 5, 300, seed=2)
    with pytest.raises(ValueError):
        locality_histogram_approx(tree, coded, 5, 0, seed=1)


def test_reordering_improves_locality():
    rng = np.random.default_rng(17)
    cloud = PointCloud(rng.random((20_000, 3)))
    base = storage_order_histogram(cloud, 50)
    for curve in ("morton", "hilbert"):
        h = coded_histogram(reorder_cloud(cloud, curve), 50)
        assert h.skewness() > base.skewness()
        assert all(a < b for a, b in zip(h.quantiles(), base.quantiles()))


def test_sampled_skewness_close_to_exact():
    cloud = PointCloud(np.random.default_rng(18).random((100_000, 3)))
    coded = reorder_cloud(cloud, "hilbert")
    tree = build_linear_octree(coded, 128)
    exact = locality_histogram(tree, coded, 10)
    approx = locality_histogram_approx(tree, coded, 10, 10_000, seed=3)
    assert abs(approx.skewness() - exact.skewness()) <= 0.15 * exact.skewness()
