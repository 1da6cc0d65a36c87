import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfcoctree.geometry import (
    Aabb,
    KernelShape,
    PointCloud,
    Relation,
    SearchKernel,
    brute_force_neighbours,
    kernel_contains,
    kernel_octant_relation,
    octant_point_distance_sq,
)

from conftest import kernel_oracle

UNIT = Aabb((0, 0, 0), (1, 1, 1))
coord = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
# squares of tiny offsets underflow to 0, which is arithmetic, not geometry
sane = coord.filter(lambda v: v == 0 or abs(v) > 1e-100)
point = st.tuples(coord, coord, coord)
shape = st.sampled_from(list(KernelShape))
radius = st.floats(0.01, 10)


def test_kernel_examples():
    assert kernel_contains(SearchKernel("sphere", (0, 0, 0), 1), (0, 0, 0))
    assert not kernel_contains(SearchKernel("sphere", (0, 0, 0), 1), (1, 0, 0))
    assert kernel_contains(SearchKernel("circle", (0, 0, 0), 1), (0.5, 0, 100))
    assert kernel_contains(SearchKernel("cube", (0, 0, 0), 1), (0.9, 0.9, 0.9))
    assert not kernel_contains(SearchKernel("sphere", (0, 0, 0), 1), (0.9, 0.9, 0.9))


@pytest.mark.parametrize("r", [0, -1, float("nan"), float("inf")])
def test_kernel_rejects_bad_radius(r):
    with pytest.raises(ValueError):
        SearchKernel("sphere", (0, 0, 0), r)


def test_kernel_shape_parsing():
    assert KernelShape.parse("Square") is KernelShape.SQUARE
    assert KernelShape.parse(2) is KernelShape.CUBE
    with pytest.raises(ValueError):
        KernelShape.parse("cylinder")


def test_point_cloud_rejects_non_finite():
    with pytest.raises(ValueError, match="point 1"):
        PointCloud([[0, 0, 0], [np.nan, 0, 0]])
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 2)))


def test_point_cloud_is_immutable_and_bounded():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(100, 3))
    cloud = PointCloud(src)
    src[0] = 99
    assert cloud[0] != (99, 99, 99)
    with pytest.raises(ValueError):
        cloud.xyz[0, 0] = 1.0
    assert all(cloud.bbox.contains_point(p) for p in cloud.xyz)
    assert len(PointCloud(np.empty((0, 3)))) == 0


def test_aabb_validation():
    with pytest.raises(ValueError):
        Aabb((1, 0, 0), (0, 1, 1))
    cube = Aabb((0, 0, 0), (4, 1, 2)).cubified()
    assert cube.max_corner == (4, 4, 4)


def test_octant_distance_examples():
    assert octant_point_distance_sq(UNIT, (0.5, 0.5, 0.5)) == 0
    assert octant_point_distance_sq(UNIT, (2, 0.5, 0.5)) == 1
    assert octant_point_distance_sq(UNIT, (2, 2, 2)) == 3


def test_octant_distance_against_dense_sampling():
    # the minimiser over a fine lattice of the box approaches the clamp answer from above
    g = np.linspace(0, 1, 41)
    lattice = np.stack(np.meshgrid(g, g, g), axis=-1).reshape(-1, 3)
    for p in [(2, 2, 2), (-1, 0.3, 0.7), (0.5, 3, -2)]:
        sampled = ((lattice - p) ** 2).sum(axis=1).min()
        assert octant_point_distance_sq(UNIT, p) == pytest.approx(sampled, abs=1e-12)


def test_relation_examples():
    assert kernel_octant_relation(SearchKernel("sphere", (0, 0, 0), 10), UNIT) is Relation.CONTAINS
    assert kernel_octant_relation(SearchKernel("sphere", (100, 0, 0), 1), UNIT) is Relation.DISJOINT
    assert kernel_octant_relation(SearchKernel("sphere", (0, 0, 0), 1), UNIT) is Relation.INTERSECTS


@given(point, coord)
def test_circle_ignores_z(p, dz):
    k = SearchKernel("circle", (0.5, -0.5, 3), 2)
    assert kernel_contains(k, p) == kernel_contains(k, (p[0], p[1], p[2] + dz))


@given(point, point, radius)
def test_l2_ball_inside_linf_ball(c, p, r):
    if kernel_contains(SearchKernel("sphere", c, r), p):
        assert kernel_contains(SearchKernel("cube", c, r), p)
    if kernel_contains(SearchKernel("circle", c, r), p):
        assert kernel_contains(SearchKernel("square", c, r), p)


@given(st.tuples(sane, sane, sane), st.tuples(sane, sane, sane))
def test_distance_zero_iff_inside(lo, p):
    box = Aabb(lo, tuple(x + 1.5 for x in lo))
    assert (octant_point_distance_sq(box, p) == 0) == box.contains_point(p)


@settings(max_examples=200, deadline=None)
@given(shape, point, radius, point, st.floats(0.01, 5), st.integers(0, 2**32 - 1))
def test_relation_agrees_with_samples(shp, c, r, lo, side, seed):
    box = Aabb(lo, tuple(x + side for x in lo))
    kernel = SearchKernel(shp, c, r)
    rel = kernel_octant_relation(kernel, box)
    rng = np.random.default_rng(seed)
    samples = box.lo + rng.random((1000, 3)) * side
    inside = np.zeros(len(samples), bool)
    inside[kernel_oracle(samples, int(shp), c, r)] = True
    if rel is Relation.CONTAINS:
        assert inside.all()
    elif rel is Relation.DISJOINT:
        assert not inside.any()


def test_relation_is_exact_not_conservative():
    # a box just touching the sphere from outside, and one just inside it
    k = SearchKernel("sphere", (0, 0, 0), 1)
    assert kernel_octant_relation(k, Aabb((1, 0, 0), (2, 1, 1))) is Relation.DISJOINT
    assert kernel_octant_relation(k, Aabb((0.999, 0, 0), (2, 1, 1))) is Relation.INTERSECTS
    s = 1 / np.sqrt(3) - 1e-9
    assert kernel_octant_relation(k, Aabb((0, 0, 0), (s, s, s))) is Relation.CONTAINS
    s = 1 / np.sqrt(3) + 1e-9
    assert kernel_octant_relation(k, Aabb((0, 0, 0), (s, s, s))) is Relation.INTERSECTS
    sq = SearchKernel("square", (0, 0, 0), 1)
    assert kernel_octant_relation(sq, Aabb((-0.5, -0.5, 50), (0.5, 0.5, 60))) is Relation.CONTAINS


@pytest.mark.parametrize("shp", list(KernelShape))
def test_brute_force_matches_oracle(shp):
    xyz = np.random.default_rng(5).random((5000, 3))
    k = SearchKernel(shp, (0.4, 0.6, 0.5), 0.2)
    assert np.array_equal(brute_force_neighbours(xyz, k), kernel_oracle(xyz, int(shp), k.center, 0.2))
