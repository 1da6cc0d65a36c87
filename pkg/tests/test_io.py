import numpy as np
import pytest

from sfcoctree.geometry import PointCloud
from sfcoctree.io import (
    CloudDataError,
    CloudParseError,
    SyntheticSpec,
    generate_cloud,
    read_cloud,
    write_cloud,
)
from sfcoctree.linear_octree import build_linear_octree
from sfcoctree.reorder import compute_codes, reorder_cloud


def test_two_point_file_is_60_bytes(tmp_path):
    path = tmp_path / "two.pcb"
    write_cloud(PointCloud([[1, 2, 3], [4, 5, 6]]), path)
    raw = path.read_bytes()
    assert len(raw) == 60
    assert raw[:4] == b"PCB1" and int.from_bytes(raw[4:12], "little") == 2
    assert np.frombuffer(raw[12:], "<f8").tolist() == [1, 2, 3, 4, 5, 6]


@pytest.mark.parametrize("fmt", ["pcb", "xyz"])
def test_roundtrip_bit_identical(tmp_path, fmt):
    rng = np.random.default_rng(0)
    xyz = rng.normal(size=(2000, 3)) * 10.0 ** rng.integers(-300, 300, size=(2000, 3))
    path = tmp_path / f"c.{fmt}"
    write_cloud(PointCloud(xyz), path)
    assert np.array_equal(read_cloud(path).xyz.view(np.uint64), xyz.view(np.uint64))


def test_empty_cloud(tmp_path):
    path = tmp_path / "e.pcb"
    write_cloud(PointCloud(np.empty((0, 3))), path)
    assert path.stat().st_size == 12
    assert len(read_cloud(path)) == 0
    with pytest.raises(ValueError):
        reorder_cloud(read_cloud(path), "morton")


def test_text_parsing(tmp_path):
    path = tmp_path / "a.xyz"
    path.write_text("# header\n1 2 3\n\n  4.5\t-6 7e1\n")
    cloud = read_cloud(path)
    assert cloud.xyz.tolist() == [[1, 2, 3], [4.5, -6, 70]]
    path.write_text("1 2 3\n")
    assert read_cloud(path)[0] == (1, 2, 3)


def test_text_errors(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("1 2 3\n1 2\n")
    with pytest.raises(CloudParseError) as e:
        read_cloud(path)
    assert e.value.offset == 6
    path.write_text("1 2 3\n1 x 2\n")
    with pytest.raises(CloudParseError):
        read_cloud(path)
    path.write_text("# c\n1 2 3\n1 nan 2\n")
    with pytest.raises(CloudDataError) as e:
        read_cloud(path)
    assert e.value.record == 3


def test_binary_errors(tmp_path):
    path = tmp_path / "bad.pcb"
    path.write_bytes(b"PCB2" + (0).to_bytes(8, "little"))
    with pytest.raises(CloudParseError) as e:
        read_cloud(path)
    assert e.value.offset == 0
    path.write_bytes(b"PCB1" + (3).to_bytes(8, "little") + np.zeros(7, "<f8").tobytes())
    with pytest.raises(CloudParseError) as e:
        read_cloud(path)
    assert e.value.offset == 12 + 48
    path.write_bytes(b"PCB1" + (1).to_bytes(8, "little") + np.zeros(4, "<f8").tobytes())
    with pytest.raises(CloudParseError):
        read_cloud(path)
    path.write_bytes(b"PCB1" + (2).to_bytes(8, "little") + np.array([0, 0, 0, 1, np.inf, 2], "<f8").tobytes())
    with pytest.raises(CloudDataError) as e:
        read_cloud(path)
    assert e.value.record == 2
    path.write_bytes(b"PC")
    with pytest.raises(CloudParseError):
        read_cloud(path)


def test_unknown_extension(tmp_path):
    with pytest.raises(ValueError):
        read_cloud(tmp_path / "a.las")
    write_cloud(PointCloud([[1, 2, 3]]), tmp_path / "a.dat", "pcb")
    assert read_cloud(tmp_path / "a.dat", "pcb")[0] == (1, 2, 3)


def test_write_error_has_path(tmp_path):
    with pytest.raises(OSError, match="nodir"):
        write_cloud(PointCloud([[1, 2, 3]]), tmp_path / "nodir" / "x.pcb")


def test_reorder_write_read_keeps_order(tmp_path):
    cloud = generate_cloud(SyntheticSpec("clusters", 5000, seed=4))
    coded = reorder_cloud(cloud, "hilbert")
    write_cloud(coded.cloud, tmp_path / "r.pcb")
    back = read_cloud(tmp_path / "r.pcb")
    codes = compute_codes(back, "hilbert")
    assert (codes[1:] >= codes[:-1]).all()
    build_linear_octree(reorder_cloud(back, "hilbert"), 64)


@pytest.mark.parametrize("kind", ["uniform", "clusters", "surface"])
def test_generators_are_seeded(kind):
    a = generate_cloud(SyntheticSpec(kind, 1000, seed=9))
    b = generate_cloud(SyntheticSpec(kind, 1000, seed=9))
    c = generate_cloud(SyntheticSpec(kind, 1000, seed=10))
    assert np.array_equal(a.xyz, b.xyz) and not np.array_equal(a.xyz, c.xyz)
    assert len(generate_cloud(SyntheticSpec(kind, 0, seed=1))) == 0


def test_generator_validation():
    with pytest.raises(ValueError):
        SyntheticSpec("lidar", 10)
    with pytest.raises(ValueError):
        SyntheticSpec("uniform", -1)


def test_uniform_nearest_neighbour_distance():
    from scipy.spatial import cKDTree
    from scipy.special import gamma

    n, extent = 10_000, 2.0
    cloud = generate_cloud(SyntheticSpec("uniform", n, seed=5, extent=extent))
    assert (cloud.xyz >= 0).all() and (cloud.xyz <= extent).all()
    # stay away from the walls, where neighbours are missing
    d, _ = cKDTree(cloud.xyz).query(cloud.xyz, k=2)
    inner = ((cloud.xyz > 0.2 * extent) & (cloud.xyz < 0.8 * extent)).all(axis=1)
    density = n / extent**3
    poisson_mean = gamma(4 / 3) * (4 / 3 * np.pi * density) ** (-1 / 3)
    assert d[inner, 1].mean() == pytest.approx(poisson_mean, rel=0.1)


def test_surface_is_thin():
    cloud = generate_cloud(SyntheticSpec("surface", 5000, seed=1))
    ext = cloud.bbox.extent
    assert ext[2] < 0.5 * min(ext[0], ext[1])
