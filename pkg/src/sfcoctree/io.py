"""Point-cloud files and seeded synthetic clouds.

Two formats:

* ``xyz``: text, one ``x y z`` per line, ``#`` starts a comment line.
* ``pcb``: ``b"PCB1"``, a little-endian uint64 count, then ``count`` records of
  three little-endian float64.  No padding, nothing after the last record.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .geometry import PointCloud

PCB_MAGIC = b"PCB1"
_PCB_HEADER = struct.Struct("<4sQ")
_PCB_RECORD = np.dtype("<f8")


class CloudFormat(str, Enum):
    TEXT_XYZ = "xyz"
    BINARY_PCB = "pcb"

    @classmethod
    def parse(cls, value) -> "CloudFormat":
        if isinstance(value, CloudFormat):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown cloud format {value!r}") from None

    @classmethod
    def from_path(cls, path) -> "CloudFormat":
        suffix = Path(path).suffix.lower().lstrip(".")
        if suffix in ("xyz", "txt"):
            return cls.TEXT_XYZ
        if suffix == "pcb":
            return cls.BINARY_PCB
        raise ValueError(f"cannot tell the format of {path} from its extension")


class CloudParseError(ValueError):
    """Malformed file; ``offset`` is the byte offset of the problem."""

    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.offset = offset


class CloudDataError(ValueError):
    """Well-formed file holding a non-finite coordinate; ``record`` is 1-based."""

    def __init__(self, path, record: int, message: str):
        super().__init__(f"{path}: record {record}: {message}")
        self.record = record


def _checked_cloud(xyz: np.ndarray, path, unit: str, numbers=None) -> PointCloud:
    bad = ~np.isfinite(xyz).all(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        where = numbers[i] if numbers is not None else i + 1
        raise CloudDataError(path, where, f"non-finite coordinate in {unit} {where}")
    return PointCloud(xyz)


def _read_text(path) -> PointCloud:
    raw = Path(path).read_bytes()
    rows = []
    line_numbers = []
    offset = 0
    for number, line in enumerate(raw.splitlines(keepends=True), start=1):
        text = line.strip()
        if text and not text.startswith(b"#"):
            fields = text.split()
            if len(fields) != 3:
                raise CloudParseError(path, offset, f"line {number}: expected 3 values, got {len(fields)}")
            try:
                rows.append([float(f) for f in fields])
            except ValueError:
                raise CloudParseError(path, offset, f"line {number}: not a number in {text[:60]!r}") from None
            line_numbers.append(number)
        offset += len(line)
    xyz = np.array(rows, dtype=np.float64).reshape(-1, 3)
    return _checked_cloud(xyz, path, "line", line_numbers)


def _read_pcb(path) -> PointCloud:
    raw = Path(path).read_bytes()
    if len(raw) < _PCB_HEADER.size:
        raise CloudParseError(path, len(raw), "truncated header")
    magic, count = _PCB_HEADER.unpack_from(raw)
    if magic != PCB_MAGIC:
        raise CloudParseError(path, 0, f"bad magic {magic!r}")
    expected = _PCB_HEADER.size + 24 * count
    if len(raw) < expected:
        whole = (len(raw) - _PCB_HEADER.size) // 24
        raise CloudParseError(path, _PCB_HEADER.size + 24 * whole,
                              f"truncated record {whole + 1} of {count}")
    if len(raw) > expected:
        raise CloudParseError(path, expected, f"{len(raw) - expected} trailing bytes after {count} records")
    xyz = np.frombuffer(raw, dtype=_PCB_RECORD, count=3 * count, offset=_PCB_HEADER.size)
    return _checked_cloud(xyz.reshape(-1, 3).astype(np.float64), path, "record")


def read_cloud(path, fmt=None) -> PointCloud:
    """Load a cloud, keeping the file's point order.  ``fmt`` defaults to the extension."""
    fmt = CloudFormat.from_path(path) if fmt is None else CloudFormat.parse(fmt)
    if fmt is CloudFormat.TEXT_XYZ:
        return _read_text(path)
    return _read_pcb(path)


def write_cloud(cloud, path, fmt=None) -> None:
    fmt = CloudFormat.from_path(path) if fmt is None else CloudFormat.parse(fmt)
    xyz = cloud.xyz if hasattr(cloud, "xyz") else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    try:
        with open(path, "wb") as fh:
            if fmt is CloudFormat.BINARY_PCB:
                fh.write(_PCB_HEADER.pack(PCB_MAGIC, len(xyz)))
                fh.write(np.ascontiguousarray(xyz, dtype=_PCB_RECORD).tobytes())
            else:
                # repr of a float is the shortest string that reads back to the same value
                fh.write("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in xyz.tolist()).encode())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


# --- synthetic clouds -------------------------------------------------------

SYNTHETIC_KINDS = ("uniform", "clusters", "surface")


@dataclass(frozen=True)
class SyntheticSpec:
    """Seeded generator parameters.

    ``uniform`` fills ``[0, extent)^3``.  ``clusters`` draws Gaussian blobs of
    width ``sigma * extent`` around ``num_clusters`` uniform centres (dense,
    uneven, like a ground scan).  ``surface`` is a height field over the unit
    square, ``grid`` sine bumps per side, with ``noise * extent`` vertical
    jitter (thin and sparse, like an aerial tile).
    """

    kind: str = "uniform"
    n: int = 10_000
    seed: int = 0
    extent: float = 1.0
    num_clusters: int = 8
    sigma: float = 0.03
    grid: int = 4
    noise: float = 0.01

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ValueError(f"unknown cloud kind {self.kind!r}")
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if not self.extent > 0:
            raise ValueError("extent must be positive")
        if self.num_clusters < 1 or self.grid < 1:
            raise ValueError("num_clusters and grid must be >= 1")
        if self.sigma < 0 or self.noise < 0:
            raise ValueError("sigma and noise must be >= 0")


def generate_cloud(spec: SyntheticSpec) -> PointCloud:
    rng = np.random.default_rng(spec.seed)
    n, e = spec.n, spec.extent
    if spec.kind == "uniform":
        xyz = rng.random((n, 3)) * e
    elif spec.kind == "clusters":
        centres = rng.random((spec.num_clusters, 3)) * e
        weights = rng.dirichlet(np.ones(spec.num_clusters))
        which = rng.choice(spec.num_clusters, size=n, p=weights)
        xyz = centres[which] + rng.normal(scale=spec.sigma * e, size=(n, 3))
    else:
        xy = rng.random((n, 2))
        w = 2 * np.pi * spec.grid
        height = 0.1 * np.sin(w * xy[:, 0]) * np.cos(w * xy[:, 1])
        z = height + rng.normal(scale=spec.noise, size=n)
        xyz = np.column_stack([xy, z]) * e
    return PointCloud(xyz)
