"""Points, boxes, search kernels and the box/kernel predicates every index uses.

Kernel membership is strict (``< r``) for all four shapes. The 2D kernels
(circle, square) ignore the z coordinate entirely.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit


class Point(NamedTuple):
    x: float
    y: float
    z: float


class KernelShape(IntEnum):
    SPHERE = 0
    CIRCLE = 1
    CUBE = 2
    SQUARE = 3

    @classmethod
    def parse(cls, name: str | "KernelShape") -> "KernelShape":
        if isinstance(name, KernelShape):
            return name
        if isinstance(name, (int, np.integer)):
            return cls(int(name))
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ValueError(f"unknown kernel shape {name!r}") from None


class Relation(IntEnum):
    DISJOINT = 0
    INTERSECTS = 1
    CONTAINS = 2


def _as_point(p: Sequence[float]) -> Point:
    x, y, z = (float(c) for c in p)
    return Point(x, y, z)


@dataclass(frozen=True)
class Aabb:
    """Closed axis-aligned box ``[min_corner, max_corner]``."""

    min_corner: Point
    max_corner: Point

    def __post_init__(self):
        lo = _as_point(self.min_corner)
        hi = _as_point(self.max_corner)
        if not all(np.isfinite(lo + hi)):
            raise ValueError("box corners must be finite")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"min corner {lo} exceeds max corner {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @classmethod
    def from_points(cls, xyz: np.ndarray) -> "Aabb":
        xyz = np.asarray(xyz, dtype=np.float64)
        if len(xyz) == 0:
            raise ValueError("cannot bound an empty point set")
        return cls(tuple(xyz.min(axis=0)), tuple(xyz.max(axis=0)))

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.min_corner)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.max_corner)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    def cubified(self) -> "Aabb":
        """Grow to a cube of the longest side, anchored at the min corner."""
        side = float(self.extent.max())
        return Aabb(self.min_corner, tuple(self.lo + side))

    def contains_point(self, p: Sequence[float]) -> bool:
        p = _as_point(p)
        return all(a <= c <= b for a, c, b in zip(self.min_corner, p, self.max_corner))


class PointCloud:
    """Immutable, contiguous ``(N, 3)`` float64 storage with a cached bbox.

    Index ``i`` always returns the same point; reordering produces a new cloud.
    """

    __slots__ = ("_xyz", "_bbox")

    def __init__(self, xyz):
        arr = np.array(xyz, dtype=np.float64, order="C", copy=True)
        if arr.size == 0:
            arr = arr.reshape(0, 3)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError(f"expected an (N, 3) array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            bad = int(np.flatnonzero(~np.isfinite(arr).all(axis=1))[0])
            raise ValueError(f"non-finite coordinate at point {bad}")
        arr.flags.writeable = False
        self._xyz = arr
        self._bbox = Aabb.from_points(arr) if len(arr) else None

    @property
    def xyz(self) -> np.ndarray:
        return self._xyz

    @property
    def bbox(self) -> Aabb:
        if self._bbox is None:
            raise ValueError("empty cloud has no bounding box")
        return self._bbox

    def __len__(self) -> int:
        return len(self._xyz)

    def __getitem__(self, i: int) -> Point:
        return Point(*(float(c) for c in self._xyz[i]))

    def take(self, order: np.ndarray) -> "PointCloud":
        return PointCloud(self._xyz[np.asarray(order)])

    def __repr__(self) -> str:
        return f"PointCloud(n={len(self)})"


@dataclass(frozen=True)
class SearchKernel:
    shape: KernelShape
    center: Point
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "shape", KernelShape.parse(self.shape))
        object.__setattr__(self, "center", _as_point(self.center))
        r = float(self.radius)
        if not r > 0 or not np.isfinite(r):
            raise ValueError(f"kernel radius must be positive and finite, got {self.radius!r}")
        object.__setattr__(self, "radius", r)


# --- jitted primitives ------------------------------------------------------
# Shared by every search backend so that the point test is bit-for-bit the
# same expression everywhere (the brute-force oracle included).

@njit(cache=True, nogil=True, inline="always")
def point_in_kernel(shape, cx, cy, cz, r, x, y, z):
    dx = x - cx
    dy = y - cy
    if shape == 0:
        dz = z - cz
        return dx * dx + dy * dy + dz * dz < r * r
    if shape == 1:
        return dx * dx + dy * dy < r * r
    if shape == 2:
        dz = z - cz
        return max(abs(dx), abs(dy), abs(dz)) < r
    return max(abs(dx), abs(dy)) < r


@njit(cache=True, nogil=True, inline="always")
def _near_far(c, lo, hi):
    # per-axis distance from c to the closest and farthest point of [lo, hi]
    g = min(max(c, lo), hi)
    near = abs(g - c)
    far = max(abs(lo - c), abs(hi - c))
    return near, far


@njit(cache=True, nogil=True, inline="always")
def box_relation(shape, cx, cy, cz, r, lox, loy, loz, hix, hiy, hiz):
    """0 = disjoint, 1 = intersects, 2 = box contained in the kernel."""
    nx, fx = _near_far(cx, lox, hix)
    ny, fy = _near_far(cy, loy, hiy)
    if shape == 0 or shape == 2:
        nz, fz = _near_far(cz, loz, hiz)
    else:
        nz = 0.0
        fz = 0.0
    if shape == 0 or shape == 1:
        r2 = r * r
        if nx * nx + ny * ny + nz * nz >= r2:
            return 0
        if fx * fx + fy * fy + fz * fz < r2:
            return 2
        return 1
    if max(nx, ny, nz) >= r:
        return 0
    if max(fx, fy, fz) < r:
        return 2
    return 1


@njit(cache=True, nogil=True, inline="always")
def box_point_dist_sq(x, y, z, lox, loy, loz, hix, hiy, hiz):
    gx = min(max(x, lox), hix) - x
    gy = min(max(y, loy), hiy) - y
    gz = min(max(z, loz), hiz) - z
    return gx * gx + gy * gy + gz * gz


@njit(cache=True, nogil=True)
def kernel_mask(xyz, shape, cx, cy, cz, r):
    out = np.empty(len(xyz), dtype=np.bool_)
    for i in range(len(xyz)):
        out[i] = point_in_kernel(shape, cx, cy, cz, r, xyz[i, 0], xyz[i, 1], xyz[i, 2])
    return out


@njit(cache=True, nogil=True)
def kernel_mask_subset(xyz, idx, shape, cx, cy, cz, r):
    out = np.empty(len(idx), dtype=np.bool_)
    for j in range(len(idx)):
        i = idx[j]
        out[j] = point_in_kernel(shape, cx, cy, cz, r, xyz[i, 0], xyz[i, 1], xyz[i, 2])
    return out


# --- public API -------------------------------------------------------------

def kernel_contains(kernel: SearchKernel, p: Sequence[float]) -> bool:
    c = kernel.center
    x, y, z = _as_point(p)
    return bool(point_in_kernel(int(kernel.shape), c.x, c.y, c.z, kernel.radius, x, y, z))


def octant_point_distance_sq(bounds: Aabb, p: Sequence[float]) -> float:
    """Squared L2 distance from ``p`` to the closest point of ``bounds`` (0 inside)."""
    x, y, z = _as_point(p)
    return float(box_point_dist_sq(x, y, z, *bounds.min_corner, *bounds.max_corner))


def kernel_octant_relation(kernel: SearchKernel, bounds: Aabb) -> Relation:
    c = kernel.center
    rel = box_relation(
        int(kernel.shape), c.x, c.y, c.z, kernel.radius, *bounds.min_corner, *bounds.max_corner
    )
    return Relation(int(rel))


def brute_force_neighbours(xyz: np.ndarray, kernel: SearchKernel) -> np.ndarray:
    """Linear-scan oracle: sorted indices of all points inside ``kernel``."""
    c = kernel.center
    mask = kernel_mask(np.ascontiguousarray(xyz, dtype=np.float64), int(kernel.shape), c.x, c.y, c.z, kernel.radius)
    return np.flatnonzero(mask)
