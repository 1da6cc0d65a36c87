"""Grid discretisation and 3D Morton / Hilbert codes.

Codes use ``3 * level`` bits of an unsigned 64-bit word; at the default level
of 21 that is 63 bits with the top bit unused.  Within each 3-bit group the x
bit is the most significant, then y, then z, for both curves.

The Hilbert curve is driven by a frozen 12-state transition table.  It was
derived once from Hamilton's entry-point/direction formulation of the
Butz iteration (state = (entry corner, direction), start state (0, 0)) and is
kept literally below so that codes never change between versions.  The curve
starts at grid cell (0, 0, 0) and, at level ``L``, ends at (0, 0, 2**L - 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit

from .geometry import Aabb, Point

DEFAULT_LEVEL = 21
MAX_LEVEL = 21


class CurveKind(str, Enum):
    MORTON = "morton"
    HILBERT = "hilbert"

    @classmethod
    def parse(cls, name) -> "CurveKind":
        if isinstance(name, CurveKind):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown curve {name!r}; expected 'morton' or 'hilbert'") from None


class OutOfDomainError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


# HILBERT_DIGIT[state, octant] -> code digit; octant = x<<2 | y<<1 | z
HILBERT_DIGIT = np.array([
    [0, 7, 1, 6, 3, 4, 2, 5], [0, 3, 7, 4, 1, 2, 6, 5], [4, 7, 3, 0, 5, 6, 2, 1],
    [0, 1, 3, 2, 7, 6, 4, 5], [6, 7, 5, 4, 1, 0, 2, 3], [2, 5, 3, 4, 1, 6, 0, 7],
    [2, 1, 5, 6, 3, 0, 4, 7], [4, 5, 7, 6, 3, 2, 0, 1], [6, 1, 7, 0, 5, 2, 4, 3],
    [6, 5, 1, 2, 7, 4, 0, 3], [2, 3, 1, 0, 5, 4, 6, 7], [4, 3, 5, 2, 7, 0, 6, 1],
], dtype=np.int64)

# HILBERT_NEXT[state, octant] -> state of that child octant
HILBERT_NEXT = np.array([
    [1, 2, 3, 4, 5, 5, 3, 4], [3, 6, 7, 6, 0, 0, 8, 8], [9, 4, 9, 10, 0, 0, 8, 8],
    [0, 1, 10, 1, 11, 9, 10, 9], [2, 0, 2, 7, 6, 11, 6, 7], [7, 10, 0, 0, 7, 10, 9, 6],
    [11, 11, 5, 5, 1, 4, 1, 10], [4, 1, 8, 1, 4, 9, 5, 9], [7, 10, 1, 2, 7, 10, 11, 11],
    [11, 11, 5, 5, 3, 2, 7, 2], [2, 3, 2, 8, 6, 3, 6, 5], [8, 8, 3, 4, 9, 6, 3, 4],
], dtype=np.int64)

# HILBERT_OCTANT[state, digit] -> octant (inverse of HILBERT_DIGIT rows)
HILBERT_OCTANT = np.argsort(HILBERT_DIGIT, axis=1).astype(np.int64)

# Morton as a one-state machine, so traversal code can treat both curves alike.
MORTON_OCTANT = np.arange(8, dtype=np.int64).reshape(1, 8)
MORTON_NEXT = np.zeros((1, 8), dtype=np.int64)


def curve_tables(curve) -> tuple[np.ndarray, np.ndarray]:
    """``(octant_of_digit, next_state)`` tables for incremental decoding."""
    if CurveKind.parse(curve) is CurveKind.MORTON:
        return MORTON_OCTANT, MORTON_NEXT
    return HILBERT_OCTANT, HILBERT_NEXT


# --- bit kernels ------------------------------------------------------------

@njit(cache=True, nogil=True, inline="always")
def _spread3(v):
    v = v & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


@njit(cache=True, nogil=True, inline="always")
def _compact3(v):
    v = v & np.uint64(0x1249249249249249)
    v = (v | (v >> np.uint64(2))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v >> np.uint64(4))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v >> np.uint64(8))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v >> np.uint64(16))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v >> np.uint64(32))) & np.uint64(0x1FFFFF)
    return v


@njit(cache=True, nogil=True)
def _morton_encode_arrays(ix, iy, iz):
    out = np.empty(len(ix), dtype=np.uint64)
    for i in range(len(ix)):
        out[i] = (
            (_spread3(np.uint64(ix[i])) << np.uint64(2))
            | (_spread3(np.uint64(iy[i])) << np.uint64(1))
            | _spread3(np.uint64(iz[i]))
        )
    return out


@njit(cache=True, nogil=True)
def _morton_decode_arrays(codes):
    n = len(codes)
    out = np.empty((n, 3), dtype=np.int64)
    for i in range(n):
        c = np.uint64(codes[i])
        out[i, 0] = _compact3(c >> np.uint64(2))
        out[i, 1] = _compact3(c >> np.uint64(1))
        out[i, 2] = _compact3(c)
    return out


@njit(cache=True, nogil=True)
def _hilbert_encode_arrays(ix, iy, iz, level, digit_table, next_table):
    out = np.empty(len(ix), dtype=np.uint64)
    for i in range(len(ix)):
        x = ix[i]
        y = iy[i]
        z = iz[i]
        state = 0
        code = 0
        for b in range(level - 1, -1, -1):
            octant = (((x >> b) & 1) << 2) | (((y >> b) & 1) << 1) | ((z >> b) & 1)
            code = (code << 3) | digit_table[state, octant]
            state = next_table[state, octant]
        out[i] = code
    return out


@njit(cache=True, nogil=True)
def _hilbert_decode_arrays(codes, level, octant_table, next_table):
    n = len(codes)
    out = np.empty((n, 3), dtype=np.int64)
    for i in range(n):
        c = np.int64(codes[i])
        state = 0
        x = 0
        y = 0
        z = 0
        for b in range(level - 1, -1, -1):
            octant = octant_table[state, (c >> (3 * b)) & 7]
            x |= ((octant >> 2) & 1) << b
            y |= ((octant >> 1) & 1) << b
            z |= (octant & 1) << b
            state = next_table[state, octant]
        out[i, 0] = x
        out[i, 1] = y
        out[i, 2] = z
    return out


def _check_level(level: int) -> int:
    level = int(level)
    if not 0 <= level <= MAX_LEVEL:
        raise ValueError(f"level must be in [0, {MAX_LEVEL}], got {level}")
    return level


def _cells_array(cells, level: int) -> np.ndarray:
    arr = np.asarray(cells, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected (N, 3) grid cells, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= (1 << level)):
        raise ValueError(f"grid coordinate outside [0, 2**{level})")
    return arr


def _codes_array(codes, level: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(codes, dtype=np.uint64))
    if arr.size and int(arr.max()) >= 8**level:
        raise ValueError(f"code outside [0, 8**{level})")
    return arr


def encode_cells(cells, level: int, curve) -> np.ndarray:
    """Vectorised encode of an ``(N, 3)`` integer array of grid cells."""
    level = _check_level(level)
    arr = _cells_array(cells, level)
    ix, iy, iz = (np.ascontiguousarray(arr[:, k]) for k in range(3))
    if CurveKind.parse(curve) is CurveKind.MORTON:
        return _morton_encode_arrays(ix, iy, iz)
    return _hilbert_encode_arrays(ix, iy, iz, level, HILBERT_DIGIT, HILBERT_NEXT)


def decode_codes(codes, level: int, curve) -> np.ndarray:
    """Vectorised decode to an ``(N, 3)`` int64 array of grid cells."""
    level = _check_level(level)
    arr = _codes_array(codes, level)
    if CurveKind.parse(curve) is CurveKind.MORTON:
        return _morton_decode_arrays(arr)
    return _hilbert_decode_arrays(arr, level, HILBERT_OCTANT, HILBERT_NEXT)


def morton_encode(cell, level: int = DEFAULT_LEVEL) -> int:
    return int(encode_cells(cell, level, CurveKind.MORTON)[0])


def morton_decode(code: int, level: int = DEFAULT_LEVEL) -> tuple[int, int, int]:
    return tuple(int(c) for c in decode_codes(code, level, CurveKind.MORTON)[0])


def hilbert_encode(cell, level: int = DEFAULT_LEVEL) -> int:
    return int(encode_cells(cell, level, CurveKind.HILBERT)[0])


def hilbert_decode(code: int, level: int = DEFAULT_LEVEL) -> tuple[int, int, int]:
    return tuple(int(c) for c in decode_codes(code, level, CurveKind.HILBERT)[0])


# --- discretisation ---------------------------------------------------------

@dataclass(frozen=True)
class Discretizer:
    """Maps world coordinates inside ``bbox`` onto the ``2**level`` grid.

    ``scale[c] = 2**level / extent[c]``; an axis with zero extent gets scale 0
    so every point lands in cell 0 on that axis.  Build with
    :meth:`for_bbox`; ``cubic=True`` (the default used by the octrees) first
    grows the box to a cube so that octants are cubes in world space.
    """

    bbox: Aabb
    level: int = DEFAULT_LEVEL

    def __post_init__(self):
        object.__setattr__(self, "level", _check_level(self.level))

    @classmethod
    def for_bbox(cls, bbox: Aabb, level: int = DEFAULT_LEVEL, cubic: bool = True) -> "Discretizer":
        return cls(bbox.cubified() if cubic else bbox, level)

    @property
    def origin(self) -> np.ndarray:
        return self.bbox.lo

    @property
    def extent(self) -> np.ndarray:
        return self.bbox.extent

    @property
    def scale(self) -> np.ndarray:
        ext = self.extent
        n = float(1 << self.level)
        with np.errstate(divide="ignore"):
            return np.where(ext > 0, n / np.where(ext > 0, ext, 1.0), 0.0)

    @property
    def cell_size(self) -> np.ndarray:
        """World size of one level-``level`` cell per axis (exact: power-of-two divide)."""
        return self.extent / float(1 << self.level)

    def padding(self) -> np.ndarray:
        """Slack added to octant boxes so rounding in :meth:`discretize_points`
        can never leave a point outside the box of the cell it was assigned."""
        mag = np.maximum(np.abs(self.bbox.lo), np.abs(self.bbox.hi))
        return 1e-9 * self.extent + 16 * np.spacing(mag)

    def discretize_points(self, xyz: np.ndarray, check: bool = True) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        lo, hi = self.bbox.lo, self.bbox.hi
        if check and len(xyz):
            outside = ((xyz < lo) | (xyz > hi)).any(axis=1)
            if outside.any():
                i = int(np.flatnonzero(outside)[0])
                raise OutOfDomainError(f"point {i} {tuple(xyz[i])} lies outside {self.bbox}")
        t = np.floor((xyz - lo) * self.scale)
        top = (1 << self.level) - 1
        return np.clip(t, 0, top).astype(np.int64)

    def discretize(self, p) -> tuple[int, int, int]:
        return tuple(int(c) for c in self.discretize_points(np.asarray(p, dtype=np.float64))[0])

    def cell_box(self, anchor, depth: int) -> Aabb:
        """World box of the level-``depth`` octant whose grid anchor is ``anchor``."""
        side = float(1 << (self.level - depth))
        lo = self.origin + np.asarray(anchor, dtype=np.float64) * self.cell_size
        return Aabb(tuple(lo), tuple(lo + side * self.cell_size))


def discretize(d: Discretizer, p) -> tuple[int, int, int]:
    return d.discretize(p)


def prefix_to_octant_bounds(code_prefix: int, depth: int, d: Discretizer, curve) -> Aabb:
    """World box of the octant owning the aligned code block starting at ``code_prefix``."""
    level = d.level
    if not 0 <= depth <= level:
        raise ValueError(f"depth must be in [0, {level}], got {depth}")
    block = 8 ** (level - depth)
    code_prefix = int(code_prefix)
    if code_prefix % block or not 0 <= code_prefix < 8**level:
        raise AlignmentError(f"code {code_prefix} is not aligned to a depth-{depth} block")
    cell = decode_codes(code_prefix, level, curve)[0]
    shift = level - depth
    anchor = (cell >> shift) << shift
    return d.cell_box(anchor, depth)


def octant_center(bounds: Aabb) -> Point:
    return Point(*((bounds.lo + bounds.hi) / 2))
