"""Array-based (linear) octree over a curve-sorted cloud.

Every node is an aligned block of curve codes, and because the cloud is
sorted by code every node also owns one contiguous range of cloud indices.

Layout (all flat numpy arrays):

* ``leaves``: ascending block boundaries, ``leaves[0] == 0`` and
  ``leaves[-1] == 8**level``.  Empty leaves are kept so that every block is
  a genuine octant.
* ``leaf_offsets``: first cloud index of each leaf (prefix sums of counts).
* ``node_prefix`` / ``node_depth`` / ``children``: one row per internal node;
  ``children[h]`` holds eight node handles in ascending code order.
* ``internal_ranges``: ``[start, end)`` cloud range of every node.

Handles ``0 .. n_internal - 1`` are internal nodes (in pre-order), handles
``n_internal + i`` are leaf ``i``.  Handle 0 is always the root.  Octant
centres are never stored; boxes are decoded from the code prefix when needed.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import Aabb
from .reorder import CodedCloud
from .sfc import CurveKind, Discretizer, prefix_to_octant_bounds

DEFAULT_NMAX = 128


class StructureError(ValueError):
    pass


@dataclass(frozen=True)
class LinearOctree:
    leaves: np.ndarray
    leaf_offsets: np.ndarray
    node_prefix: np.ndarray
    node_depth: np.ndarray
    children: np.ndarray
    internal_ranges: np.ndarray
    n_max: int
    curve: CurveKind
    discretizer: Discretizer

    @property
    def level(self) -> int:
        return self.discretizer.level

    @property
    def n_internal(self) -> int:
        return len(self.node_prefix)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves) - 1

    @property
    def n_nodes(self) -> int:
        return self.n_internal + self.n_leaves

    @property
    def n_points(self) -> int:
        return int(self.leaf_offsets[-1])

    @property
    def root(self) -> int:
        return 0

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.leaf_offsets)

    def is_leaf(self, node: int) -> bool:
        return node >= self.n_internal

    def leaf_index(self, node: int) -> int:
        if not self.is_leaf(node):
            raise ValueError(f"node {node} is internal")
        return node - self.n_internal

    def leaf_handle(self, i: int) -> int:
        return self.n_internal + i

    def depth_of(self, node: int) -> int:
        if not self.is_leaf(node):
            return int(self.node_depth[node])
        i = self.leaf_index(node)
        span = int(self.leaves[i + 1]) - int(self.leaves[i])
        return self.level - (span.bit_length() - 1) // 3

    def prefix_of(self, node: int) -> int:
        if not self.is_leaf(node):
            return int(self.node_prefix[node])
        return int(self.leaves[self.leaf_index(node)])

    def children_of(self, node: int) -> list[int]:
        if self.is_leaf(node):
            return []
        return [int(c) for c in self.children[node]]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "leaves": self.leaves,
            "leaf_offsets": self.leaf_offsets,
            "node_prefix": self.node_prefix,
            "node_depth": self.node_depth,
            "children": self.children,
            "internal_ranges": self.internal_ranges,
        }


# --- leaf discovery ---------------------------------------------------------

@njit(cache=True, nogil=True)
def _refine(codes, start_lo, start_depth, start_a, start_b, stop_depth, n_max, level):
    """Depth-first subdivision of one aligned block.

    Returns the ascending leaf starts, their depths and an ``open`` flag set
    for blocks that still hold more than ``n_max`` points when ``stop_depth``
    is reached (those are refined later, possibly by another thread).
    """
    cap = 64
    out_lo = np.empty(cap, dtype=np.uint64)
    out_depth = np.empty(cap, dtype=np.int64)
    out_open = np.empty(cap, dtype=np.bool_)
    n_out = 0

    stack_lo = np.empty(8 * (level + 1), dtype=np.uint64)
    stack_depth = np.empty(8 * (level + 1), dtype=np.int64)
    stack_a = np.empty(8 * (level + 1), dtype=np.int64)
    stack_b = np.empty(8 * (level + 1), dtype=np.int64)
    sp = 0
    stack_lo[0] = start_lo
    stack_depth[0] = start_depth
    stack_a[0] = start_a
    stack_b[0] = start_b
    sp = 1
    while sp > 0:
        sp -= 1
        lo = stack_lo[sp]
        depth = stack_depth[sp]
        a = stack_a[sp]
        b = stack_b[sp]
        split = b - a > n_max and depth < level
        if split and depth < stop_depth:
            child_span = np.uint64(1) << np.uint64(3 * (level - depth - 1))
            # bounds of the 8 children inside [a, b), searched in the parent's range
            bounds = np.empty(9, dtype=np.int64)
            bounds[0] = a
            bounds[8] = b
            for k in range(1, 8):
                key = lo + np.uint64(k) * child_span
                bounds[k] = a + np.searchsorted(codes[a:b], key)
            for k in range(7, -1, -1):
                stack_lo[sp] = lo + np.uint64(k) * child_span
                stack_depth[sp] = depth + 1
                stack_a[sp] = bounds[k]
                stack_b[sp] = bounds[k + 1]
                sp += 1
            continue
        if n_out == cap:
            cap *= 2
            tmp_lo = np.empty(cap, dtype=np.uint64)
            tmp_depth = np.empty(cap, dtype=np.int64)
            tmp_open = np.empty(cap, dtype=np.bool_)
            tmp_lo[:n_out] = out_lo[:n_out]
            tmp_depth[:n_out] = out_depth[:n_out]
            tmp_open[:n_out] = out_open[:n_out]
            out_lo = tmp_lo
            out_depth = tmp_depth
            out_open = tmp_open
        out_lo[n_out] = lo
        out_depth[n_out] = depth
        out_open[n_out] = split
        n_out += 1
    return out_lo[:n_out], out_depth[:n_out], out_open[:n_out]


def _check_sorted(codes: np.ndarray) -> None:
    if len(codes) > 1 and not bool(np.all(codes[1:] >= codes[:-1])):
        raise ValueError("codes must be sorted in non-decreasing order")


def _finish_leaves(codes: np.ndarray, starts: np.ndarray, level: int):
    leaves = np.empty(len(starts) + 1, dtype=np.uint64)
    leaves[:-1] = starts
    leaves[-1] = np.uint64(8**level)
    offsets = np.searchsorted(codes, leaves[:-1]).astype(np.int64)
    offsets = np.append(offsets, np.int64(len(codes)))
    return leaves, offsets


def build_leaves(coded: CodedCloud | np.ndarray, n_max: int = DEFAULT_NMAX, level: int | None = None):
    """Leaf boundaries and per-leaf start offsets for sorted ``codes``.

    A block is split into its eight aligned sub-blocks while it holds more
    than ``n_max`` points and is larger than a single cell.  Counts come from
    binary searches on the sorted code array.
    """
    codes, level = _codes_and_level(coded, level)
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    _check_sorted(codes)
    starts, _, _ = _refine(codes, np.uint64(0), 0, 0, len(codes), level, n_max, level)
    return _finish_leaves(codes, starts, level)


def build_leaves_parallel(coded: CodedCloud | np.ndarray, n_max: int = DEFAULT_NMAX, threads: int = 2,
                          level: int | None = None):
    """Same leaves as :func:`build_leaves`, refined in disjoint code sections.

    The top of the tree is refined sequentially down to a small cut depth;
    every block still over capacity there becomes an independent section
    refined on the thread pool.  Sections are stitched back in code order.
    """
    codes, level = _codes_and_level(coded, level)
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    _check_sorted(codes)
    if threads <= 1:
        return build_leaves(codes, n_max, level)
    cut = 1
    while 8**cut < 4 * threads and cut < level:
        cut += 1
    top_lo, top_depth, top_open = _refine(codes, np.uint64(0), 0, 0, len(codes), cut, n_max, level)

    def refine_section(j):
        depth = int(top_depth[j])
        lo = top_lo[j]
        span = np.uint64(8 ** (level - depth))
        a = int(np.searchsorted(codes, lo))
        b = int(np.searchsorted(codes, lo + span))
        starts, _, _ = _refine(codes, lo, depth, a, b, level, n_max, level)
        return starts

    open_idx = np.flatnonzero(top_open)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        refined = dict(zip(open_idx.tolist(), pool.map(refine_section, open_idx.tolist())))
    pieces = [refined[j] if top_open[j] else top_lo[j:j + 1] for j in range(len(top_lo))]
    return _finish_leaves(codes, np.concatenate(pieces), level)


def _codes_and_level(coded, level):
    if isinstance(coded, CodedCloud):
        return np.asarray(coded.codes, dtype=np.uint64), coded.level
    if level is None:
        raise ValueError("level is required when passing a bare code array")
    return np.asarray(coded, dtype=np.uint64), int(level)


# --- internal linking -------------------------------------------------------

@njit(cache=True, nogil=True)
def _link(leaves, leaf_offsets, level):
    n_leaves = len(leaves) - 1
    n_internal = (n_leaves - 1) // 7
    prefix = np.zeros(n_internal, dtype=np.uint64)
    depth = np.zeros(n_internal, dtype=np.uint8)
    children = np.full((n_internal, 8), -1, dtype=np.int32)
    ranges = np.empty((n_internal + n_leaves, 2), dtype=np.int64)
    if n_internal == 0:
        ranges[0, 0] = leaf_offsets[0]
        ranges[0, 1] = leaf_offsets[1]
        return prefix, depth, children, ranges, 0

    stack = np.empty(level + 1, dtype=np.int64)
    slot = np.zeros(n_internal, dtype=np.int64)
    next_id = 1
    stack[0] = 0
    sp = 1
    ranges[0, 0] = leaf_offsets[0]
    for i in range(n_leaves):
        lo = leaves[i]
        span = leaves[i + 1] - lo
        ld = level
        s = span
        while s > np.uint64(1):
            s = s >> np.uint64(3)
            ld -= 1
        if sp == 0:
            return prefix, depth, children, ranges, 1
        while np.int64(depth[stack[sp - 1]]) + 1 < ld:
            parent = stack[sp - 1]
            if next_id >= n_internal:
                return prefix, depth, children, ranges, 2
            node = next_id
            next_id += 1
            nd = np.int64(depth[parent]) + 1
            depth[node] = nd
            prefix[node] = lo & ~((np.uint64(1) << np.uint64(3 * (level - nd))) - np.uint64(1))
            children[parent, slot[parent]] = node
            slot[parent] += 1
            ranges[node, 0] = leaf_offsets[i]
            stack[sp] = node
            sp += 1
        parent = stack[sp - 1]
        if np.int64(depth[parent]) + 1 != ld:
            return prefix, depth, children, ranges, 3
        expected = prefix[parent] + np.uint64(slot[parent]) * span
        if expected != lo:
            return prefix, depth, children, ranges, 4
        children[parent, slot[parent]] = n_internal + i
        slot[parent] += 1
        ranges[n_internal + i, 0] = leaf_offsets[i]
        ranges[n_internal + i, 1] = leaf_offsets[i + 1]
        while sp > 0 and slot[stack[sp - 1]] == 8:
            ranges[stack[sp - 1], 1] = leaf_offsets[i + 1]
            sp -= 1
    if sp != 0 or next_id != n_internal:
        return prefix, depth, children, ranges, 5
    return prefix, depth, children, ranges, 0


def validate_leaves(leaves: np.ndarray, level: int) -> None:
    leaves = np.asarray(leaves, dtype=np.uint64)
    if len(leaves) < 2 or int(leaves[0]) != 0 or int(leaves[-1]) != 8**level:
        raise StructureError("leaves must start at 0 and end at 8**level")
    spans = np.diff(leaves)
    if not bool(np.all(leaves[1:] > leaves[:-1])):
        raise StructureError("leaves must be strictly increasing")
    # a power of 8 has exactly one set bit at a multiple-of-3 position
    single_bit = (spans & (spans - np.uint64(1))) == 0
    bitpos = np.log2(spans.astype(np.float64)).round().astype(np.int64)
    if not bool(np.all(single_bit)) or bool(np.any(bitpos % 3)):
        raise StructureError("every leaf span must be a power of 8")
    if bool(np.any(leaves[:-1] % spans)):
        raise StructureError("every leaf must start on a multiple of its span")
    if (len(leaves) - 2) % 7:
        raise StructureError("leaf count is not 1 + 7k; not an octant tiling")


def link_internal(leaves: np.ndarray, leaf_offsets: np.ndarray, level: int):
    """Internal-node table and per-node index ranges for a valid leaves array."""
    leaves = np.ascontiguousarray(leaves, dtype=np.uint64)
    leaf_offsets = np.ascontiguousarray(leaf_offsets, dtype=np.int64)
    validate_leaves(leaves, level)
    if len(leaf_offsets) != len(leaves):
        raise StructureError("leaf_offsets must have one entry per leaf boundary")
    prefix, depth, children, ranges, err = _link(leaves, leaf_offsets, level)
    if err:
        raise StructureError(f"leaves do not form an octant tiling (code {err})")
    return prefix, depth, children, ranges


def build_linear_octree(coded: CodedCloud, n_max: int = DEFAULT_NMAX, threads: int = 1) -> LinearOctree:
    if len(coded) == 0:
        raise ValueError("cannot build an octree over an empty cloud")
    if threads > 1:
        leaves, offsets = build_leaves_parallel(coded, n_max, threads)
    else:
        leaves, offsets = build_leaves(coded, n_max)
    prefix, depth, children, ranges = link_internal(leaves, offsets, coded.level)
    for arr in (leaves, offsets, prefix, depth, children, ranges):
        arr.flags.writeable = False
    return LinearOctree(leaves, offsets, prefix, depth, children, ranges, n_max, coded.curve, coded.discretizer)


def node_bounds(tree: LinearOctree, node: int) -> Aabb:
    return prefix_to_octant_bounds(tree.prefix_of(node), tree.depth_of(node), tree.discretizer, tree.curve)


def points_in_node(tree: LinearOctree, node: int) -> tuple[int, int]:
    start, end = tree.internal_ranges[node]
    return int(start), int(end)


# --- serialisation ----------------------------------------------------------
# "LOC1", then little-endian header and arrays in declaration order.

_MAGIC = b"LOC1"
_HEADER = struct.Struct("<4sBB2xQQQ6d")
_CURVE_IDS = {CurveKind.MORTON: 0, CurveKind.HILBERT: 1}


def save_linear_octree(tree: LinearOctree, path) -> None:
    bbox = tree.discretizer.bbox
    header = _HEADER.pack(
        _MAGIC, tree.level, _CURVE_IDS[tree.curve], tree.n_max, tree.n_leaves, tree.n_internal,
        *bbox.min_corner, *bbox.max_corner,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(tree.leaves.astype("<u8").tobytes())
        fh.write(tree.leaf_offsets.astype("<i8").tobytes())
        fh.write(tree.node_prefix.astype("<u8").tobytes())
        fh.write(tree.node_depth.astype("u1").tobytes())
        fh.write(tree.children.astype("<i4").tobytes())
        fh.write(tree.internal_ranges.astype("<i8").tobytes())


def load_linear_octree(path) -> LinearOctree:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise StructureError(f"{path}: truncated header")
    magic, level, curve_id, n_max, n_leaves, n_internal, *box = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise StructureError(f"{path}: bad magic {magic!r}")
    curve = {v: k for k, v in _CURVE_IDS.items()}[curve_id]
    n_nodes = n_leaves + n_internal
    pos = _HEADER.size

    def take(dtype, count, shape=None):
        nonlocal pos
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
        pos += arr.nbytes
        arr = arr.astype(np.dtype(dtype).newbyteorder("="))
        return arr.reshape(shape) if shape else arr

    leaves = take("<u8", n_leaves + 1)
    offsets = take("<i8", n_leaves + 1)
    prefix = take("<u8", n_internal)
    depth = take("u1", n_internal)
    children = take("<i4", 8 * n_internal, (n_internal, 8))
    ranges = take("<i8", 2 * n_nodes, (n_nodes, 2))
    disc = Discretizer(Aabb(tuple(box[:3]), tuple(box[3:])), level)
    return LinearOctree(leaves, offsets, prefix, depth, children, ranges, n_max, curve, disc)
