"""Classic pointer-based complete octree, kept as a baseline and a structural oracle.

The root covers the cubified bounding box and every subdivision creates all
eight children, including empty ones.  Children are assigned from the same
integer grid the space-filling curves use, which is the half-open
``[lo, mid) / [mid, hi)`` rule without floating-point midpoint comparisons, so
this tree partitions space exactly like the linear octree does.
"""

from __future__ import annotations

import numpy as np

from .geometry import Aabb, PointCloud, SearchKernel, kernel_mask_subset
from .geometry import box_relation
from .sfc import DEFAULT_LEVEL, Discretizer

DEFAULT_NMAX = 128


class PtrNode:
    __slots__ = ("depth", "anchor", "children", "indices")

    def __init__(self, depth: int, anchor: tuple[int, int, int]):
        self.depth = depth
        self.anchor = anchor
        self.children: list[PtrNode] | None = None
        self.indices: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None


class PointerOctree:
    def __init__(self, cloud: PointCloud, root: PtrNode, discretizer: Discretizer, n_max: int, max_depth: int):
        self.cloud = cloud
        self.root = root
        self.discretizer = discretizer
        self.n_max = n_max
        self.max_depth = max_depth
        self._pad = discretizer.padding()

    def nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if node.children is not None:
                stack.extend(reversed(node.children))

    def leaves(self):
        return (n for n in self.nodes() if n.is_leaf)

    def node_count(self) -> int:
        return sum(1 for _ in self.nodes())

    def node_bounds(self, node: PtrNode) -> Aabb:
        return self.discretizer.cell_box(node.anchor, node.depth)

    def _padded_box(self, node: PtrNode):
        d = self.discretizer
        side = float(1 << (d.level - node.depth))
        lo = d.origin + np.asarray(node.anchor, dtype=np.float64) * d.cell_size
        hi = lo + side * d.cell_size
        return lo - self._pad, hi + self._pad


def build_pointer_octree(
    cloud: PointCloud, n_max: int = DEFAULT_NMAX, max_depth: int = DEFAULT_LEVEL
) -> PointerOctree:
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if len(cloud) == 0:
        raise ValueError("cannot build an octree over an empty cloud")
    disc = Discretizer.for_bbox(cloud.bbox, DEFAULT_LEVEL)
    if not 0 <= max_depth <= disc.level:
        raise ValueError(f"max_depth must be in [0, {disc.level}]")
    cells = disc.discretize_points(cloud.xyz, check=False)
    level = disc.level

    root = PtrNode(0, (0, 0, 0))
    stack = [(root, np.arange(len(cloud), dtype=np.int64))]
    while stack:
        node, idx = stack.pop()
        if len(idx) <= n_max or node.depth >= max_depth:
            node.indices = idx
            continue
        shift = level - 1 - node.depth
        c = cells[idx] >> shift & 1
        octant = c[:, 0] << 2 | c[:, 1] << 1 | c[:, 2]
        order = np.argsort(octant, kind="stable")
        bounds = np.searchsorted(octant[order], np.arange(9))
        node.children = []
        ax, ay, az = node.anchor
        for k in range(8):
            child = PtrNode(
                node.depth + 1,
                (ax | (k >> 2 & 1) << shift, ay | (k >> 1 & 1) << shift, az | (k & 1) << shift),
            )
            node.children.append(child)
            stack.append((child, idx[order[bounds[k]:bounds[k + 1]]]))
    return PointerOctree(cloud, root, disc, n_max, max_depth)


def neighbours_ptr(tree: PointerOctree, kernel: SearchKernel) -> np.ndarray:
    """Sorted indices of all points inside ``kernel``.

    Descends into every child whose box meets the kernel and checks the
    points of the reached leaves one by one (in a single vectorised pass).
    """
    shape = int(kernel.shape)
    cx, cy, cz = kernel.center
    r = kernel.radius
    candidates = []
    stack = [tree.root]
    while stack:
        node = stack.pop()
        lo, hi = tree._padded_box(node)
        if box_relation(shape, cx, cy, cz, r, lo[0], lo[1], lo[2], hi[0], hi[1], hi[2]) == 0:
            continue
        if node.children is None:
            if len(node.indices):
                candidates.append(node.indices)
        else:
            stack.extend(node.children)
    if not candidates:
        return np.empty(0, dtype=np.int64)
    idx = np.concatenate(candidates)
    hit = idx[kernel_mask_subset(tree.cloud.xyz, idx, shape, cx, cy, cz, r)]
    hit.sort()
    return hit
