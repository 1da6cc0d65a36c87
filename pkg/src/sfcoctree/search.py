"""Fixed-radius and kNN searches over the linear octree.

Three fixed-radius variants share one traversal:

* ``lin``: descend into every octant that meets the kernel, test leaf points
  one by one.
* ``prune``: as ``lin``, but an octant entirely inside the kernel has its whole
  index range appended without tests, and disjoint octants are cut.
* ``struct``: as ``prune``, but contained octants are kept as index ranges
  instead of being expanded.

Octant boxes are rebuilt on the fly from the parent's grid anchor and the
curve's child-order table, then padded by the discretiser's rounding slack so
every point is guaranteed to sit inside the box of the leaf that stores it.
All results are indices into the *reordered* cloud.
"""

from __future__ import annotations

import heapq
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import (
    KernelShape,
    PointCloud,
    SearchKernel,
    brute_force_neighbours,
    box_point_dist_sq,
    box_relation,
    point_in_kernel,
)
from .linear_octree import LinearOctree
from .pointer_octree import PointerOctree, neighbours_ptr
from .reorder import CodedCloud
from .sfc import curve_tables

LIN, PRUNE, STRUCT = 0, 1, 2
METHOD_CODES = {"lin": LIN, "prune": PRUNE, "struct": STRUCT}


class NeighborhoodResult:
    """Members of one neighbourhood, either listed or as index ranges.

    The ranged form holds disjoint ascending ``[start, end)`` ranges plus the
    individually tested indices; iterating either form yields the member
    indices in ascending order.
    """

    __slots__ = ("indices", "ranges", "singles")

    def __init__(self, indices=None, ranges=None, singles=None):
        self.indices = indices
        self.ranges = ranges
        self.singles = singles

    @classmethod
    def materialized(cls, indices) -> "NeighborhoodResult":
        return cls(indices=np.asarray(indices, dtype=np.int64))

    @classmethod
    def ranged(cls, ranges, singles) -> "NeighborhoodResult":
        ranges = np.asarray(ranges, dtype=np.int64).reshape(-1, 2)
        return cls(ranges=ranges, singles=np.asarray(singles, dtype=np.int64))

    @property
    def is_ranged(self) -> bool:
        return self.indices is None

    def __len__(self) -> int:
        if not self.is_ranged:
            return len(self.indices)
        return int((self.ranges[:, 1] - self.ranges[:, 0]).sum()) + len(self.singles)

    def to_array(self) -> np.ndarray:
        if not self.is_ranged:
            return np.sort(self.indices)
        parts = [np.arange(a, b, dtype=np.int64) for a, b in self.ranges]
        parts.append(self.singles)
        return np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)

    def __iter__(self):
        if not self.is_ranged:
            yield from (int(i) for i in self.indices)
            return
        singles = self.singles
        s = 0
        for a, b in self.ranges:
            while s < len(singles) and singles[s] < a:
                yield int(singles[s])
                s += 1
            yield from range(int(a), int(b))
        yield from (int(i) for i in singles[s:])

    def __repr__(self) -> str:
        kind = "ranged" if self.is_ranged else "materialized"
        return f"NeighborhoodResult({kind}, n={len(self)})"


class TreeView:
    """Flat arrays of a built tree in the form the jitted kernels take."""

    def __init__(self, tree: LinearOctree, coded: CodedCloud):
        if tree.n_points != len(coded):
            raise ValueError("tree and cloud sizes differ")
        disc = tree.discretizer
        self.tree = tree
        self.xyz = coded.xyz
        self.children = np.ascontiguousarray(tree.children)
        self.n_internal = tree.n_internal
        self.ranges = np.ascontiguousarray(tree.internal_ranges)
        self.octants, self.next_state = curve_tables(tree.curve)
        self.origin = disc.origin
        self.cell = disc.cell_size
        self.pad = disc.padding()
        self.level = disc.level

    def args(self):
        return (self.xyz, self.children, self.n_internal, self.ranges, self.octants,
                self.next_state, self.origin, self.cell, self.pad, self.level)


def _view(tree, coded) -> TreeView:
    return tree if isinstance(tree, TreeView) else TreeView(tree, coded)


# --- fixed radius -----------------------------------------------------------

@njit(cache=True, nogil=True)
def _new_stack(level):
    # rows: handle, depth, curve state, grid anchor x, y, z
    return np.empty((6, 8 * (level + 2)), dtype=np.int64)


@njit(cache=True, nogil=True)
def _radius_query(mode, xyz, children, n_internal, ranges, octants, next_state, origin, cell, pad, level,
                  shape, cx, cy, cz, r, idx_buf, rng_buf, stack):
    n_idx = 0
    n_rng = 0
    st_h = stack[0]
    st_d = stack[1]
    st_s = stack[2]
    st_x = stack[3]
    st_y = stack[4]
    st_z = stack[5]
    st_h[0] = 0
    st_d[0] = 0
    st_s[0] = 0
    st_x[0] = 0
    st_y[0] = 0
    st_z[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        h = st_h[sp]
        a = ranges[h, 0]
        b = ranges[h, 1]
        d = st_d[sp]
        side = np.int64(1) << (level - d)
        gx = st_x[sp]
        gy = st_y[sp]
        gz = st_z[sp]
        lox = origin[0] + gx * cell[0] - pad[0]
        loy = origin[1] + gy * cell[1] - pad[1]
        loz = origin[2] + gz * cell[2] - pad[2]
        hix = origin[0] + (gx + side) * cell[0] + pad[0]
        hiy = origin[1] + (gy + side) * cell[1] + pad[1]
        hiz = origin[2] + (gz + side) * cell[2] + pad[2]
        rel = box_relation(shape, cx, cy, cz, r, lox, loy, loz, hix, hiy, hiz)
        if rel == 0:
            continue
        if rel == 2 and mode == 1:
            for j in range(a, b):
                idx_buf[n_idx] = j
                n_idx += 1
            continue
        if rel == 2 and mode == 2:
            if n_rng > 0 and rng_buf[n_rng - 1, 1] == a:
                rng_buf[n_rng - 1, 1] = b
            else:
                rng_buf[n_rng, 0] = a
                rng_buf[n_rng, 1] = b
                n_rng += 1
            continue
        if h >= n_internal:
            for j in range(a, b):
                if point_in_kernel(shape, cx, cy, cz, r, xyz[j, 0], xyz[j, 1], xyz[j, 2]):
                    idx_buf[n_idx] = j
                    n_idx += 1
            continue
        s = st_s[sp]
        half = side >> 1
        for k in range(7, -1, -1):
            ch = children[h, k]
            if ranges[ch, 0] == ranges[ch, 1]:
                continue
            o = octants[s, k]
            st_h[sp] = ch
            st_d[sp] = d + 1
            st_s[sp] = next_state[s, o]
            st_x[sp] = gx + ((o >> 2) & 1) * half
            st_y[sp] = gy + ((o >> 1) & 1) * half
            st_z[sp] = gz + (o & 1) * half
            sp += 1
    return n_idx, n_rng


@njit(cache=True, nogil=True)
def _radius_summary_chunk(mode, xyz, children, n_internal, ranges, octants, next_state, origin, cell, pad,
                          level, shape, r, centers, with_checksum, out_count, out_sum):
    idx_buf = np.empty(len(xyz), dtype=np.int64)
    rng_buf = np.empty((len(ranges), 2), dtype=np.int64)
    stack = _new_stack(level)
    for q in range(len(centers)):
        n_idx, n_rng = _radius_query(mode, xyz, children, n_internal, ranges, octants, next_state, origin,
                                     cell, pad, level, shape, centers[q, 0], centers[q, 1], centers[q, 2],
                                     r, idx_buf, rng_buf, stack)
        count = n_idx
        total = 0
        for t in range(n_rng):
            a = rng_buf[t, 0]
            b = rng_buf[t, 1]
            count += b - a
            if with_checksum:
                total += (a + b - 1) * (b - a) // 2
        if with_checksum:
            for t in range(n_idx):
                total += idx_buf[t]
        out_count[q] = count
        out_sum[q] = total


def _run_radius(view: TreeView, kernel: SearchKernel, mode: int):
    idx_buf = np.empty(len(view.xyz), dtype=np.int64)
    rng_buf = np.empty((len(view.ranges), 2), dtype=np.int64)
    c = kernel.center
    n_idx, n_rng = _radius_query(mode, *view.args(), int(kernel.shape), c.x, c.y, c.z, kernel.radius,
                                 idx_buf, rng_buf, _new_stack(view.level))
    return idx_buf[:n_idx].copy(), rng_buf[:n_rng].copy()


def neighbours_lin(tree, coded: CodedCloud, kernel: SearchKernel) -> NeighborhoodResult:
    idx, _ = _run_radius(_view(tree, coded), kernel, LIN)
    return NeighborhoodResult.materialized(idx)


def neighbours_prune(tree, coded: CodedCloud, kernel: SearchKernel) -> NeighborhoodResult:
    idx, _ = _run_radius(_view(tree, coded), kernel, PRUNE)
    return NeighborhoodResult.materialized(idx)


def neighbours_struct(tree, coded: CodedCloud, kernel: SearchKernel) -> NeighborhoodResult:
    idx, rng = _run_radius(_view(tree, coded), kernel, STRUCT)
    return NeighborhoodResult.ranged(rng, idx)


# --- kNN --------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _knn_query(xyz, children, n_internal, ranges, octants, next_state, origin, cell, pad, level,
               labels, cx, cy, cz, k, out_idx, out_d2):
    """Best-first kNN.  Queue entries are ``(d2, is_point, key, handle, depth,
    state, gx, gy, gz)``; at equal ``d2`` octants pop before points and points
    pop by ascending ``labels``, which gives the tie rule."""
    n_found = 0
    side0 = np.int64(1) << level
    root_d2 = box_point_dist_sq(
        cx, cy, cz,
        origin[0] - pad[0], origin[1] - pad[1], origin[2] - pad[2],
        origin[0] + side0 * cell[0] + pad[0], origin[1] + side0 * cell[1] + pad[1],
        origin[2] + side0 * cell[2] + pad[2],
    )
    z = np.int64(0)
    heap = [(root_d2, z, z, z, z, z, z, z, z)]
    while len(heap) > 0 and n_found < k:
        d2, is_point, key, h, d, s, gx, gy, gz = heapq.heappop(heap)
        if is_point == 1:
            out_idx[n_found] = h
            out_d2[n_found] = d2
            n_found += 1
            continue
        a = ranges[h, 0]
        b = ranges[h, 1]
        if a == b:
            continue
        if h >= n_internal:
            for j in range(a, b):
                dx = xyz[j, 0] - cx
                dy = xyz[j, 1] - cy
                dz = xyz[j, 2] - cz
                heapq.heappush(heap, (dx * dx + dy * dy + dz * dz, np.int64(1), labels[j], np.int64(j), z, z, z, z, z))
            continue
        half = (np.int64(1) << (level - d)) >> 1
        for c in range(8):
            o = octants[s, c]
            cxg = gx + ((o >> 2) & 1) * half
            cyg = gy + ((o >> 1) & 1) * half
            czg = gz + (o & 1) * half
            child = np.int64(children[h, c])
            if ranges[child, 0] == ranges[child, 1]:
                continue
            lox = origin[0] + cxg * cell[0] - pad[0]
            loy = origin[1] + cyg * cell[1] - pad[1]
            loz = origin[2] + czg * cell[2] - pad[2]
            hix = origin[0] + (cxg + half) * cell[0] + pad[0]
            hiy = origin[1] + (cyg + half) * cell[1] + pad[1]
            hiz = origin[2] + (czg + half) * cell[2] + pad[2]
            lb = box_point_dist_sq(cx, cy, cz, lox, loy, loz, hix, hiy, hiz)
            heapq.heappush(heap, (lb, z, child, child, d + 1, next_state[s, o], cxg, cyg, czg))
    return n_found


@njit(cache=True, nogil=True)
def _knn_chunk(xyz, children, n_internal, ranges, octants, next_state, origin, cell, pad, level,
               labels, centers, k, out_idx, out_d2):
    for q in range(len(centers)):
        _knn_query(xyz, children, n_internal, ranges, octants, next_state, origin, cell, pad, level,
                   labels, centers[q, 0], centers[q, 1], centers[q, 2], k, out_idx[q], out_d2[q])


def knn_lin_oct(tree, coded: CodedCloud, center, k: int, labels: np.ndarray | None = None):
    """The ``k`` nearest points to ``center`` as ``(indices, squared distances)``.

    Sorted by distance; ties go to the smaller index (or smaller ``labels``
    value when a relabelling is given).  ``k > N`` returns every point.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    view = _view(tree, coded)
    n = len(view.xyz)
    k = min(int(k), n)
    if labels is None:
        labels = np.arange(n, dtype=np.int64)
    cx, cy, cz = (float(c) for c in center)
    out_idx = np.empty(k, dtype=np.int64)
    out_d2 = np.empty(k, dtype=np.float64)
    found = _knn_query(*view.args(), labels, cx, cy, cz, k, out_idx, out_d2)
    return out_idx[:found], out_d2[:found]


# --- brute force ------------------------------------------------------------

@njit(cache=True, nogil=True)
def _brute_knn_one(xyz, labels, cx, cy, cz, k, out_idx, out_d2):
    n = len(xyz)
    d2 = np.empty(n, dtype=np.float64)
    for j in range(n):
        dx = xyz[j, 0] - cx
        dy = xyz[j, 1] - cy
        dz = xyz[j, 2] - cz
        d2[j] = dx * dx + dy * dy + dz * dz
    kth = np.partition(d2, k - 1)[k - 1]
    m = 0
    for j in range(n):
        if d2[j] <= kth:
            m += 1
    cand = np.empty(m, dtype=np.int64)
    m = 0
    for j in range(n):
        if d2[j] <= kth:
            cand[m] = j
            m += 1
    # order candidates by (distance, label): stable sort by label, then by distance
    cand = cand[np.argsort(labels[cand], kind="mergesort")]
    cand = cand[np.argsort(d2[cand], kind="mergesort")]
    for t in range(k):
        out_idx[t] = cand[t]
        out_d2[t] = d2[cand[t]]


@njit(cache=True, nogil=True)
def _brute_knn_chunk(xyz, labels, centers, k, out_idx, out_d2):
    for q in range(len(centers)):
        _brute_knn_one(xyz, labels, centers[q, 0], centers[q, 1], centers[q, 2], k, out_idx[q], out_d2[q])


def brute_force_knn(xyz: np.ndarray, center, k: int, labels: np.ndarray | None = None):
    """Exhaustive kNN with the same ordering and tie rule as :func:`knn_lin_oct`."""
    if k < 1:
        raise ValueError("k must be >= 1")
    xyz = np.ascontiguousarray(xyz, dtype=np.float64)
    k = min(int(k), len(xyz))
    if labels is None:
        labels = np.arange(len(xyz), dtype=np.int64)
    out_idx = np.empty(k, dtype=np.int64)
    out_d2 = np.empty(k, dtype=np.float64)
    cx, cy, cz = (float(c) for c in center)
    _brute_knn_one(xyz, np.asarray(labels, dtype=np.int64), cx, cy, cz, k, out_idx, out_d2)
    return out_idx, out_d2


def as_cloud_xyz(cloud) -> np.ndarray:
    if isinstance(cloud, (CodedCloud, PointCloud)):
        return cloud.xyz
    return np.ascontiguousarray(cloud, dtype=np.float64)


# --- batch execution --------------------------------------------------------

BATCH_METHODS = ("lin", "prune", "struct", "knn", "ptr", "brute", "brute_knn")


@dataclass(frozen=True)
class BatchQuerySpec:
    """What a batch runs: one query per center, centers taken from the cloud.

    ``mode`` is ``"full"`` (every point, in storage order) or ``"random"``
    (``size`` distinct points drawn with ``seed``).  Radius methods need
    ``shape`` and ``radius``; kNN methods need ``k``.
    """

    method: str = "struct"
    mode: str = "full"
    size: int = 5000
    seed: int | None = None
    shape: KernelShape = KernelShape.SPHERE
    radius: float | None = None
    k: int | None = None

    def __post_init__(self):
        if self.method not in BATCH_METHODS:
            raise ValueError(f"unknown batch method {self.method!r}")
        if self.mode not in ("full", "random"):
            raise ValueError(f"unknown batch mode {self.mode!r}")
        object.__setattr__(self, "shape", KernelShape.parse(self.shape))
        if self.mode == "random":
            if self.seed is None:
                raise ValueError("random mode needs an explicit seed")
            if self.size < 1:
                raise ValueError("random subset size must be >= 1")
        if self.is_knn:
            if self.k is None or self.k < 1:
                raise ValueError("kNN batches need k >= 1")
        elif self.radius is None or not self.radius > 0:
            raise ValueError("radius batches need a positive radius")

    @property
    def is_knn(self) -> bool:
        return self.method in ("knn", "brute_knn")

    def center_indices(self, n: int) -> np.ndarray:
        if self.mode == "full":
            return np.arange(n, dtype=np.int64)
        if self.size > n:
            raise ValueError(f"random subset of {self.size} exceeds cloud size {n}")
        rng = np.random.default_rng(self.seed)
        return rng.choice(n, size=self.size, replace=False).astype(np.int64)


@dataclass
class BatchResult:
    """Per-center member counts and index checksums, in center order.

    The checksum is the sum of the member indices, which is enough to tell two
    runs apart without keeping every neighbourhood.
    """

    method: str
    centers: np.ndarray
    counts: np.ndarray
    checksums: np.ndarray
    wall_time: float
    threads: int
    results: list | None = None

    @property
    def n_queries(self) -> int:
        return len(self.centers)

    @property
    def mu(self) -> float:
        return float(self.counts.mean()) if len(self.counts) else 0.0

    @property
    def per_query_mean(self) -> float:
        return self.wall_time / self.n_queries if self.n_queries else 0.0

    def same_output(self, other: "BatchResult") -> bool:
        return (np.array_equal(self.centers, other.centers)
                and np.array_equal(self.counts, other.counts)
                and np.array_equal(self.checksums, other.checksums))


@njit(cache=True, nogil=True)
def _knn_summary_chunk(xyz, children, n_internal, ranges, octants, next_state, origin, cell, pad, level,
                       labels, centers, k, out_count, out_sum):
    idx = np.empty(k, dtype=np.int64)
    d2 = np.empty(k, dtype=np.float64)
    for q in range(len(centers)):
        found = _knn_query(xyz, children, n_internal, ranges, octants, next_state, origin, cell, pad, level,
                           labels, centers[q, 0], centers[q, 1], centers[q, 2], k, idx, d2)
        total = 0
        for t in range(found):
            total += idx[t]
        out_count[q] = found
        out_sum[q] = total


@njit(cache=True, nogil=True)
def _brute_radius_chunk(xyz, shape, r, centers, out_count, out_sum):
    for q in range(len(centers)):
        cx = centers[q, 0]
        cy = centers[q, 1]
        cz = centers[q, 2]
        count = 0
        total = 0
        for j in range(len(xyz)):
            if point_in_kernel(shape, cx, cy, cz, r, xyz[j, 0], xyz[j, 1], xyz[j, 2]):
                count += 1
                total += j
        out_count[q] = count
        out_sum[q] = total


@njit(cache=True, nogil=True)
def _brute_knn_summary_chunk(xyz, labels, centers, k, out_count, out_sum):
    idx = np.empty(k, dtype=np.int64)
    d2 = np.empty(k, dtype=np.float64)
    for q in range(len(centers)):
        _brute_knn_one(xyz, labels, centers[q, 0], centers[q, 1], centers[q, 2], k, idx, d2)
        out_count[q] = k
        out_sum[q] = idx.sum()


def chunk_size(n_items: int, threads: int) -> int:
    """Adaptive work-unit size: about 16 chunks per thread, capped at 4096."""
    return max(1, min(4096, -(-n_items // (threads * 16))))


def parallel_chunks(n_items: int, threads: int, work) -> None:
    """Call ``work(start, stop)`` over consecutive chunks, ``threads`` at a time.

    Chunks are handed out from a shared queue as workers free up, so uneven
    query costs balance out.  ``work`` must write its output into disjoint
    slices; nothing is merged here.
    """
    if threads < 1:
        raise ValueError("threads must be >= 1")
    step = chunk_size(n_items, threads)
    bounds = [(a, min(a + step, n_items)) for a in range(0, n_items, step)]
    if threads == 1 or len(bounds) <= 1:
        for a, b in bounds:
            work(a, b)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for f in [pool.submit(work, a, b) for a, b in bounds]:
            f.result()


def _single_query(view, tree, xyz, spec, labels, c):
    """One materialised neighbourhood, for ``keep_results``."""
    if spec.method == "knn":
        return knn_lin_oct(view, None, c, spec.k, labels)[0]
    if spec.method == "brute_knn":
        return brute_force_knn(xyz, c, spec.k, labels)[0]
    kernel = SearchKernel(spec.shape, tuple(c), spec.radius)
    if spec.method == "lin":
        return neighbours_lin(view, None, kernel)
    if spec.method == "prune":
        return neighbours_prune(view, None, kernel)
    if spec.method == "struct":
        return neighbours_struct(view, None, kernel)
    if spec.method == "ptr":
        return neighbours_ptr(tree, kernel)
    return brute_force_neighbours(xyz, kernel)


def run_batch(tree, coded, spec: BatchQuerySpec, threads: int = 1, keep_results: bool = False,
              labels: np.ndarray | None = None) -> BatchResult:
    """Run one query per center of ``spec`` on ``threads`` worker threads.

    ``tree`` is a :class:`LinearOctree` (or a prepared :class:`TreeView`) for
    the linear methods, a :class:`PointerOctree` for ``ptr`` and ignored for
    the brute-force methods.  ``coded`` supplies the coordinates (a
    :class:`CodedCloud`, :class:`PointCloud` or array).  Output is the same
    for every thread count.
    """
    if threads < 1:
        raise ValueError("threads must be >= 1")
    method = spec.method
    xyz = as_cloud_xyz(coded)
    n = len(xyz)
    k = min(spec.k, n) if spec.is_knn else 0
    if labels is None:
        labels = np.arange(n, dtype=np.int64)
    view = None
    if method in ("lin", "prune", "struct", "knn"):
        if not isinstance(tree, (LinearOctree, TreeView)):
            raise TypeError(f"method {method!r} needs a linear octree")
        view = _view(tree, coded)
        args = view.args()
    elif method == "ptr" and not isinstance(tree, PointerOctree):
        raise TypeError("method 'ptr' needs a pointer octree")

    centers_idx = spec.center_indices(n)
    centers = np.ascontiguousarray(xyz[centers_idx])
    m = len(centers)
    counts = np.zeros(m, dtype=np.int64)
    sums = np.zeros(m, dtype=np.int64)
    results = [None] * m if keep_results else None
    shape = int(spec.shape)

    def work(a, b):
        cs = centers[a:b]
        if keep_results or method == "ptr":
            for q in range(a, b):
                res = _single_query(view, tree, xyz, spec, labels, centers[q])
                if isinstance(res, NeighborhoodResult):
                    counts[q] = len(res)
                    sums[q] = int(res.to_array().sum())
                else:
                    counts[q] = len(res)
                    sums[q] = int(np.sum(res))
                if keep_results:
                    results[q] = res
        elif method in ("lin", "prune", "struct"):
            _radius_summary_chunk(METHOD_CODES[method], *args, shape, spec.radius, cs, True,
                                  counts[a:b], sums[a:b])
        elif method == "knn":
            _knn_summary_chunk(*args, labels, cs, k, counts[a:b], sums[a:b])
        elif method == "brute":
            _brute_radius_chunk(xyz, shape, spec.radius, cs, counts[a:b], sums[a:b])
        else:
            _brute_knn_summary_chunk(xyz, labels, cs, k, counts[a:b], sums[a:b])

    t0 = time.perf_counter()
    parallel_chunks(m, threads, work)
    wall = time.perf_counter() - t0
    return BatchResult(method, centers_idx, counts, sums, wall, threads, results)
