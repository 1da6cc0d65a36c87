"""kNN locality histograms: how far apart in storage a point and its neighbours are.

For every center ``i`` the ``k`` nearest points ``j`` are found and ``|i - j|``
is counted.  A cloud stored in a good spatial order piles the mass near
``d = 0`` and leaves a long thin tail, which shows up as a large positive
skewness and small quantiles.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import PointCloud
from .linear_octree import build_linear_octree
from .reorder import CodedCloud, reorder_cloud
from .search import (
    TreeView,
    _brute_knn_one,
    _knn_query,
    _view,
    as_cloud_xyz,
    parallel_chunks,
)
from .sfc import CurveKind


@dataclass(frozen=True)
class LocalityHistogram:
    """Sparse histogram ``H(d)``: ``distances`` ascending, ``counts`` > 0."""

    k: int
    n: int
    n_centers: int
    distances: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_dense(cls, k: int, n: int, n_centers: int, dense: np.ndarray) -> "LocalityHistogram":
        d = np.flatnonzero(dense)
        return cls(k, n, n_centers, d.astype(np.int64), dense[d].astype(np.int64))

    @classmethod
    def from_mapping(cls, k: int, n: int, n_centers: int, bins: dict) -> "LocalityHistogram":
        items = sorted((int(d), int(c)) for d, c in bins.items() if c)
        d = np.array([a for a, _ in items], dtype=np.int64)
        c = np.array([b for _, b in items], dtype=np.int64)
        return cls(k, n, n_centers, d, c)

    def __getitem__(self, d: int) -> int:
        i = np.searchsorted(self.distances, d)
        if i < len(self.distances) and self.distances[i] == d:
            return int(self.counts[i])
        return 0

    def as_dict(self) -> dict[int, int]:
        return {int(d): int(c) for d, c in zip(self.distances, self.counts)}

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def mean(self) -> float:
        return float(np.dot(self.distances, self.counts) / self.total)

    def std(self) -> float:
        mu = self.mean()
        dev = self.distances - mu
        return float(np.sqrt(np.dot(dev * dev, self.counts) / self.total))

    def skewness(self) -> float:
        return fisher_pearson_skewness(self)

    def quantiles(self) -> tuple[int, int, int]:
        return histogram_quantiles(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LocalityHistogram):
            return NotImplemented
        return (self.k == other.k and self.n == other.n and self.n_centers == other.n_centers
                and np.array_equal(self.distances, other.distances)
                and np.array_equal(self.counts, other.counts))


def fisher_pearson_skewness(h: LocalityHistogram) -> float:
    """Third standardised moment of ``d`` weighted by count; 0 when all mass sits on one ``d``."""
    if h.total == 0:
        raise ValueError("empty histogram")
    w = h.counts.astype(np.float64) / h.total
    d = h.distances.astype(np.float64)
    mu = float(np.dot(w, d))
    dev = d - mu
    var = float(np.dot(w, dev * dev))
    if var <= 0.0:
        return 0.0
    return float(np.dot(w, dev ** 3) / var ** 1.5)


def histogram_quantiles(h: LocalityHistogram) -> tuple[int, int, int]:
    """Quartiles of ``d``: the smallest ``d`` whose cumulative count reaches q of the total."""
    if h.total == 0:
        raise ValueError("empty histogram")
    cum = np.cumsum(h.counts)
    out = []
    for num in (1, 2, 3):
        # cum / total >= num / 4, in integers
        i = int(np.argmax(cum * 4 >= num * h.total))
        out.append(int(h.distances[i]))
    return tuple(out)


@njit(cache=True, nogil=True)
def _accumulate_tree(xyz, children, n_internal, ranges, octants, next_state, origin, cell, pad, level,
                     labels, centers, k, hist):
    idx = np.empty(k, dtype=np.int64)
    d2 = np.empty(k, dtype=np.float64)
    for q in range(len(centers)):
        c = centers[q]
        found = _knn_query(xyz, children, n_internal, ranges, octants, next_state, origin, cell, pad,
                           level, labels, xyz[c, 0], xyz[c, 1], xyz[c, 2], k, idx, d2)
        lc = labels[c]
        for t in range(found):
            hist[abs(labels[idx[t]] - lc)] += 1


@njit(cache=True, nogil=True)
def _accumulate_brute(xyz, labels, centers, k, hist):
    idx = np.empty(k, dtype=np.int64)
    d2 = np.empty(k, dtype=np.float64)
    for q in range(len(centers)):
        c = centers[q]
        _brute_knn_one(xyz, labels, xyz[c, 0], xyz[c, 1], xyz[c, 2], k, idx, d2)
        lc = labels[c]
        for t in range(k):
            hist[abs(labels[idx[t]] - lc)] += 1


def _accumulate(tree, coded, k, centers, threads, labels, brute):
    xyz = as_cloud_xyz(coded)
    n = len(xyz)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the cloud size {n}")
    if labels is None:
        labels = np.arange(n, dtype=np.int64)
    else:
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        if len(labels) != n or not np.array_equal(np.sort(labels), np.arange(n)):
            raise ValueError("labels must be a permutation of 0..N-1")
    args = None if brute else _view(tree, coded).args()
    total = np.zeros(n, dtype=np.int64)
    lock = threading.Lock()

    def work(a, b):
        local = np.zeros(n, dtype=np.int64)
        if brute:
            _accumulate_brute(xyz, labels, centers[a:b], k, local)
        else:
            _accumulate_tree(*args, labels, centers[a:b], k, local)
        with lock:
            np.add(total, local, out=total)

    parallel_chunks(len(centers), threads, work)
    return LocalityHistogram.from_dense(k, n, len(centers), total)


def locality_histogram(tree, coded, k: int, threads: int = 1, labels: np.ndarray | None = None,
                       brute: bool = False) -> LocalityHistogram:
    """Exact histogram over every center.

    Distances are measured between storage positions.  By default the storage
    order is the tree's (reordered) order; pass ``labels`` to measure another
    order, where ``labels[i]`` is the position of tree point ``i`` in that
    order.  ``brute=True`` ignores ``tree`` and scans the cloud for every center.
    """
    n = len(as_cloud_xyz(coded))
    centers = np.arange(n, dtype=np.int64)
    return _accumulate(tree, coded, k, centers, threads, labels, brute)


def locality_histogram_approx(tree, coded, k: int, sample_size: int, seed: int, threads: int = 1,
                              labels: np.ndarray | None = None, brute: bool = False) -> LocalityHistogram:
    """Same accumulation over ``sample_size`` centers drawn uniformly without replacement."""
    n = len(as_cloud_xyz(coded))
    if not 1 <= sample_size <= n:
        raise ValueError(f"sample size must be in [1, {n}]")
    if sample_size == n:
        centers = np.arange(n, dtype=np.int64)
    else:
        centers = np.sort(np.random.default_rng(seed).choice(n, size=sample_size, replace=False))
    return _accumulate(tree, coded, k, centers.astype(np.int64), threads, labels, brute)


def storage_order_histogram(cloud: PointCloud, k: int, threads: int = 1, sample_size: int | None = None,
                            seed: int | None = None, n_max: int = 128) -> LocalityHistogram:
    """Histogram of a cloud in its *current* storage order, whatever that is.

    The neighbourhoods come from a linear octree over a Hilbert-sorted copy;
    distances are taken between the original positions, so the answer is the
    same as a brute-force scan of ``cloud`` as stored.
    """
    coded = reorder_cloud(cloud, CurveKind.HILBERT)
    tree = TreeView(build_linear_octree(coded, n_max), coded)
    labels = np.asarray(coded.permutation, dtype=np.int64)
    if sample_size is None:
        return locality_histogram(tree, coded, k, threads, labels)
    if seed is None:
        raise ValueError("sampling needs an explicit seed")
    # sample over original positions so the sample matches one drawn on the stored cloud
    n = len(cloud)
    if not 1 <= sample_size <= n:
        raise ValueError(f"sample size must be in [1, {n}]")
    picked = np.random.default_rng(seed).choice(n, size=sample_size, replace=False)
    centers = np.sort(coded.inverse_permutation()[picked]).astype(np.int64)
    return _accumulate(tree, coded, k, centers, threads, labels, False)


def coded_histogram(coded: CodedCloud, k: int, threads: int = 1, n_max: int = 128) -> LocalityHistogram:
    """Histogram of a reordered cloud in its curve order."""
    tree = build_linear_octree(coded, n_max)
    return locality_histogram(tree, coded, k, threads)
