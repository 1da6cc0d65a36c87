"""Modelled and measured memory overhead of the octree structures.

Overhead is expressed relative to a nominal 32 bytes per stored point:
``omega = (T_p + rho * T_o) / 32`` with ``T_o`` the bytes per node, ``T_p``
the extra bytes per inserted point and ``rho`` the node-to-point ratio.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np

from .linear_octree import LinearOctree
from .pointer_octree import PointerOctree, PtrNode

POINT_SIZE = 32


@dataclass(frozen=True)
class StructureCostParams:
    T_o: float
    T_p: float
    rho: float
    point_size: float = POINT_SIZE

    def __post_init__(self):
        if min(self.T_o, self.T_p, self.rho) < 0:
            raise ValueError("cost parameters must be non-negative")
        if not self.point_size > 0:
            raise ValueError("point_size must be positive")


# Published per-structure costs at n_max = 128, for comparison with measured builds.
REFERENCE_COSTS = {
    "linear_octree": StructureCostParams(T_o=52, T_p=0, rho=0.045),
    "pointer_octree": StructureCostParams(T_o=120, T_p=8, rho=0.045),
    "incomplete_pointer_octree": StructureCostParams(T_o=128, T_p=4, rho=0.029),
}


def expected_overhead(p: StructureCostParams) -> float:
    return (p.T_p + p.rho * p.T_o) / p.point_size


def as_percent(fraction: float, decimals: int = 2) -> float:
    """Percentage truncated (not rounded) to ``decimals`` places, as overhead tables print it."""
    scale = 10 ** decimals
    return math.floor(fraction * 100 * scale + 1e-9) / scale


@dataclass(frozen=True)
class MemoryReport:
    structure: str
    n_points: int
    n_max: int
    nodes: int
    bytes_total: int
    params: StructureCostParams

    @property
    def rho(self) -> float:
        return self.nodes / self.n_points

    @property
    def omega_expected(self) -> float:
        return expected_overhead(self.params)

    @property
    def omega_measured(self) -> float:
        return self.bytes_total / (self.params.point_size * self.n_points)


# --- per-node costs ---------------------------------------------------------
# A complete octree has 8 I + 1 nodes for I internal ones, so one node in
# eight is internal; the nominal per-node cost averages the two kinds that way.

def _blend(per_internal: float, per_leaf: float) -> float:
    return (per_internal + 7 * per_leaf) / 8


def linear_node_bytes() -> float:
    """Nominal bytes per linear-octree node, from the array dtypes alone.

    A leaf costs one ``leaves`` and one ``leaf_offsets`` entry plus a range
    row; an internal node costs its prefix, depth, eight child handles and a
    range row.
    """
    per_leaf = 8 + 8 + 16
    per_internal = 8 + 1 + 8 * 4 + 16
    return _blend(per_internal, per_leaf)


def _array_bytes(arr: np.ndarray) -> int:
    # getsizeof counts the data buffer only when the array owns it
    own = arr.nbytes if arr.base is None else 0
    return sys.getsizeof(arr) - own + arr.nbytes


def _ptr_node_bytes(node: PtrNode) -> tuple[int, int]:
    """(bytes excluding point indices, bytes of point indices)."""
    base = sys.getsizeof(node) + sys.getsizeof(node.anchor) + sum(sys.getsizeof(c) for c in node.anchor)
    if node.children is not None:
        return base + sys.getsizeof(node.children), 0
    idx = node.indices
    return base + _array_bytes(idx) - idx.nbytes, idx.nbytes


def pointer_node_bytes() -> float:
    """Nominal bytes per pointer-octree node, from prototype Python objects."""
    anchor = (1 << 20, 1 << 20, 1 << 20)
    internal = PtrNode(1, anchor)
    internal.children = [internal] * 8
    leaf = PtrNode(1, anchor)
    leaf.indices = np.arange(4, dtype=np.int64)[1:]
    return _blend(_ptr_node_bytes(internal)[0], _ptr_node_bytes(leaf)[0])


POINTER_POINT_BYTES = np.dtype(np.int64).itemsize


def measure_structure(tree) -> tuple[int, float]:
    """(bytes_total, rho) of a built structure.

    Only what the structure itself retains is counted; the point coordinates
    are not.  Python object headers are included for the pointer octree since
    they are what each of its nodes really costs.
    """
    if isinstance(tree, LinearOctree):
        return int(sum(a.nbytes for a in tree.arrays().values())), tree.n_nodes / tree.n_points
    if isinstance(tree, PointerOctree):
        total = 0
        nodes = 0
        for node in tree.nodes():
            a, b = _ptr_node_bytes(node)
            total += a + b
            nodes += 1
        return total, nodes / len(tree.cloud)
    raise TypeError(f"cannot measure {type(tree).__name__}")


def memory_report(tree) -> MemoryReport:
    """Measured bytes plus the model evaluated with the structure's own costs and measured rho."""
    bytes_total, rho = measure_structure(tree)
    if isinstance(tree, LinearOctree):
        params = StructureCostParams(linear_node_bytes(), 0.0, rho)
        return MemoryReport("linear_octree", tree.n_points, tree.n_max, tree.n_nodes, bytes_total, params)
    n = len(tree.cloud)
    params = StructureCostParams(pointer_node_bytes(), POINTER_POINT_BYTES, rho)
    return MemoryReport("pointer_octree", n, tree.n_max, round(rho * n), bytes_total, params)
