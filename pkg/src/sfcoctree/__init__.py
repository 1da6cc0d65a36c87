"""Space-filling-curve point reordering, linear octrees and neighbourhood search."""

from .geometry import (
    Aabb,
    KernelShape,
    Point,
    PointCloud,
    Relation,
    SearchKernel,
    brute_force_neighbours,
    kernel_contains,
    kernel_octant_relation,
    octant_point_distance_sq,
)
from .io import CloudFormat, SyntheticSpec, generate_cloud, read_cloud, write_cloud
from .linear_octree import LinearOctree, build_linear_octree, load_linear_octree, save_linear_octree
from .locality import (
    LocalityHistogram,
    fisher_pearson_skewness,
    histogram_quantiles,
    locality_histogram,
    locality_histogram_approx,
    storage_order_histogram,
)
from .memory_model import StructureCostParams, expected_overhead, measure_structure, memory_report
from .pointer_octree import PointerOctree, build_pointer_octree, neighbours_ptr
from .reorder import CodedCloud, compute_codes, reorder_cloud
from .search import (
    BatchQuerySpec,
    BatchResult,
    NeighborhoodResult,
    TreeView,
    brute_force_knn,
    knn_lin_oct,
    neighbours_lin,
    neighbours_prune,
    neighbours_struct,
    run_batch,
)
from .sfc import (
    CurveKind,
    Discretizer,
    decode_codes,
    discretize,
    encode_cells,
    hilbert_decode,
    hilbert_encode,
    morton_decode,
    morton_encode,
    prefix_to_octant_bounds,
)

__version__ = "0.1.0"
