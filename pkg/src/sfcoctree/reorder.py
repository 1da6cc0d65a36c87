"""Encode a whole cloud and sort it along a space-filling curve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud
from .sfc import DEFAULT_LEVEL, CurveKind, Discretizer, encode_cells


class EmptyCloudError(ValueError):
    pass


@dataclass(frozen=True)
class CodedCloud:
    """A cloud stored in curve order together with its sorted codes.

    ``permutation[i]`` is the index in the original cloud of the point now
    stored at ``i``.
    """

    cloud: PointCloud
    codes: np.ndarray
    permutation: np.ndarray
    curve: CurveKind
    discretizer: Discretizer

    def __len__(self) -> int:
        return len(self.cloud)

    @property
    def xyz(self) -> np.ndarray:
        return self.cloud.xyz

    @property
    def level(self) -> int:
        return self.discretizer.level

    def inverse_permutation(self) -> np.ndarray:
        inv = np.empty_like(self.permutation)
        inv[self.permutation] = np.arange(len(self.permutation))
        return inv

    def to_original_indices(self, idx) -> np.ndarray:
        return self.permutation[np.asarray(idx, dtype=np.int64)]


def compute_codes(
    cloud: PointCloud, curve, discretizer: Discretizer | None = None, level: int = DEFAULT_LEVEL
) -> np.ndarray:
    """Curve code of every point, in the cloud's current storage order."""
    if len(cloud) == 0:
        raise EmptyCloudError("cannot encode an empty cloud")
    if discretizer is None:
        discretizer = Discretizer.for_bbox(cloud.bbox, level)
    cells = discretizer.discretize_points(cloud.xyz)
    return encode_cells(cells, discretizer.level, curve)


def reorder_cloud(cloud: PointCloud, curve, level: int = DEFAULT_LEVEL) -> CodedCloud:
    """Stable sort of the cloud by curve code; equal codes keep their input order."""
    curve = CurveKind.parse(curve)
    if len(cloud) == 0:
        raise EmptyCloudError("cannot reorder an empty cloud")
    disc = Discretizer.for_bbox(cloud.bbox, level)
    codes = compute_codes(cloud, curve, disc)
    # numpy's stable sort is a radix sort for small ints and timsort otherwise;
    # only stability is contractual here.
    order = np.argsort(codes, kind="stable")
    sorted_codes = codes[order]
    sorted_codes.flags.writeable = False
    order.flags.writeable = False
    return CodedCloud(cloud.take(order), sorted_codes, order, curve, disc)
