"""K-nearest-neighbour extension of node functions to off-cloud points."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import PointCloud

__all__ = ["InterpConfig", "knn_interpolate"]


@dataclass(frozen=True)
class InterpConfig:
    k: int = 1
    metric: str = "euclidean"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.metric != "euclidean":
            raise ValueError("only ambient Euclidean distance is supported")


def knn_interpolate(theta_N, cloud: PointCloud | np.ndarray, queries, config: InterpConfig = InterpConfig()) -> np.ndarray:
    """Average of ``theta_N`` over the ``k`` closest cloud points of each query.

    Distance ties go to the lower cloud index. ``cloud`` may be a
    :class:`PointCloud` or a bare (N, D) array.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) == 0:
        raise ValueError("empty cloud")
    theta = np.asarray(theta_N, dtype=float)
    if len(theta) != len(pts):
        raise ValueError("theta_N must have one value per cloud point")
    if config.k > len(pts):
        raise ValueError(f"k={config.k} exceeds cloud size {len(pts)}")
    q = np.asarray(queries, dtype=float)
    if q.ndim == 1:
        q = q[:, None] if pts.shape[1] == 1 else q[None, :]
    if not np.all(np.isfinite(q)):
        raise ValueError("queries must be finite")
    d2 = cdist(q, pts, "sqeuclidean")
    nearest = np.argsort(d2, axis=1, kind="stable")[:, : config.k]
    return theta[nearest].mean(axis=1)
