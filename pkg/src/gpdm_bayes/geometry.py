"""Test manifolds sampled as point clouds, ghost points, manufactured data.

The built-in geometries (flat interval, semi-ellipse, semi-torus) are
uniform grids in intrinsic coordinates. Intrinsic coordinates and the
analytic metric are kept only so that exact solutions and right-hand
sides can be manufactured; every operator downstream works from the
ambient coordinates alone.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "PointCloud",
    "GhostSet",
    "GeometryError",
    "generate_flat_interval",
    "generate_semi_ellipse",
    "generate_semi_torus",
    "generate_geometry",
    "construct_ghost_points",
    "metric_tensor",
    "manufacture_rhs",
    "ellipse_arclength",
    "write_cloud_csv",
    "read_cloud_csv",
    "write_ghosts_csv",
]


class GeometryError(ValueError):
    """Raised for degenerate clouds or ghost constructions."""


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points of a sampled manifold with a boundary/interior partition.

    ``boundary_components`` maps a label (``"B1"``, ``"B2"``) to the
    indices of that component, in increasing intrinsic order.
    """

    points: np.ndarray
    intrinsic: np.ndarray
    boundary_idx: np.ndarray
    interior_idx: np.ndarray
    boundary_components: dict[str, np.ndarray]
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise GeometryError("points must be a non-empty (N, D) array")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point coordinates must be finite")
        n = pts.shape[0]
        b = np.asarray(self.boundary_idx, dtype=np.intp)
        i = np.asarray(self.interior_idx, dtype=np.intp)
        if len(np.intersect1d(b, i)) or not np.array_equal(
            np.sort(np.concatenate([b, i])), np.arange(n)
        ):
            raise GeometryError("boundary and interior indices must partition 0..N-1")
        for a in (pts, b, i):
            a.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "intrinsic", np.atleast_2d(np.asarray(self.intrinsic, float)))
        object.__setattr__(self, "boundary_idx", b)
        object.__setattr__(self, "interior_idx", i)

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def B(self) -> int:
        return len(self.boundary_idx)

    @property
    def D(self) -> int:
        return self.points.shape[1]

    @property
    def d(self) -> int:
        return self.intrinsic.shape[1]

    def is_boundary(self) -> np.ndarray:
        mask = np.zeros(self.N, dtype=bool)
        mask[self.boundary_idx] = True
        return mask


@dataclass(frozen=True, eq=False)
class GhostSet:
    """Ghost chains ``x_b + h*k*v_b`` (k = 1..K) for every boundary point.

    Arrays are ordered like ``boundary_idx``; flattened ghost order is
    boundary-point major, chain step minor.
    """

    boundary_idx: np.ndarray
    companion_idx: np.ndarray
    normals: np.ndarray
    spacing: np.ndarray
    ghosts: np.ndarray  # (B, K, D)
    n_cloud: int

    @property
    def K(self) -> int:
        return self.ghosts.shape[1]

    @property
    def B(self) -> int:
        return self.ghosts.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self.ghosts.reshape(-1, self.ghosts.shape[2])

    def __len__(self) -> int:
        return self.B * self.K


# -- generators ---------------------------------------------------------------


def _cloud(points, intrinsic, components, name, params) -> PointCloud:
    boundary = np.concatenate(list(components.values())) if components else np.empty(0, np.intp)
    interior = np.setdiff1d(np.arange(len(points)), boundary)
    return PointCloud(points, intrinsic, boundary, interior, components, name, params)


def generate_flat_interval(n: int, length: float = 1.0) -> PointCloud:
    """``n`` equispaced points on ``[0, length]`` embedded in R^1."""
    if n < 3:
        raise GeometryError(f"need at least 3 points for an interior, got n={n}")
    x = np.linspace(0.0, length, n)
    comps = {"B1": np.array([0]), "B2": np.array([n - 1])}
    return _cloud(x[:, None], x[:, None], comps, "flat_interval", {"n": n, "length": length})


def generate_semi_ellipse(n: int, alpha_max: float = np.pi) -> PointCloud:
    """``n`` points ``(cos a, 3 sin a)`` with ``a`` uniform on ``[0, alpha_max]``.

    ``alpha_max = pi/2`` gives the first-quadrant arc.
    """
    if n < 3:
        raise GeometryError(f"need at least 3 points for an interior, got n={n}")
    if not 0 < alpha_max <= 2 * np.pi:
        raise GeometryError("alpha_max must lie in (0, 2*pi]")
    a = np.linspace(0.0, alpha_max, n)
    pts = np.column_stack([np.cos(a), 3.0 * np.sin(a)])
    comps = {"B1": np.array([0]), "B2": np.array([n - 1])}
    return _cloud(pts, a[:, None], comps, "semi_ellipse", {"n": n, "alpha_max": alpha_max})


def generate_semi_torus(n1: int, n2: int) -> PointCloud:
    """``n1 x n2`` grid on the half torus; alpha periodic, beta in ``[0, pi]``.

    Points are ordered alpha-major. The boundary circles beta = 0 and
    beta = pi are components ``B1`` and ``B2``.
    """
    if n1 < 3 or n2 < 3:
        raise GeometryError(f"degenerate grid {n1}x{n2}; both sides must be >= 3")
    alpha = np.linspace(0.0, 2 * np.pi, n1, endpoint=False)
    beta = np.linspace(0.0, np.pi, n2)
    A, Bt = np.meshgrid(alpha, beta, indexing="ij")
    A, Bt = A.ravel(), Bt.ravel()
    r = 2.0 + np.cos(A)
    pts = np.column_stack([r * np.cos(Bt), r * np.sin(Bt), np.sin(A)])
    idx = np.arange(n1 * n2).reshape(n1, n2)
    comps = {"B1": idx[:, 0].copy(), "B2": idx[:, -1].copy()}
    return _cloud(pts, np.column_stack([A, Bt]), comps, "semi_torus", {"n1": n1, "n2": n2})


def generate_geometry(spec: dict) -> PointCloud:
    """Build a cloud from a ``{"kind": ..., ...}`` mapping (config helper)."""
    kind = spec["kind"]
    if kind == "flat_interval":
        return generate_flat_interval(int(spec["n"]), float(spec.get("length", 1.0)))
    if kind == "semi_ellipse":
        return generate_semi_ellipse(int(spec["n"]), float(spec.get("alpha_max", np.pi)))
    if kind == "semi_torus":
        return generate_semi_torus(int(spec["n1"]), int(spec["n2"]))
    raise GeometryError(f"unknown geometry kind {kind!r}")


# -- metrics ------------------------------------------------------------------


def _metric_flat(coords):
    return np.ones((len(coords), 1, 1))


def _metric_ellipse(coords):
    a = coords[:, 0]
    return (np.sin(a) ** 2 + 9.0 * np.cos(a) ** 2)[:, None, None]


def _metric_torus(coords):
    a = coords[:, 0]
    g = np.zeros((len(coords), 2, 2))
    g[:, 0, 0] = 1.0
    g[:, 1, 1] = (2.0 + np.cos(a)) ** 2
    return g


_METRICS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "flat_interval": _metric_flat,
    "semi_ellipse": _metric_ellipse,
    "semi_torus": _metric_torus,
}


def metric_tensor(name: str, coords: np.ndarray) -> np.ndarray:
    """Riemannian metric ``g_ij`` at intrinsic ``coords`` (shape (n, d, d))."""
    try:
        fn = _METRICS[name]
    except KeyError:
        raise GeometryError(f"no analytic metric for geometry {name!r}") from None
    return fn(np.atleast_2d(np.asarray(coords, dtype=float)))


def ellipse_arclength(alpha: np.ndarray, n_quad: int = 20001) -> np.ndarray:
    """Arclength of the semi-ellipse from 0 to each ``alpha`` (trapezoid rule)."""
    alpha = np.asarray(alpha, dtype=float)
    grid = np.linspace(0.0, max(float(alpha.max()), 1e-300), n_quad)
    speed = np.sqrt(np.sin(grid) ** 2 + 9.0 * np.cos(grid) ** 2)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(grid))])
    return np.interp(alpha, grid, cum)


# -- ghost points -------------------------------------------------------------


def construct_ghost_points(cloud: PointCloud, K: int) -> GhostSet:
    """Place ``K`` ghosts along the secant normal at each boundary point.

    The normal at ``x_b`` points away from its nearest interior point
    ``x_{b,0}`` (ties resolved by lowest index) and the chain spacing is
    the distance between the two.
    """
    if K < 1:
        raise GeometryError(f"K must be positive, got {K}")
    if cloud.B == 0:
        raise GeometryError("cloud has no boundary points")
    if len(cloud.interior_idx) == 0:
        raise GeometryError("cloud has no interior points")
    xb = cloud.points[cloud.boundary_idx]
    xi = cloud.points[cloud.interior_idx]
    dist = cdist(xb, xi)
    # argmin returns the first minimiser; interior_idx is sorted so that is the lowest index
    nearest = np.argmin(dist, axis=1)
    companion = cloud.interior_idx[nearest]
    h = dist[np.arange(cloud.B), nearest]
    if np.any(h <= 0):
        bad = cloud.boundary_idx[h <= 0]
        raise GeometryError(f"boundary points {bad.tolist()} coincide with interior points")
    normals = (xb - cloud.points[companion]) / h[:, None]
    k = np.arange(1, K + 1, dtype=float)
    ghosts = xb[:, None, :] + (h[:, None] * k[None, :])[:, :, None] * normals[:, None, :]
    for a in (normals, h, ghosts, companion):
        a.setflags(write=False)
    return GhostSet(cloud.boundary_idx.copy(), companion, normals, h, ghosts, cloud.N)


# -- manufactured right-hand sides ---------------------------------------------


def _grid_spacing(cloud: PointCloud) -> np.ndarray:
    """Smallest positive intrinsic spacing along each coordinate."""
    out = []
    for j in range(cloud.d):
        u = np.unique(cloud.intrinsic[:, j])
        out.append(np.min(np.diff(u)) if len(u) > 1 else 1.0)
    return np.asarray(out)


def manufacture_rhs(
    kappa: Callable[..., np.ndarray],
    u_true: Callable[..., np.ndarray],
    cloud: PointCloud,
    step: float | None = None,
) -> np.ndarray:
    """Load ``f = -div(kappa grad u)`` at every cloud point.

    Computed in intrinsic coordinates from the metric identity
    ``-(1/sqrt|g|) d_i(kappa g^ij d_j u sqrt|g|)`` with nested central
    differences on an auxiliary stencil of width ``step``. The default
    step is 1/64 of the cloud's smallest intrinsic spacing.

    ``kappa`` and ``u_true`` take one array per intrinsic coordinate.
    """
    x = cloud.intrinsic
    d = cloud.d
    if step is None:
        step = float(np.min(_grid_spacing(cloud))) / 64.0
    if step <= 0:
        raise GeometryError("step must be positive")
    hs = 0.5 * step
    eye = np.eye(d)

    def ev(fn, pts):
        vals = np.asarray(fn(*pts.T), dtype=float)
        return np.broadcast_to(vals, (len(pts),)).astype(float)

    def flux(pts):
        # F^i = kappa sqrt|g| g^{ij} d_j u, derivatives by central differences
        g = metric_tensor(cloud.name, pts)
        ginv = np.linalg.inv(g)
        sq = np.sqrt(np.linalg.det(g))
        grad = np.column_stack(
            [(ev(u_true, pts + hs * eye[j]) - ev(u_true, pts - hs * eye[j])) / step for j in range(d)]
        )
        return (ev(kappa, pts) * sq)[:, None] * np.einsum("nij,nj->ni", ginv, grad)

    div = np.zeros(len(x))
    for i in range(d):
        div += (flux(x + hs * eye[i])[:, i] - flux(x - hs * eye[i])[:, i]) / step
    sq = np.sqrt(np.linalg.det(metric_tensor(cloud.name, x)))
    f = -div / sq
    if not np.all(np.isfinite(f)):
        raise GeometryError("supplied fields produced non-finite values")
    return f


# -- serialization ------------------------------------------------------------


def write_cloud_csv(cloud: PointCloud, path) -> None:
    """One row per point: ``idx, x1..xD, a1..ad, is_boundary, component``."""
    label = {}
    for name, idx in cloud.boundary_components.items():
        for i in idx:
            label[int(i)] = name
    mask = cloud.is_boundary()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["idx"]
            + [f"x{j + 1}" for j in range(cloud.D)]
            + [f"a{j + 1}" for j in range(cloud.d)]
            + ["is_boundary", "component"]
        )
        for n in range(cloud.N):
            w.writerow(
                [n]
                + [repr(float(v)) for v in cloud.points[n]]
                + [repr(float(v)) for v in cloud.intrinsic[n]]
                + [int(mask[n]), label.get(n, "")]
            )


def read_cloud_csv(path, name: str = "custom") -> PointCloud:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    acols = [i for i, h in enumerate(header) if h.startswith("a")]
    bcol, ccol = header.index("is_boundary"), header.index("component")
    pts = np.array([[float(r[i]) for i in xcols] for r in body])
    intr = np.array([[float(r[i]) for i in acols] for r in body])
    comps: dict[str, list[int]] = {}
    for n, r in enumerate(body):
        if int(r[bcol]):
            comps.setdefault(r[ccol] or "B1", []).append(n)
    components = {k: np.array(v) for k, v in comps.items()}
    return _cloud(pts, intr, components, name, {})


def write_ghosts_csv(ghosts: GhostSet, path) -> None:
    """One row per ghost: ``b_idx, k, x1..xD``."""
    D = ghosts.ghosts.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["b_idx", "k"] + [f"x{j + 1}" for j in range(D)])
        for b, bidx in enumerate(ghosts.boundary_idx):
            for k in range(ghosts.K):
                w.writerow([int(bidx), k + 1] + [repr(float(v)) for v in ghosts.ghosts[b, k]])
