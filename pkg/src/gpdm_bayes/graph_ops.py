"""Kernel matrices, graph Laplacians and their spectra.

All matrices are dense; the problem sizes this package targets stay
below a couple of thousand nodes.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import cdist

__all__ = [
    "KernelConfig",
    "GraphOperator",
    "SpectralDecomposition",
    "GraphError",
    "DEFAULT_EPS_GRID",
    "log_T",
    "calibrate_epsilon",
    "kernel_density",
    "heat_kernel",
    "weighted_laplacian",
    "self_tuned_laplacian",
    "truncated_laplacian",
    "spectral_decompose",
    "fix_signs",
    "write_operator",
    "write_spectrum_csv",
]

DEFAULT_EPS_GRID = np.logspace(-6, 2, 41)


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    epsilon: float
    k_closest: int = 51
    d: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise GraphError(f"epsilon must be positive, got {self.epsilon}")
        if self.k_closest < 2:
            raise GraphError("k_closest must be at least 2")
        if self.d < 1:
            raise GraphError("intrinsic dimension must be >= 1")


@dataclass(frozen=True, eq=False)
class BlockPartition:
    n_interior: int
    n_boundary: int
    permutation: np.ndarray  # interior indices first, then boundary


@dataclass(frozen=True, eq=False)
class GraphOperator:
    matrix: np.ndarray
    kind: str
    block: Optional[BlockPartition] = None
    epsilon: Optional[float] = None

    KINDS = ("weighted_laplacian", "self_tuned", "truncated", "gpdm")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise GraphError(f"unknown operator kind {self.kind!r}")
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise GraphError("operator matrix must be square")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    @property
    def symmetric(self) -> bool:
        return self.kind in ("self_tuned", "truncated")


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """``m`` smallest eigenpairs, eigenvalues ascending, vectors as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def m(self) -> int:
        return len(self.eigenvalues)

    @property
    def N(self) -> int:
        return self.eigenvectors.shape[0]


def _sqdist(x, y=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return cdist(x, x if y is None else np.asarray(y, dtype=float), "sqeuclidean")


# -- bandwidth calibration ----------------------------------------------------


def _knn_sqdist(points: np.ndarray, k: int) -> np.ndarray:
    """Squared distances from each point to its ``k`` closest points, self first."""
    d2 = _sqdist(points)
    # stable sort keeps index order among equal distances
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return np.take_along_axis(d2, order, axis=1)


def log_T(points: np.ndarray, k_closest: int, grid: np.ndarray) -> np.ndarray:
    """``log sum_i sum_{j<=K} exp(-|x_i - x_j(i)|^2 / 4 eps)`` for each eps in ``grid``.

    The K closest points of ``x_i`` include ``x_i`` itself, so ``T >= N``
    and ``log T`` rises from ``log N`` to ``log(N K)``.
    """
    points = np.asarray(points, dtype=float)
    if k_closest > len(points):
        raise GraphError(f"k_closest={k_closest} exceeds the number of points {len(points)}")
    d2 = _knn_sqdist(points, k_closest).ravel()
    out = np.empty(len(grid))
    for n, eps in enumerate(grid):
        out[n] = np.log(np.sum(np.exp(-d2 / (4.0 * eps))))
    return out


def calibrate_epsilon(points, k_closest: int, grid=None, return_table: bool = False):
    """Pick the bandwidth where ``log T`` grows fastest against ``log eps``.

    Returns ``(eps_star, slope)``; with ``return_table`` also the arrays
    ``(log eps, log T, slope)`` with NaN slope at the two grid ends.
    """
    points = np.asarray(points, dtype=float)
    grid = DEFAULT_EPS_GRID if grid is None else np.asarray(grid, dtype=float)
    if len(grid) < 3:
        raise GraphError("bandwidth grid needs at least 3 candidates for a centered slope")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise GraphError("bandwidth grid must be positive and increasing")
    if k_closest < 2 or k_closest >= len(points):
        raise GraphError(f"k_closest must lie in [2, N), got {k_closest}")
    if np.allclose(points, points[0]):
        raise GraphError("all points are identical")
    le = np.log(grid)
    lt = log_T(points, k_closest, grid)
    slope = np.full(len(grid), np.nan)
    slope[1:-1] = (lt[2:] - lt[:-2]) / (le[2:] - le[:-2])
    star = int(np.nanargmax(slope))
    result = (float(grid[star]), float(slope[star]))
    if return_table:
        return result, (le, lt, slope)
    return result


# -- kernels and Laplacians -----------------------------------------------------


def heat_kernel(points, epsilon: float, others=None) -> np.ndarray:
    """``H_ij = exp(-|x_i - x_j|^2 / 4 eps)``."""
    if not epsilon > 0:
        raise GraphError(f"epsilon must be positive, got {epsilon}")
    return np.exp(-_sqdist(points, others) / (4.0 * epsilon))


def kernel_density(points, epsilon: float, d: int) -> np.ndarray:
    """Gaussian kernel density estimate at each sample point."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    H = heat_kernel(points, epsilon)
    norm = (2.0**d) * np.pi ** (d / 2.0) * n * epsilon ** (d / 2.0)
    return H.sum(axis=1) / norm


def weighted_laplacian(points, kappa_values, epsilon: float, d: int = 1) -> GraphOperator:
    """Diffusion-map estimate of ``div(kappa grad u)``: ``(W - D) / eps``.

    ``W_ij = sqrt(kappa_i kappa_j) H_ij / Q_j`` with ``Q`` the kernel row
    sums, and ``D`` the row sums of ``W``. Rows therefore sum to zero.
    ``d`` only documents the intrinsic dimension; the matrix does not
    depend on it.
    """
    points = np.asarray(points, dtype=float)
    kappa = np.asarray(kappa_values, dtype=float)
    if kappa.shape != (len(points),):
        raise GraphError("kappa_values must have one entry per point")
    if np.any(~(kappa > 0)):
        raise GraphError("kappa_values must be strictly positive")
    H = heat_kernel(points, epsilon)
    Q = H.sum(axis=1)
    sk = np.sqrt(kappa)
    W = sk[:, None] * (H / Q[None, :]) * sk[None, :]
    L = W - np.diag(W.sum(axis=1))
    return GraphOperator(L / epsilon, "weighted_laplacian", epsilon=float(epsilon))


def self_tuned_laplacian(points, k_nn: int) -> GraphOperator:
    """Symmetric normalized Laplacian of a self-tuning kernel.

    Bandwidth ``sigma_i`` is the distance to the ``k_nn``-th neighbour;
    the kernel ``exp(-|x_i-x_j|^2/(sigma_i sigma_j))`` is density
    normalized once and then symmetrically normalized, giving
    ``I - R^{-1/2} S R^{-1/2}``.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if not 1 <= k_nn < n:
        raise GraphError(f"k_nn must lie in [1, N), got {k_nn}")
    d2 = _sqdist(points)
    sigma = np.sqrt(np.sort(d2, axis=1)[:, k_nn])
    if np.any(sigma <= 0):
        raise GraphError("duplicate points give a zero self-tuning bandwidth")
    S = np.exp(-d2 / np.outer(sigma, sigma))
    p = S.sum(axis=1)
    S = S / np.outer(p, p)
    r = 1.0 / np.sqrt(S.sum(axis=1))
    L = np.eye(n) - r[:, None] * S * r[None, :]
    L = 0.5 * (L + L.T)
    return GraphOperator(L, "self_tuned")


def truncated_laplacian(full: GraphOperator, cloud_size: int) -> GraphOperator:
    """Leading ``cloud_size`` principal block of an operator on cloud + ghosts."""
    if not 0 < cloud_size <= full.N:
        raise GraphError(f"cloud_size {cloud_size} incompatible with a {full.N}x{full.N} operator")
    if full.kind == "truncated":
        raise GraphError("operator is already truncated")
    sub = np.array(full.matrix[:cloud_size, :cloud_size])
    return GraphOperator(sub, "truncated", epsilon=full.epsilon)


# -- spectra --------------------------------------------------------------------


def fix_signs(vectors: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Flip columns so that each one's first non-negligible entry is positive."""
    vectors = np.array(vectors, dtype=float)
    for j in range(vectors.shape[1]):
        col = vectors[:, j]
        nz = np.flatnonzero(np.abs(col) > tol * max(np.abs(col).max(), 1e-300))
        if len(nz) and col[nz[0]] < 0:
            vectors[:, j] = -col
    return vectors


def spectral_decompose(op, m: int) -> SpectralDecomposition:
    """``m`` smallest eigenpairs of a symmetric operator (or plain matrix)."""
    if isinstance(op, GraphOperator):
        if not op.symmetric:
            raise GraphError(f"{op.kind} operators are solved, not decomposed")
        A = op.matrix
    else:
        A = np.asarray(op, dtype=float)
    n = A.shape[0]
    if not 1 <= m <= n:
        raise GraphError(f"m must lie in [1, {n}], got {m}")
    scale = max(np.abs(A).max(), 1e-300)
    if np.abs(A - A.T).max() > 1e-12 * scale:
        raise GraphError("matrix is not symmetric")
    vals, vecs = sla.eigh(A, subset_by_index=[0, m - 1])
    vecs = fix_signs(vecs)
    vals.setflags(write=False)
    vecs.setflags(write=False)
    return SpectralDecomposition(vals, vecs)


# -- export ---------------------------------------------------------------------


def write_operator(op: GraphOperator, csv_path, json_path, n_boundary: int | None = None) -> None:
    """Dense row-major CSV plus a ``{kind, N, B, epsilon}`` JSON header."""
    np.savetxt(csv_path, op.matrix, delimiter=",", fmt="%.17g")
    B = n_boundary if n_boundary is not None else (op.block.n_boundary if op.block else 0)
    with open(json_path, "w") as fh:
        json.dump({"kind": op.kind, "N": op.N, "B": B, "epsilon": op.epsilon}, fh, indent=2)


def write_spectrum_csv(spec: SpectralDecomposition, path) -> None:
    """Columns ``n, lambda, v_1..v_N``; one row per eigenpair."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "lambda"] + [f"v_{i + 1}" for i in range(spec.N)])
        for n in range(spec.m):
            w.writerow(
                [n + 1, repr(float(spec.eigenvalues[n]))]
                + [repr(float(v)) for v in spec.eigenvectors[:, n]]
            )
