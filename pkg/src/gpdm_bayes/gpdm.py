"""Ghost point diffusion maps for Dirichlet problems.

Function values at ghost points are fixed by zero second differences
along each ghost chain, which gives the closed form

    u(x_{b,k}) = (k + 1) u(x_b) - k u(x_{b,0}).

The ghost-augmented weighted Laplacian then folds back onto the cloud as
``L1 + L2 G``. The kernel matrix ``(W - D)/eps`` approximates
``+div(kappa grad)``; :data:`OPERATOR_SIGN` flips it so the stored
operator approximates ``-div(kappa grad)``, the sign used by the loads
produced in :func:`gpdm_bayes.geometry.manufacture_rhs`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .geometry import GhostSet, PointCloud, generate_flat_interval, construct_ghost_points
from .graph_ops import GraphError, heat_kernel

__all__ = [
    "OPERATOR_SIGN",
    "COND_LIMIT",
    "SolverError",
    "ExtrapolationMatrix",
    "GpdmOperator",
    "GpdmAssembler",
    "build_extrapolation",
    "gpdm_operator",
    "solve_dirichlet_elliptic",
    "solve_harmonic",
    "check_sign_convention",
]

OPERATOR_SIGN = -1.0
COND_LIMIT = 1e12


class SolverError(RuntimeError):
    """Singular or inaccurate Dirichlet solve."""


@dataclass(frozen=True, eq=False)
class ExtrapolationMatrix:
    """Sparse ``(B*K) x N`` map from cloud values to ghost values."""

    G: sp.csr_matrix
    n_cloud: int
    K: int

    def __matmul__(self, u):
        return self.G @ u

    def toarray(self) -> np.ndarray:
        return self.G.toarray()


def build_extrapolation(cloud: PointCloud, ghosts: GhostSet) -> ExtrapolationMatrix:
    if ghosts.n_cloud != cloud.N or not np.array_equal(ghosts.boundary_idx, cloud.boundary_idx):
        raise ValueError("ghost set was not built from this cloud")
    K = ghosts.K
    k = np.tile(np.arange(1, K + 1, dtype=float), ghosts.B)
    rows = np.arange(ghosts.B * K)
    xb = np.repeat(ghosts.boundary_idx, K)
    x0 = np.repeat(ghosts.companion_idx, K)
    G = sp.csr_matrix(
        (np.concatenate([k + 1.0, -k]), (np.concatenate([rows, rows]), np.concatenate([xb, x0]))),
        shape=(ghosts.B * K, cloud.N),
    )
    return ExtrapolationMatrix(G, cloud.N, K)


@dataclass(frozen=True, eq=False)
class GpdmOperator:
    """Folded operator ``L~`` on the cloud, with its interior/boundary blocks."""

    L_tilde: np.ndarray
    interior_idx: np.ndarray
    boundary_idx: np.ndarray
    epsilon: float
    _lu: Optional[tuple] = field(default=None, repr=False)

    @property
    def permutation(self) -> np.ndarray:
        return np.concatenate([self.interior_idx, self.boundary_idx])

    @property
    def interior_block(self) -> np.ndarray:
        return self.L_tilde[np.ix_(self.interior_idx, self.interior_idx)]

    @property
    def interior_to_boundary(self) -> np.ndarray:
        return self.L_tilde[np.ix_(self.interior_idx, self.boundary_idx)]

    def factor(self):
        """LU factors of the interior block, computed once and cached."""
        if self._lu is None:
            A = self.interior_block
            with warnings.catch_warnings():
                # singularity is reported below through the condition estimate
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu, piv = sla.lu_factor(A, check_finite=False)
            anorm = np.abs(A).sum(axis=0).max()
            rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
            if info != 0 or not rcond > 1.0 / COND_LIMIT:
                cond = np.inf if rcond == 0 else 1.0 / rcond
                raise SolverError(f"interior block is near singular (condition estimate {cond:.3g})")
            object.__setattr__(self, "_lu", (lu, piv, A))
        return self._lu


class GpdmAssembler:
    """Caches the geometry of a ghost-augmented cloud for repeated assembly.

    Only the kappa-dependent factors change between calls, which is what
    the elliptic forward map needs inside an MCMC loop.
    """

    def __init__(self, cloud: PointCloud, ghosts: GhostSet, epsilon: float):
        if not epsilon > 0:
            raise GraphError(f"epsilon must be positive, got {epsilon}")
        self.cloud = cloud
        self.ghosts = ghosts
        self.epsilon = float(epsilon)
        self.G = build_extrapolation(cloud, ghosts)
        allpts = np.vstack([cloud.points, ghosts.points])
        H = heat_kernel(cloud.points, epsilon, allpts)  # (N, N + BK)
        Q = heat_kernel(allpts, epsilon).sum(axis=1)
        self._HQ = H / Q[None, :]

    def assemble(self, kappa: np.ndarray) -> GpdmOperator:
        kappa = np.asarray(kappa, dtype=float)
        N = self.cloud.N
        if kappa.shape != (N,):
            raise ValueError(f"kappa must have length {N}")
        if np.any(~(kappa > 0)):
            raise ValueError("kappa must be strictly positive on the cloud")
        # log-kappa extrapolation keeps ghost values positive
        sk = np.sqrt(np.concatenate([kappa, np.exp(self.G @ np.log(kappa))]))
        W = sk[:N, None] * self._HQ * sk[None, :]
        diag = W.sum(axis=1)
        L1 = W[:, :N]
        L1[np.diag_indices(N)] -= diag
        L2 = W[:, N:]
        Lt = L1 + (self.G.G.T @ L2.T).T
        Lt *= OPERATOR_SIGN / self.epsilon
        Lt.setflags(write=False)
        return GpdmOperator(Lt, self.cloud.interior_idx, self.cloud.boundary_idx, self.epsilon)


def gpdm_operator(cloud: PointCloud, ghosts: GhostSet, kappa_at_cloud, epsilon: float) -> GpdmOperator:
    return GpdmAssembler(cloud, ghosts, epsilon).assemble(kappa_at_cloud)


def solve_dirichlet_elliptic(op: GpdmOperator, f_interior, h_boundary) -> np.ndarray:
    """Solve the interior rows of ``L~ u = f`` with ``u = h`` on the boundary.

    ``f_interior`` and ``h_boundary`` may carry a trailing column axis to
    solve several problems against one factorization. The result is in
    cloud order with boundary entries copied from ``h_boundary``.
    """
    f = np.asarray(f_interior, dtype=float)
    h = np.asarray(h_boundary, dtype=float)
    ni, nb = len(op.interior_idx), len(op.boundary_idx)
    if f.shape[0] != ni or h.shape[0] != nb:
        raise ValueError(f"expected {ni} interior loads and {nb} boundary values")
    lu, piv, A = op.factor()
    rhs = f - op.interior_to_boundary @ h
    ui = sla.lu_solve((lu, piv), rhs, check_finite=False)
    resid = np.linalg.norm(A @ ui - rhs) / max(np.linalg.norm(rhs), np.linalg.norm(A) * np.linalg.norm(ui), 1e-300)
    if not resid <= 1e-8:
        raise SolverError(f"Dirichlet solve residual {resid:.3g} exceeds 1e-8")
    u = np.empty((ni + nb,) + f.shape[1:])
    u[op.interior_idx] = ui
    u[op.boundary_idx] = h
    return u


def solve_harmonic(cloud: PointCloud, ghosts: GhostSet, epsilon: float, boundary_values) -> np.ndarray:
    """Discrete harmonic function (kappa = 1, zero load) with given boundary data."""
    op = gpdm_operator(cloud, ghosts, np.ones(cloud.N), epsilon)
    h = np.asarray(boundary_values, dtype=float)
    f = np.zeros((len(cloud.interior_idx),) + h.shape[1:])
    return solve_dirichlet_elliptic(op, f, h)


def check_sign_convention(n: int = 101) -> float:
    """Confirm that the operator sign reproduces ``-u'' = f`` on [0, 1].

    Solves with ``f = pi^2 sin(pi x)`` and returns the relative L2 error
    against ``sin(pi x)``; raises if it is not small.
    """
    cloud = generate_flat_interval(n)
    ghosts = construct_ghost_points(cloud, 8)
    h = 1.0 / (n - 1)
    x = cloud.intrinsic[:, 0]
    op = gpdm_operator(cloud, ghosts, np.ones(n), 2.0 * h * h)
    u = solve_dirichlet_elliptic(op, (np.pi**2 * np.sin(np.pi * x))[cloud.interior_idx], np.zeros(2))
    exact = np.sin(np.pi * x)
    err = float(np.linalg.norm(u - exact) / np.linalg.norm(exact))
    if not err < 0.05:
        raise SolverError(f"operator sign self-test failed (relative error {err:.3g})")
    return err
