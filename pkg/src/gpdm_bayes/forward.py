"""Discretized forward maps and synthetic observations."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import GhostSet, PointCloud
from .gpdm import GpdmAssembler, SolverError, solve_dirichlet_elliptic
from .prior import PriorModel, PriorSample

__all__ = [
    "ForwardError",
    "EllipticForwardModel",
    "HeatForwardModel",
    "Observation",
    "elliptic_forward",
    "heat_forward",
    "heat_propagate",
    "heat_regress_coefficients",
    "generate_observations",
    "write_observations_csv",
    "read_observations_csv",
    "write_node_csv",
]


class ForwardError(RuntimeError):
    """Forward evaluation failed; ``theta`` holds the offending input."""

    def __init__(self, message: str, theta: Optional[np.ndarray] = None):
        super().__init__(message)
        self.theta = theta


@dataclass(eq=False)
class EllipticForwardModel:
    """log-diffusion -> Dirichlet solution, with geometry factors cached."""

    cloud: PointCloud
    ghosts: GhostSet
    epsilon: float
    f_N: np.ndarray
    h_B: np.ndarray
    obs_idx: np.ndarray
    _assembler: GpdmAssembler = field(init=False, repr=False)

    def __post_init__(self):
        self.f_N = np.asarray(self.f_N, dtype=float)
        self.h_B = np.asarray(self.h_B, dtype=float)
        self.obs_idx = np.asarray(self.obs_idx, dtype=np.intp)
        if self.h_B.shape != (self.cloud.B,):
            raise ValueError(f"h_B must have length B={self.cloud.B}")
        if self.f_N.shape != (self.cloud.N,):
            raise ValueError(f"f_N must have length N={self.cloud.N}")
        if len(self.obs_idx) and (self.obs_idx.min() < 0 or self.obs_idx.max() >= self.cloud.N):
            raise ValueError("observation indices out of range")
        self._assembler = GpdmAssembler(self.cloud, self.ghosts, self.epsilon)

    def __call__(self, theta_N) -> np.ndarray:
        return elliptic_forward(self, theta_N)


def elliptic_forward(model: EllipticForwardModel, theta_N) -> np.ndarray:
    theta = np.asarray(theta_N, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ForwardError("non-finite log-diffusion values", theta)
    with np.errstate(over="raise"):
        try:
            kappa = np.exp(theta)
        except FloatingPointError:
            raise ForwardError("log-diffusion overflows", theta) from None
    try:
        op = model._assembler.assemble(kappa)
        return solve_dirichlet_elliptic(op, model.f_N[model.cloud.interior_idx], model.h_B)
    except (SolverError, ValueError, FloatingPointError) as exc:
        raise ForwardError(str(exc), theta) from exc


@dataclass(eq=False)
class HeatForwardModel:
    prior: PriorModel
    t_star: float
    obs_idx: np.ndarray

    def __post_init__(self):
        if not self.t_star >= 0:
            raise ValueError("t_star must be non-negative")
        self.obs_idx = np.asarray(self.obs_idx, dtype=np.intp)

    @property
    def spectrum(self):
        return self.prior.spectrum

    @property
    def basis(self):
        return self.prior.basis

    def decay(self, t: Optional[float] = None) -> np.ndarray:
        t = self.t_star if t is None else t
        lam = np.clip(self.spectrum.eigenvalues[: self.prior.m], 0.0, None)
        return np.exp(-lam * t)

    def __call__(self, coeffs) -> np.ndarray:
        zeta, mu = self.prior.split(coeffs)
        return heat_forward(self, PriorSample(zeta, mu, self.prior.reconstruct(coeffs)))


def heat_propagate(phi: np.ndarray, decay: np.ndarray, w0: np.ndarray) -> np.ndarray:
    """``sum_n <phi_n, w0> decay_n phi_n``."""
    return phi @ (decay * (phi.T @ w0))


def heat_forward(model: HeatForwardModel, sample: PriorSample) -> np.ndarray:
    """Heat at ``t_star`` from an initial condition given by prior coefficients.

    The interior term is propagated on the retained spectrum; the
    harmonic boundary term is stationary and added back unchanged.
    """
    prior = model.prior
    if len(sample.zeta) != prior.m or len(sample.mu) != prior.basis.size:
        raise ForwardError("sample dimensions do not match the heat model")
    psi3 = prior.interior_term(sample.zeta)
    phi = prior.spectrum.eigenvectors[:, : prior.m]
    w = heat_propagate(phi, model.decay(), psi3)
    return w + prior.boundary_term(sample.mu)


def heat_regress_coefficients(u0_values, prior: PriorModel) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares fit of ``u0`` on ``[phi_1..phi_m | lifts]``.

    Returns the fit as prior coefficients ``(zeta, mu)`` so that
    ``prior.reconstruct`` reproduces the fitted values.
    """
    u0 = np.asarray(u0_values, dtype=float)
    X = np.column_stack([prior.spectrum.eigenvectors[:, : prior.m], prior.basis.lifts])
    coef, _, rank, sv = np.linalg.lstsq(X, u0, rcond=None)
    if rank < X.shape[1]:
        # name the columns that are best explained by the others
        _, _, vt = np.linalg.svd(X, full_matrices=False)
        null = vt[-1]
        bad = np.flatnonzero(np.abs(null) > 1e-3 * np.abs(null).max())
        names = [f"phi_{j + 1}" if j < prior.m else f"psi_{j - prior.m + 1}" for j in bad]
        raise ForwardError(f"design matrix is rank deficient; collinear columns: {', '.join(names)}")
    a, mu = coef[: prior.m], coef[prior.m :]
    return a / prior.mode_scales, mu


@dataclass(frozen=True, eq=False)
class Observation:
    y: np.ndarray
    noise_var: float
    obs_idx: np.ndarray

    def __post_init__(self):
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")
        if len(self.y) != len(self.obs_idx):
            raise ValueError("y and obs_idx lengths differ")

    @property
    def M(self) -> int:
        return len(self.y)


def generate_observations(
    u_values, obs_idx, noise_var: float, rng: np.random.Generator, noise_free: bool = False
) -> Observation:
    """``y = u[obs_idx] + eta`` with ``eta ~ N(0, noise_var I)``."""
    u = np.asarray(u_values, dtype=float)
    obs_idx = np.asarray(obs_idx, dtype=np.intp)
    if not noise_var > 0:
        raise ValueError("noise_var must be positive")
    y = u[obs_idx].copy()
    if not noise_free:
        y += np.sqrt(noise_var) * rng.standard_normal(len(obs_idx))
    return Observation(y, float(noise_var), obs_idx)


def write_observations_csv(obs: Observation, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["obs_idx", "y"])
        for i, y in zip(obs.obs_idx, obs.y):
            w.writerow([int(i), repr(float(y))])


def read_observations_csv(path, noise_var: float) -> Observation:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return Observation(
        np.array([float(r["y"]) for r in rows]),
        noise_var,
        np.array([int(r["obs_idx"]) for r in rows], dtype=np.intp),
    )


def write_node_csv(values, path, column: str = "u") -> None:
    """Node function as ``idx, <column>``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["idx", column])
        for i, v in enumerate(np.asarray(values, dtype=float)):
            w.writerow([i, repr(float(v))])
