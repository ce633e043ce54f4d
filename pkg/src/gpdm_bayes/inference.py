"""Graph pCN sampling in prior-coefficient space."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .forward import ForwardError, Observation

__all__ = [
    "PcnConfig",
    "Chain",
    "PosteriorSummary",
    "potential",
    "acceptance_probability",
    "pcn_step",
    "run_chain",
    "summarize",
    "batch_means_se",
    "write_chain_csv",
    "read_chain_csv",
    "write_summary_csv",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PcnConfig:
    zeta: float
    iterations: int
    burn_in: int = 0
    seed: int = 0
    thinning: int = 1

    def __post_init__(self):
        if not 0 < self.zeta < 1:
            raise ValueError(f"pCN step zeta must lie in (0, 1), got {self.zeta}")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must lie in [0, iterations)")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")

    @property
    def n_stored(self) -> int:
        return (self.iterations - self.burn_in) // self.thinning


@dataclass(eq=False)
class Chain:
    samples: np.ndarray  # (n_stored, n_coeffs)
    acceptance_count: int
    potentials: np.ndarray  # potential of the current state after each iteration
    iterations: int
    failures: list = field(default_factory=list)

    @property
    def acceptance_rate(self) -> float:
        return self.acceptance_count / self.iterations


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    mean: np.ndarray
    p025: np.ndarray
    p975: np.ndarray
    acceptance_rate: float


def potential(y: Observation, g_of_theta) -> float:
    """``0.5 * |y - g|^2 / sigma^2``."""
    g = np.asarray(g_of_theta, dtype=float)
    if g.shape != y.y.shape:
        raise ValueError(f"forward output has shape {g.shape}, data has {y.y.shape}")
    if not np.all(np.isfinite(g)):
        raise ForwardError("non-finite forward output")
    r = y.y - g
    return float(0.5 * np.dot(r, r) / y.noise_var)


def acceptance_probability(delta: float) -> float:
    """``min(1, exp(delta))`` with ``delta = Phi(current) - Phi(proposal)``."""
    if delta >= 0:
        return 1.0
    return float(np.exp(delta))


def pcn_step(state, zeta: float, potential_fn: Callable, rng: np.random.Generator, current_potential=None):
    """One pCN transition.

    Draws ``xi ~ N(0, I)`` then a uniform for the accept test, in that
    order. Returns ``(next_state, accepted, next_potential)``. A forward
    failure on the proposal counts as a rejection and is re-raised only
    if the current state itself cannot be evaluated.
    """
    state = np.asarray(state, dtype=float)
    if current_potential is None:
        current_potential = potential_fn(state)
    xi = rng.standard_normal(state.shape)
    proposal = np.sqrt(1.0 - zeta * zeta) * state + zeta * xi
    u = rng.random()
    try:
        prop_potential = potential_fn(proposal)
    except ForwardError as exc:
        exc.theta = proposal if exc.theta is None else exc.theta
        raise
    if u < acceptance_probability(current_potential - prop_potential):
        return proposal, True, prop_potential
    return state, False, current_potential


def run_chain(config: PcnConfig, initial, potential_fn: Callable, rng: Optional[np.random.Generator] = None) -> Chain:
    """Run ``config.iterations`` pCN steps; keep post burn-in, thinned states."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    state = np.array(initial, dtype=float)
    phi = potential_fn(state)
    stored = np.empty((config.n_stored, state.size))
    potentials = np.empty(config.iterations)
    accepted = 0
    failures = []
    k = 0
    for j in range(config.iterations):
        try:
            state, acc, phi = pcn_step(state, config.zeta, potential_fn, rng, phi)
        except ForwardError as exc:
            failures.append((j, str(exc)))
            log.warning("iteration %d: proposal rejected after forward failure: %s", j, exc)
            acc = False
        accepted += acc
        potentials[j] = phi
        post = j - config.burn_in
        if post >= 0 and post % config.thinning == 0 and k < len(stored):
            stored[k] = state
            k += 1
    return Chain(stored, accepted, potentials, config.iterations, failures)


def summarize(chain: Chain, reconstruct: Callable, merge: Optional[list] = None) -> PosteriorSummary:
    """Node-wise mean and 2.5/97.5 percentiles of reconstructed samples.

    ``merge`` may hold further chains to pool with ``chain``.
    """
    chains = [chain] + list(merge or [])
    samples = np.vstack([c.samples for c in chains])
    if len(samples) == 0:
        raise ValueError("chain has no stored samples")
    values = np.asarray(reconstruct(samples))
    if values.ndim == 1:
        values = values[None, :]
    p025, p975 = np.percentile(values, [2.5, 97.5], axis=0, method="linear")
    rate = sum(c.acceptance_count for c in chains) / sum(c.iterations for c in chains)
    return PosteriorSummary(values.mean(axis=0), p025, p975, rate)


def batch_means_se(x: np.ndarray, n_batches: int = 50) -> np.ndarray:
    """Monte Carlo standard error of column means by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    n = (len(x) // n_batches) * n_batches
    means = x[:n].reshape(n_batches, -1, *x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


# -- export ----------------------------------------------------------------------


def write_chain_csv(chain: Chain, path, m: Optional[int] = None) -> None:
    """One row per stored sample; columns ``zeta_*`` then ``mu_*``."""
    n = chain.samples.shape[1]
    m = n if m is None else m
    header = [f"zeta_{i + 1}" for i in range(m)] + [f"mu_{i + 1}" for i in range(n - m)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample"] + header)
        for k, row in enumerate(chain.samples):
            w.writerow([k] + [repr(float(v)) for v in row])


def read_chain_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(rows) - 1, -1)


def write_summary_csv(summary: PosteriorSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["idx", "mean", "p025", "p975"])
        for i, (a, b, c) in enumerate(zip(summary.mean, summary.p025, summary.p975)):
            w.writerow([i, repr(float(a)), repr(float(b)), repr(float(c))])
