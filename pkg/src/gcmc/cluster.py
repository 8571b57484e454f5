"""Simulated-cluster wall-clock accounting and the consensus-averaging baseline.

Timing is analytic rather than event-driven: with per-block likelihood cost
ell, one-way communication latency C and k inner Metropolis iterations per
block update, one sweep of the extended-space sampler costs k*ell + 2C while
one step of a chain targeting the posterior directly costs ell + 2C.  The
embarrassingly parallel baseline runs one chain per block against the
fractionated-prior subposterior and combines them by precision-weighted
averaging.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from ._backend import rwm_quad_chains
from .errors import ConfigError, DegeneracyWarning
from .gibbs import RWM_SCALE, laplace_approximation, rwm_steps
from .models import (
    GAUSSIAN_CONJUGATE,
    LOGNORMAL_CONJUGATE,
    ModelSpec,
    subposterior_log_density,
)

ALGORITHMS = ("gcmc", "direct")


@dataclass(frozen=True)
class LatencyModel:
    """Per-likelihood compute time, one-way latency, inner iterations per block update."""

    ell: float
    comm_latency: float
    inner_steps: int = 1

    def __post_init__(self):
        if self.ell <= 0:
            raise ConfigError("ell", "must be positive")
        if self.comm_latency < 0:
            raise ConfigError("comm_latency", "must be non-negative")
        if self.inner_steps < 1:
            raise ConfigError("inner_steps", "must be at least 1")


def iteration_time(model: LatencyModel, algorithm: str) -> float:
    """Wall-clock cost of producing one new global sample."""
    if algorithm == "gcmc":
        return model.inner_steps * model.ell + 2.0 * model.comm_latency
    if algorithm == "direct":
        return model.ell + 2.0 * model.comm_latency
    raise ConfigError("algorithm", f"unknown algorithm {algorithm!r} (expected one of {ALGORITHMS})")


def likelihood_fraction(model: LatencyModel, algorithm: str) -> float:
    """Fraction of each iteration spent on likelihood computation."""
    if algorithm == "gcmc":
        work = model.inner_steps * model.ell
    elif algorithm == "direct":
        work = model.ell
    else:
        raise ConfigError("algorithm", f"unknown algorithm {algorithm!r} (expected one of {ALGORITHMS})")
    return work / (work + 2.0 * model.comm_latency)


def samples_within_budget(model: LatencyModel, algorithm: str, budget: float) -> int:
    """Number of whole iterations that fit in the wall-clock budget."""
    if budget <= 0:
        raise ConfigError("budget", "must be positive")
    return int(math.floor(budget / iteration_time(model, algorithm)))


def budget_report(model: LatencyModel, algorithm: str, budget: float) -> dict:
    return {
        "algorithm": algorithm,
        "samples": samples_within_budget(model, algorithm, budget),
        "iteration_time": iteration_time(model, algorithm),
        "likelihood_fraction": likelihood_fraction(model, algorithm),
    }


# ---------------------------------------------------------------------------
# Embarrassingly parallel baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubposteriorChains:
    chains: np.ndarray  # (b, N, d)
    acceptance_rates: np.ndarray  # (b,)
    seed: int


def _subposterior_quadratic(model: ModelSpec, j: int):
    """(in_log_space, q1, q2) of block j's subposterior for the conjugate models."""
    p = model.conjugate_params
    b = model.blocks
    tau0 = 0.0 if p.s0sq is None else 1.0 / p.s0sq
    q2 = -0.5 * (tau0 / b + 1.0 / p.s2[j])
    q1 = tau0 * p.mu0 / b + p.mu[j] / p.s2[j]
    if model.conjugacy == LOGNORMAL_CONJUGATE:
        return True, q1 - 1.0 / b, q2  # Jacobian of z = exp(w), fractionated
    return False, q1, q2


def run_subposterior_chains(model: ModelSpec, n_samples: int, seed: int) -> SubposteriorChains:
    """One random-walk Metropolis chain per block, targeting prior^{1/b} * f_j.

    Chains start at the subposterior mode with proposals scaled from a
    Laplace approximation; they are independent given the seed and can run
    on separate machines.
    """
    if n_samples < 1:
        raise ConfigError("n_samples", "must be at least 1")
    b = model.blocks

    if model.conjugacy in (GAUSSIAN_CONJUGATE, LOGNORMAL_CONJUGATE):
        q1 = np.empty(b)
        q2 = np.empty(b)
        z0 = np.empty(b)
        step = np.empty(b)
        log_space = model.conjugacy == LOGNORMAL_CONJUGATE
        for j in range(b):
            _, q1[j], q2[j] = _subposterior_quadratic(model, j)
            t_mode = -q1[j] / (2.0 * q2[j])
            t_var = -1.0 / (2.0 * q2[j])
            if log_space:
                z0[j] = math.exp(t_mode)
                step[j] = RWM_SCALE * z0[j] * math.sqrt(t_var)
            else:
                z0[j] = t_mode
                step[j] = RWM_SCALE * math.sqrt(t_var)
        norms = np.empty((b, n_samples))
        unifs = np.empty((b, n_samples))
        for j in range(b):
            gen = _rng.substream(seed, _rng.SUBPOSTERIOR, j)
            norms[j] = gen.standard_normal(n_samples)
            unifs[j] = gen.random(n_samples)
        out, accepted = rwm_quad_chains(log_space, q1, q2, z0, step, norms, unifs)
        return SubposteriorChains(out[:, :, None], accepted / n_samples, seed)

    chains = np.empty((b, n_samples, model.dim))
    acceptance = np.empty(b)
    for j in range(b):
        target = subposterior_log_density(model, j)
        mode, cov = laplace_approximation(target, np.zeros(model.dim))
        chol = np.linalg.cholesky(cov * (RWM_SCALE**2 / model.dim))
        gen = _rng.substream(seed, _rng.SUBPOSTERIOR, j)
        z = mode
        cur = float(target(z))
        accepted = 0
        for i in range(n_samples):
            z, cur, acc = rwm_steps(target, z, 1, chol, gen, log0=cur)
            accepted += acc
            chains[j, i] = z
        acceptance[j] = accepted / n_samples
    return SubposteriorChains(chains, acceptance, seed)


def cmc_combine(chains: np.ndarray) -> np.ndarray:
    """Precision-weighted consensus averaging of per-block chains.

    Sample i of the consensus chain is (sum_j W_j)^{-1} sum_j W_j z_{j,i}
    with W_j the inverse empirical covariance of chain j; a singular
    covariance triggers a diagonal fallback with a warning.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 2:
        chains = chains[:, :, None]
    b, n, d = chains.shape
    if b == 1:
        return chains[0].copy()
    weights = np.empty((b, d, d))
    for j in range(b):
        cov = np.atleast_2d(np.cov(chains[j].T, ddof=1))
        try:
            w = np.linalg.inv(cov)
            if not np.all(np.isfinite(w)) or np.linalg.cond(cov) > 1e12:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            warnings.warn(
                f"singular empirical covariance for chain {j}; using diagonal weights",
                DegeneracyWarning,
                stacklevel=2,
            )
            var = np.maximum(np.diag(cov), 1e-300)
            w = np.diag(1.0 / var)
        weights[j] = w
    total = weights.sum(axis=0)
    rhs = np.zeros((n, d))
    for j in range(b):
        rhs += chains[j] @ weights[j].T
    return np.linalg.solve(total, rhs.T).T
