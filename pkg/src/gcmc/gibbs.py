"""Metropolis-within-Gibbs sampler on the extended state space.

One sweep updates every local proxy from its conditional given the previous
global value (exactly for the conjugate models, by inner random-walk
Metropolis steps otherwise), then redraws the global variable from its
conditional given the fresh proxies.  Local updates within a sweep are
mutually independent given z and draw from per-block random streams, so a
concurrent implementation would reproduce the serial chain bit-for-bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from . import rng as _rng
from ._backend import gaussian_gibbs_chain, rwm_quad_chains
from .errors import ConfigError, UnsupportedOperationError
from .models import (
    GAUSSIAN_CONJUGATE,
    LOGNORMAL_CONJUGATE,
    InstrumentalState,
    ModelSpec,
    posterior_log_density,
    subposterior_log_density,
)

# Optimal random-walk proposal scaling for Gaussian-ish targets
# (Roberts & Rosenthal 2001): covariance (2.38^2 / d) * target covariance.
RWM_SCALE = 2.38


@dataclass(frozen=True)
class GibbsConfig:
    """Run parameters for one chain."""

    lam: float
    chain_length: int
    seed: int
    inner_steps: int = 10
    init: InstrumentalState | None = None
    keep_x: bool = False
    # Per-block proposal covariances (list of (d, d) arrays or scalars);
    # default is a Laplace approximation of each block target.
    rwm_step: list | None = None
    # Random-walk settings for the global update when the prior is not
    # Gaussian: covariance matrix or scalar variance.
    z_rwm_step: np.ndarray | float | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError("lam", "must be positive")
        if self.chain_length < 1:
            raise ConfigError("chain_length", "must be at least 1")
        if self.inner_steps < 1:
            raise ConfigError("inner_steps", "must be at least 1")


@dataclass(frozen=True)
class ChainOutput:
    """Samples and bookkeeping from `run_chain`."""

    z_samples: np.ndarray  # (N, d)
    x_samples: np.ndarray | None  # (N, b, d) when kept
    acceptance_rates: np.ndarray  # (b,)
    seed: int
    lam: float

    def __len__(self) -> int:
        return self.z_samples.shape[0]

    def write_csv(self, path) -> None:
        """Header `sweep,z_0,...,z_{d-1}`, one row per sweep."""
        d = self.z_samples.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sweep"] + [f"z_{k}" for k in range(d)])
            for i, row in enumerate(self.z_samples):
                writer.writerow([i] + [f"{v:.17g}" for v in row])

    def summary(self) -> dict:
        return {
            "acceptance": [float(a) for a in self.acceptance_rates],
            "seed": int(self.seed),
            "lambda": float(self.lam),
        }


def estimate(chain: ChainOutput, phi=None, burn_in: int = 0) -> np.ndarray:
    """Chain average of phi(z) after discarding an optional burn-in prefix."""
    n = len(chain)
    if burn_in >= n:
        raise ConfigError("burn_in", f"burn_in={burn_in} must be smaller than the chain length {n}")
    z = chain.z_samples[burn_in:]
    values = z if phi is None else np.atleast_2d(np.asarray(phi(z), dtype=float).T).T
    return values.mean(axis=0)


# ---------------------------------------------------------------------------
# Random-walk Metropolis building block
# ---------------------------------------------------------------------------

def rwm_steps(log_target, x0, steps, proposal_chol, rng, log0=None, record=None):
    """`steps` Metropolis iterations with a Gaussian random-walk proposal.

    proposal_chol is the lower Cholesky factor of the proposal covariance
    (or a scalar standard deviation).  When `record` is a list, each step
    appends its proposal, log acceptance ratio and decision, which lets
    tests verify the acceptance rule directly.
    """
    x = np.array(x0, dtype=float)
    d = x.shape[0]
    cur = float(log_target(x)) if log0 is None else float(log0)
    accepted = 0
    scalar = np.ndim(proposal_chol) == 0
    for _ in range(steps):
        noise = rng.standard_normal(d)
        prop = x + proposal_chol * noise if scalar else x + proposal_chol @ noise
        try:
            lp = float(log_target(prop))
        except Exception:
            lp = -np.inf  # out-of-support proposal
        log_ratio = lp - cur
        u = rng.random()
        accept = math.log(u) < log_ratio if u > 0.0 else True
        if record is not None:
            record.append(
                {
                    "state": x.copy(),
                    "proposal": prop.copy(),
                    "log_target_state": cur,
                    "log_target_proposal": lp,
                    "log_acceptance_ratio": min(0.0, log_ratio),
                    "uniform": u,
                    "accepted": accept,
                }
            )
        if accept:
            x, cur = prop, lp
            accepted += 1
    return x, cur, accepted


def laplace_approximation(log_density, x0) -> tuple[np.ndarray, np.ndarray]:
    """Mode and inverse-curvature covariance of a log-density.

    The Hessian comes from central finite differences at the numerically
    located mode; the result is symmetrised and eigenvalue-clipped so the
    covariance is always positive definite.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    d = x0.shape[0]
    res = scipy.optimize.minimize(lambda v: -float(log_density(v)), x0, method="L-BFGS-B")
    mode = res.x
    h = 1e-4 * (1.0 + np.abs(mode))
    hess = np.empty((d, d))
    f0 = float(log_density(mode))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        hess[i, i] = (float(log_density(mode + ei)) - 2.0 * f0 + float(log_density(mode - ei))) / h[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h[j]
            fpp = float(log_density(mode + ei + ej))
            fpm = float(log_density(mode + ei - ej))
            fmp = float(log_density(mode - ei + ej))
            fmm = float(log_density(mode - ei - ej))
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
    precision = -hess
    eigval, eigvec = np.linalg.eigh(0.5 * (precision + precision.T))
    floor = max(1e-10, 1e-8 * np.max(np.abs(eigval)))
    cov = (eigvec / np.maximum(eigval, floor)) @ eigvec.T
    return mode, cov


def block_proposal_chol(model: ModelSpec, j: int, lam: float, curvature=None) -> np.ndarray:
    """Proposal Cholesky for block j's conditional target at bandwidth lam.

    The conditional covariance is approximated by (H_j + I/(c_j lam))^{-1},
    with H_j the curvature of the block subposterior at its mode, then scaled
    by RWM_SCALE^2/d.  Passing a precomputed `curvature` (H_j) avoids
    repeating the Laplace fit when lam changes.
    """
    d = model.dim
    if curvature is None:
        curvature = block_curvature(model, j)
    precision = curvature + np.eye(d) / (model.kernel.scales[j] * lam)
    cov = np.linalg.inv(precision) * (RWM_SCALE**2 / d)
    return np.linalg.cholesky(cov)


def block_curvature(model: ModelSpec, j: int) -> np.ndarray:
    mode, cov = laplace_approximation(subposterior_log_density(model, j), np.zeros(model.dim))
    return np.linalg.inv(cov)


# ---------------------------------------------------------------------------
# Conditional updates
# ---------------------------------------------------------------------------

def update_local_block(model, j, z, x_j, lam, inner_steps, rng, proposal_chol=None, record=None):
    """Draw a new proxy x_j from a kernel invariant for p(x_j | z).

    Conjugate models sample the conditional exactly; otherwise `inner_steps`
    random-walk Metropolis iterations are applied.  Returns
    (new x_j, accepted, proposed); exact draws report (0, 0).
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    clam = model.kernel.scales[j] * lam
    if model.conjugacy == GAUSSIAN_CONJUGATE:
        p = model.conjugate_params
        mean = (p.s2[j] * z[0] + clam * p.mu[j]) / (p.s2[j] + clam)
        sd = math.sqrt(clam * p.s2[j] / (p.s2[j] + clam))
        return np.array([mean + sd * rng.standard_normal()]), 0, 0
    if model.conjugacy == LOGNORMAL_CONJUGATE:
        p = model.conjugate_params
        w = math.log(z[0])
        mean = (p.s2[j] * w + clam * p.mu[j]) / (p.s2[j] + clam)
        sd = math.sqrt(clam * p.s2[j] / (p.s2[j] + clam))
        return np.exp([mean + sd * rng.standard_normal()]), 0, 0

    logf = model.partial_log_likelihoods[j]

    def target(x):
        return model.kernel.log_density(j, lam, z, x) + logf(x)

    if proposal_chol is None:
        proposal_chol = block_proposal_chol(model, j, lam)
    x_new, _, accepted = rwm_steps(target, x_j, inner_steps, proposal_chol, rng, record=record)
    return x_new, accepted, inner_steps


def update_global(model, x, lam, rng, z=None, z_rwm_step=None, inner_steps=10):
    """Draw a new global value from (or invariant for) p(z | x_{1:b}).

    Exact for Gaussian (or log-space Gaussian) priors; a random-walk
    Metropolis fallback handles other priors when `z_rwm_step` is supplied.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    clam = model.kernel.scales * lam  # (b,)

    if model.conjugacy in (GAUSSIAN_CONJUGATE, LOGNORMAL_CONJUGATE):
        p = model.conjugate_params
        vals = np.log(x[:, 0]) if model.conjugacy == LOGNORMAL_CONJUGATE else x[:, 0]
        tau0 = 0.0 if p.s0sq is None else 1.0 / p.s0sq
        prec = tau0 + np.sum(1.0 / clam)
        mean = (tau0 * p.mu0 + np.sum(vals / clam)) / prec
        draw = mean + rng.standard_normal() / math.sqrt(prec)
        return np.exp([draw]) if model.conjugacy == LOGNORMAL_CONJUGATE else np.array([draw])

    if model.prior_var is not None:
        # Diagonal Gaussian prior with isotropic kernels: componentwise conjugate.
        kernel_prec = np.sum(1.0 / clam)
        prec = 1.0 / model.prior_var + kernel_prec
        mean = (model.prior_mean / model.prior_var + np.sum(x / clam[:, None], axis=0)) / prec
        return mean + rng.standard_normal(model.dim) / np.sqrt(prec)

    if z_rwm_step is None:
        raise UnsupportedOperationError(
            "exact global update needs a Gaussian prior; supply z_rwm_step for a Metropolis fallback"
        )

    def target(zv):
        total = model.prior_log_density(zv)
        for j in range(model.blocks):
            total = total + model.kernel.log_density(j, lam, zv, x[j])
        return total

    chol = np.linalg.cholesky(np.atleast_2d(z_rwm_step)) if np.ndim(z_rwm_step) else math.sqrt(z_rwm_step)
    z_new, _, _ = rwm_steps(target, z, inner_steps, chol, rng)
    return z_new


# ---------------------------------------------------------------------------
# Full chains
# ---------------------------------------------------------------------------

def run_chain(model: ModelSpec, config: GibbsConfig) -> ChainOutput:
    """Run `chain_length` sweeps of the extended-space sampler.

    Every sweep updates all blocks from the previous global value, then the
    global value itself; the state after each sweep is recorded.  Output is
    a deterministic function of (model, config).
    """
    init = config.init if config.init is not None else model.initial_state()
    model.validate_state(init)
    n, b = config.chain_length, model.blocks

    if model.conjugacy in (GAUSSIAN_CONJUGATE, LOGNORMAL_CONJUGATE):
        p = model.conjugate_params
        xnorm = np.empty((b, n))
        for j in range(b):
            xnorm[j] = _rng.substream(config.seed, _rng.GIBBS_BLOCK, j).standard_normal(n)
        znorm = _rng.substream(config.seed, _rng.GIBBS_GLOBAL).standard_normal(n)
        log_space = model.conjugacy == LOGNORMAL_CONJUGATE
        z0 = math.log(init.z[0]) if log_space else float(init.z[0])
        tau0 = 0.0 if p.s0sq is None else 1.0 / p.s0sq
        z_out, x_out = gaussian_gibbs_chain(
            p.mu0, tau0, p.mu, p.s2, model.kernel.scales, config.lam, z0, xnorm, znorm, config.keep_x
        )
        if log_space:
            z_out = np.exp(z_out)
            if x_out is not None:
                x_out = np.exp(x_out)
        return ChainOutput(
            z_samples=z_out[:, None],
            x_samples=None if x_out is None else x_out[:, :, None],
            acceptance_rates=np.ones(b),
            seed=config.seed,
            lam=config.lam,
        )

    block_rngs = [_rng.substream(config.seed, _rng.GIBBS_BLOCK, j) for j in range(b)]
    z_rng = _rng.substream(config.seed, _rng.GIBBS_GLOBAL)
    if config.rwm_step is not None:
        chols = [np.atleast_2d(np.asarray(c, dtype=float)) for c in config.rwm_step]
    else:
        chols = [
            block_proposal_chol(model, j, config.lam, curvature=block_curvature(model, j))
            for j in range(b)
        ]

    z = np.array(init.z, dtype=float)
    x = np.array(init.x, dtype=float)
    z_samples = np.empty((n, model.dim))
    x_samples = np.empty((n, b, model.dim)) if config.keep_x else None
    accepted = np.zeros(b)
    for i in range(n):
        for j in range(b):
            x[j], acc, _ = update_local_block(
                model, j, z, x[j], config.lam, config.inner_steps, block_rngs[j], proposal_chol=chols[j]
            )
            accepted[j] += acc
        z = update_global(
            model, x, config.lam, z_rng, z=z,
            z_rwm_step=config.z_rwm_step, inner_steps=config.inner_steps,
        )
        z_samples[i] = z
        if config.keep_x:
            x_samples[i] = x
    return ChainOutput(
        z_samples=z_samples,
        x_samples=x_samples,
        acceptance_rates=accepted / (n * config.inner_steps),
        seed=config.seed,
        lam=config.lam,
    )


def _posterior_quadratic(model: ModelSpec) -> tuple[bool, float, float]:
    """(in_log_space, q1, q2) with log posterior = q1*t + q2*t^2 + const."""
    p = model.conjugate_params
    log_space = model.conjugacy == LOGNORMAL_CONJUGATE
    tau0 = 0.0 if p.s0sq is None else 1.0 / p.s0sq
    q2 = -0.5 * (tau0 + np.sum(1.0 / p.s2))
    q1 = tau0 * p.mu0 + np.sum(p.mu / p.s2)
    if log_space:
        q1 -= 1.0  # Jacobian of z = exp(w)
    return log_space, float(q1), float(q2)


def run_direct_rwm(
    model: ModelSpec, n_samples: int, seed: int, proposal_chol=None, init=None
) -> ChainOutput:
    """Random-walk Metropolis chain targeting the full posterior.

    This is the `direct` comparator: every step evaluates all b partial
    likelihoods.  The proposal covariance defaults to RWM_SCALE^2/d times a
    Laplace approximation of the posterior.
    """
    if n_samples < 1:
        raise ConfigError("n_samples", "must be at least 1")
    gen = _rng.substream(seed, _rng.DIRECT_CHAIN)

    if model.conjugacy in (GAUSSIAN_CONJUGATE, LOGNORMAL_CONJUGATE):
        log_space, q1, q2 = _posterior_quadratic(model)
        w_mode = -q1 / (2.0 * q2)
        w_var = -1.0 / (2.0 * q2)
        if log_space:
            z_mode = math.exp(w_mode)
            step = RWM_SCALE * z_mode * math.sqrt(w_var)
            z0 = z_mode
        else:
            step = RWM_SCALE * math.sqrt(w_var)
            z0 = w_mode
        if init is not None:
            z0 = float(np.atleast_1d(init)[0])
        norms = gen.standard_normal((1, n_samples))
        unifs = gen.random((1, n_samples))
        out, acc = rwm_quad_chains(
            log_space, np.array([q1]), np.array([q2]), np.array([z0]), np.array([step]), norms, unifs
        )
        return ChainOutput(
            z_samples=out[0][:, None], x_samples=None,
            acceptance_rates=np.array([acc[0] / n_samples]), seed=seed, lam=0.0,
        )

    target = posterior_log_density(model)
    if proposal_chol is None:
        mode, cov = laplace_approximation(target, np.zeros(model.dim))
        proposal_chol = np.linalg.cholesky(cov * (RWM_SCALE**2 / model.dim))
        z = mode
    else:
        z = np.zeros(model.dim) if init is None else np.array(init, dtype=float)
    if init is not None:
        z = np.array(init, dtype=float)
    samples = np.empty((n_samples, model.dim))
    cur = float(target(z))
    accepted = 0
    for i in range(n_samples):
        z, cur, acc = rwm_steps(target, z, 1, proposal_chol, gen, log0=cur)
        accepted += acc
        samples[i] = z
    return ChainOutput(
        z_samples=samples, x_samples=None,
        acceptance_rates=np.array([accepted / n_samples]), seed=seed, lam=0.0,
    )
