"""Closed-form ground truth for the conjugate Gaussian location model.

Everything here is exact arithmetic on model parameters: the smoothed
posterior at bandwidth lam, the AR(1) law of the exact Gibbs z-chain, the
estimator's bias and asymptotic variance in the n-observation form, the
MSE-optimal bandwidth as a function of chain length, and the large-n limits
of the smoothed posterior.  The sampling modules are tested against these
values rather than against hard-coded constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .models import ModelSpec, GAUSSIAN_CONJUGATE, LOGNORMAL_CONJUGATE


@dataclass(frozen=True)
class GaussianSetup:
    """Prior and per-block parameters, optionally carrying the n-observation form.

    In the n-form, n i.i.d. N(z*, sigma2) observations with mean ybar are
    split into b equal blocks, which maps to block variances b*sigma2/n and
    unit kernel scales.
    """

    mu0: float
    s0sq: float
    mu: np.ndarray   # block means (b,)
    s2: np.ndarray   # block likelihood variances (b,)
    c: np.ndarray    # kernel scale multipliers (b,)
    n: int | None = None
    sigma2: float | None = None
    ybar: float | None = None
    z_star: float | None = None

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        s2 = np.broadcast_to(np.asarray(self.s2, dtype=float), mu.shape).copy()
        c = np.broadcast_to(np.asarray(self.c, dtype=float), mu.shape).copy()
        for name, arr in (("s2", s2), ("c", c)):
            if np.any(arr <= 0):
                raise ConfigError(name, "must be strictly positive")
        if self.s0sq <= 0:
            raise ConfigError("s0sq", "must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "s2", s2)
        object.__setattr__(self, "c", c)

    @property
    def blocks(self) -> int:
        return len(self.mu)

    @classmethod
    def from_blocks(cls, mu0, s0sq, mu, s2, c=1.0) -> "GaussianSetup":
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        return cls(mu0=float(mu0), s0sq=float(s0sq), mu=mu, s2=s2, c=np.broadcast_to(c, mu.shape))

    @classmethod
    def from_observations(
        cls, n: int, blocks: int, sigma2: float, ybar: float, mu0: float, s0sq: float,
        z_star: float | None = None,
    ) -> "GaussianSetup":
        if n % blocks != 0:
            raise ConfigError("blocks", f"blocks={blocks} must divide n={n}")
        s2 = blocks * sigma2 / n
        return cls(
            mu0=float(mu0), s0sq=float(s0sq), mu=np.full(blocks, float(ybar)),
            s2=np.full(blocks, s2), c=np.ones(blocks),
            n=int(n), sigma2=float(sigma2), ybar=float(ybar), z_star=z_star,
        )

    @classmethod
    def from_model(cls, model: ModelSpec) -> "GaussianSetup":
        """Oracle parameters for a conjugate model (log-space for log-normal)."""
        if model.conjugacy not in (GAUSSIAN_CONJUGATE, LOGNORMAL_CONJUGATE):
            raise ConfigError("model", "oracle only covers the conjugate Gaussian/log-normal models")
        p = model.conjugate_params
        if p.s0sq is None:
            raise ConfigError("model", "oracle requires a proper Gaussian prior")
        return cls(mu0=p.mu0, s0sq=p.s0sq, mu=p.mu, s2=p.s2, c=model.kernel.scales)

    def _require_n_form(self) -> None:
        if self.n is None:
            raise ConfigError("setup", "this quantity is defined for the n-observation form only")


def pi_lambda_params(setup: GaussianSetup, lam: float) -> tuple[float, float]:
    """Mean and variance of the smoothed posterior; lam=0 recovers the posterior."""
    if lam < 0:
        raise DomainError("lam must be non-negative")
    smoothed = setup.s2 + setup.c * lam
    precision = 1.0 / setup.s0sq + np.sum(1.0 / smoothed)
    var = 1.0 / precision
    mean = var * (setup.mu0 / setup.s0sq + np.sum(setup.mu / smoothed))
    return float(mean), float(var)


def ar1_params(setup: GaussianSetup, lam: float) -> tuple[float, float, float]:
    """(autoregressive coefficient, intercept, innovation variance) of the z-chain.

    The exact Gibbs sampler's z-marginal is AR(1):
    Z_i = intercept + alpha * Z_{i-1} + eps_i.
    """
    if lam <= 0:
        raise DomainError("lam must be positive")
    clam = setup.c * lam
    smoothed = setup.s2 + clam
    dt2 = 1.0 / (1.0 / setup.s0sq + np.sum(1.0 / clam))
    alpha = dt2 * np.sum(setup.s2 / (clam * smoothed))
    intercept = dt2 * (setup.mu0 / setup.s0sq + np.sum(setup.mu / smoothed))
    return float(alpha), float(intercept), float(dt2 * (1.0 + alpha))


def estimator_bias(setup: GaussianSetup, lam: float) -> float:
    """pi_lam(Id) - pi(Id) in the n-observation form."""
    setup._require_n_form()
    if lam < 0:
        raise DomainError("lam must be non-negative")
    n, b = setup.n, setup.blocks
    num = n**2 * (lam / b) * setup.s0sq * (setup.mu0 - setup.ybar)
    den = (setup.sigma2 + n * setup.s0sq) * (setup.sigma2 + n * setup.s0sq + n * lam / b)
    return float(num / den)


def asymptotic_variance(setup: GaussianSetup, lam: float) -> float:
    """lim N·var of the chain average of Id, in the n-observation form."""
    setup._require_n_form()
    if lam <= 0:
        raise DomainError("lam must be positive")
    n = setup.n
    r = n * lam / setup.blocks
    s2, s0 = setup.sigma2, setup.s0sq
    num = s0 * (s2 + r) * (r**2 + (s2 + n * s0) * r + 2.0 * n * s2 * s0)
    den = r * (s2 + n * s0 + r) ** 2
    return float(num / den)


def optimal_lambda(setup: GaussianSetup, chain_length: int) -> float:
    """Bandwidth minimising the approximate MSE (lam*B)^2 + V/(lam*N).

    Scales as chain_length^{-1/3}; undefined when the prior mean matches the
    data mean, since the leading-order bias then vanishes.
    """
    setup._require_n_form()
    if chain_length < 1:
        raise ConfigError("chain_length", "must be at least 1")
    if setup.mu0 == setup.ybar:
        raise DomainError("optimal lambda is undefined when mu0 equals ybar (no first-order bias)")
    n, b = setup.n, setup.blocks
    cube = (
        b**3 * setup.sigma2**2 * (setup.sigma2 + n * setup.s0sq) ** 2
        / (n**4 * chain_length * (setup.mu0 - setup.ybar) ** 2)
    )
    return float(cube ** (1.0 / 3.0))


def bias_variance_coefficients(setup: GaussianSetup) -> tuple[float, float]:
    """Small-lam limits: bias/lam -> B and lam*variance -> V."""
    setup._require_n_form()
    n, b = setup.n, setup.blocks
    s2, s0 = setup.sigma2, setup.s0sq
    bias_slope = n**2 * s0 * (setup.mu0 - setup.ybar) / (b * (s2 + n * s0) ** 2)
    var_scale = 2.0 * b * s2**2 * s0**2 / (s2 + n * s0) ** 2
    return float(bias_slope), float(var_scale)


def consistency_limits(setup: GaussianSetup, gamma: float, c: float) -> dict:
    """Large-n limits of the smoothed posterior when lam_n/b_n = c * n^{-gamma}.

    Returns the limiting location and the variance limit together with the
    scaling power a for which n^a * variance converges.
    """
    setup._require_n_form()
    if c <= 0:
        raise DomainError("c must be positive")
    if setup.z_star is None:
        raise ConfigError("z_star", "consistency limits require the true parameter z_star")
    s0, s2, zs = setup.s0sq, setup.sigma2, setup.z_star
    if gamma < 0:
        return {"gamma": gamma, "variance_power": 0.0, "variance_limit": s0, "mean_limit": setup.mu0}
    if gamma == 0:
        var = 1.0 / (1.0 / s0 + 1.0 / c)
        return {
            "gamma": gamma, "variance_power": 0.0, "variance_limit": var,
            "mean_limit": var * (setup.mu0 / s0 + zs / c),
        }
    if gamma < 1:
        return {"gamma": gamma, "variance_power": gamma, "variance_limit": c, "mean_limit": zs}
    if gamma == 1:
        return {"gamma": gamma, "variance_power": 1.0, "variance_limit": s2 + c, "mean_limit": zs}
    return {"gamma": gamma, "variance_power": 1.0, "variance_limit": s2, "mean_limit": zs}


def gaussian_moment(mean: float, var: float, power: int) -> float:
    """E[Z^power] for Z ~ N(mean, var), by the standard recursion."""
    if power < 0:
        raise DomainError("power must be non-negative")
    moments = [1.0, mean]
    for k in range(2, power + 1):
        moments.append(mean * moments[k - 1] + (k - 1) * var * moments[k - 2])
    return float(moments[power])
