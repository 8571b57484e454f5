"""SMC sampler over a decreasing bandwidth schedule.

Particles live on the extended space (z, x_{1:b}).  Each step reweights by
the ratio of extended targets at the new and old bandwidths (only the kernel
terms survive the ratio), optionally resamples when the effective sample
size drops below a threshold, then moves every particle with one sweep of
the extended-space Gibbs/Metropolis kernel at the new bandwidth.  The
bandwidth sequence is either fixed or chosen adaptively so the conditional
ESS between successive targets stays at a set fraction of N.

Each particle's time-zero ancestor (eve index) is tracked through
resampling; the spread of weighted test-function mass across surviving eves
yields an online estimate of each estimate's asymptotic variance, used
downstream as regression weights and in the stopping rule.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .errors import (
    ConfigError,
    DegeneracyWarning,
    DomainError,
    ScheduleWarning,
    WeightDegeneracyError,
)
from .gibbs import GibbsConfig, run_chain, update_global, update_local_block
from .models import (
    GAUSSIAN_CONJUGATE,
    LOGNORMAL_CONJUGATE,
    InstrumentalState,
    ModelSpec,
)
from .regression import StoppingState

_BISECT_LOG_TOL = 1e-6
_FALLBACK_SHRINK = 1e-3


@dataclass
class ParticleSystem:
    """Weighted particles with ancestry bookkeeping."""

    z: np.ndarray  # (N, d)
    x: np.ndarray  # (N, b, d)
    log_weights: np.ndarray  # (N,)
    lam: float
    eve: np.ndarray  # (N,) time-zero ancestor of each particle
    resampling_count: int = 0
    step_index: int = 0

    @property
    def n_particles(self) -> int:
        return self.z.shape[0]

    @property
    def weights(self) -> np.ndarray:
        """Weights normalised to sum to one."""
        shifted = np.exp(self.log_weights - np.max(self.log_weights))
        total = shifted.sum()
        if not np.isfinite(total) or total <= 0:
            raise WeightDegeneracyError("particle weights degenerate (zero total mass)")
        return shifted / total

    @property
    def distinct_eves(self) -> int:
        return len(np.unique(self.eve))

    def write_csv(self, path) -> None:
        """Particle dump: `particle,weight,eve,z_0..z_{d-1}`."""
        w = self.weights
        d = self.z.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["particle", "weight", "eve"] + [f"z_{k}" for k in range(d)])
            for i in range(self.n_particles):
                writer.writerow(
                    [i, f"{w[i]:.17g}", int(self.eve[i])] + [f"{v:.17g}" for v in self.z[i]]
                )


@dataclass(frozen=True)
class ScheduleConfig:
    """Bandwidth schedule: an explicit decreasing list, or adaptive selection."""

    lam0: float
    mode: str  # "fixed" | "adaptive"
    lambdas: tuple | None = None  # fixed mode: full sequence including lam0
    cess_star: float | None = None
    lam_min: float = 1e-8
    max_steps: int = 500
    ess_threshold: float = 0.5

    def __post_init__(self):
        if self.lam0 <= 0:
            raise ConfigError("lam0", "must be positive")
        if not 0 < self.ess_threshold <= 1:
            raise ConfigError("ess_threshold", "must lie in (0, 1]")
        if self.lam_min <= 0:
            raise ConfigError("lam_min", "must be positive")
        if self.max_steps < 0:
            raise ConfigError("max_steps", "must be non-negative")
        if self.mode == "fixed":
            if not self.lambdas or len(self.lambdas) < 1:
                raise ConfigError("lambdas", "fixed mode needs the bandwidth sequence")
            lam = np.asarray(self.lambdas, dtype=float)
            if lam[0] != self.lam0:
                raise ConfigError("lambdas", "sequence must start at lam0")
            if np.any(np.diff(lam) >= 0):
                raise ConfigError("lambdas", "sequence must be strictly decreasing")
            if np.any(lam <= 0):
                raise ConfigError("lambdas", "all bandwidths must be positive")
        elif self.mode == "adaptive":
            if self.cess_star is None or not 0 < self.cess_star < 1:
                raise ConfigError("cess_star", "adaptive mode needs cess_star in (0, 1)")
        else:
            raise ConfigError("mode", f"unknown schedule mode {self.mode!r}")

    @classmethod
    def fixed(cls, lambdas, ess_threshold: float = 0.5) -> "ScheduleConfig":
        lambdas = tuple(float(v) for v in lambdas)
        return cls(lam0=lambdas[0], mode="fixed", lambdas=lambdas, ess_threshold=ess_threshold)

    @classmethod
    def adaptive(
        cls, lam0: float, cess_star: float = 0.95, lam_min: float = 1e-8,
        max_steps: int = 500, ess_threshold: float = 0.5,
    ) -> "ScheduleConfig":
        return cls(
            lam0=lam0, mode="adaptive", cess_star=cess_star, lam_min=lam_min,
            max_steps=max_steps, ess_threshold=ess_threshold,
        )


@dataclass(frozen=True)
class SmcStepRecord:
    step: int
    lam: float
    ess: float
    resampled: bool
    eta: np.ndarray  # per component of the test function
    variance: np.ndarray  # asymptotic-variance estimates, per component
    variance_degenerate: bool
    distinct_eves: int = 0


@dataclass
class SmcTrace:
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: SmcStepRecord) -> None:
        if self.records and record.lam >= self.records[-1].lam:
            raise DomainError("trace bandwidths must be strictly decreasing")
        self.records.append(record)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([r.lam for r in self.records])

    @property
    def etas(self) -> np.ndarray:
        return np.array([r.eta for r in self.records])

    @property
    def variances(self) -> np.ndarray:
        return np.array([r.variance for r in self.records])

    def write_csv(self, path) -> None:
        """Header `step,lambda,ess,resampled,eta_0..,var_0..`."""
        d = len(self.records[0].eta) if self.records else 1
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["step", "lambda", "ess", "resampled"]
                + [f"eta_{k}" for k in range(d)]
                + [f"var_{k}" for k in range(d)]
            )
            for r in self.records:
                writer.writerow(
                    [r.step, f"{r.lam:.17g}", f"{r.ess:.17g}", int(r.resampled)]
                    + [f"{v:.17g}" for v in r.eta]
                    + [f"{v:.17g}" for v in r.variance]
                )


@dataclass(frozen=True)
class SmcResult:
    trace: SmcTrace
    system: ParticleSystem
    stopped_at: int | None = None
    chosen_index: int | None = None
    chosen_estimate: np.ndarray | None = None
    bias_corrected: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Weighting
# ---------------------------------------------------------------------------

def incremental_log_weight(
    model: ModelSpec, state: InstrumentalState, lam_prev: float, lam_new: float
) -> float:
    """Log ratio of extended targets at lam_new vs lam_prev for one state.

    Prior and likelihood factors cancel exactly, so only kernel terms are
    evaluated.
    """
    _check_decreasing(lam_prev, lam_new)
    model.validate_state(state)
    total = 0.0
    for j in range(model.blocks):
        total += float(model.kernel.log_density(j, lam_new, state.z, state.x[j]))
        total -= float(model.kernel.log_density(j, lam_prev, state.z, state.x[j]))
    return total


def _check_decreasing(lam_prev: float, lam_new: float) -> None:
    if not 0 < lam_new < lam_prev:
        raise DomainError(f"schedule must decrease: got lam_new={lam_new} >= lam_prev={lam_prev}")


def _weight_stat(model: ModelSpec, z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-particle sum_j ||x_j - z||^2 / c_j (log-coordinates for log-normal kernels).

    The incremental log-weight from lam_prev to lam is then
    -(b*d/2) log(lam/lam_prev) - (1/lam - 1/lam_prev) * stat / 2.
    """
    if model.kernel.kind == "lognormal":
        z, x = np.log(z), np.log(x)
    diff2 = np.sum((x - z[:, None, :]) ** 2, axis=2)  # (N, b)
    return diff2 @ (1.0 / model.kernel.scales)


def _incremental_from_stat(stat: np.ndarray, blocks: int, dim: int, lam_prev: float, lam_new: float):
    return -0.5 * blocks * dim * math.log(lam_new / lam_prev) - 0.5 * (1.0 / lam_new - 1.0 / lam_prev) * stat


def ess(weights) -> float:
    """Effective sample size (sum w)^2 / sum w^2 of non-negative weights."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise WeightDegeneracyError("all weights are zero")
    return float(total**2 / np.sum(w**2))


def cess(prev_weights, incremental_weights) -> float:
    """Conditional ESS N (sum W w)^2 / (sum W w^2), W the normalised previous weights."""
    w_prev = np.asarray(prev_weights, dtype=float)
    w_inc = np.asarray(incremental_weights, dtype=float)
    n = len(w_prev)
    num = np.sum(w_prev * w_inc) ** 2
    den = np.sum(w_prev * w_inc**2)
    if not np.isfinite(den) or den <= 0:
        raise WeightDegeneracyError("all incremental weights are zero")
    return float(n * num / den)


def _cess_from_log(prev_weights: np.ndarray, log_inc: np.ndarray, n: int) -> float:
    # cess is invariant to rescaling the incremental weights, so shift first.
    w = np.exp(log_inc - np.max(log_inc))
    return cess(prev_weights, w)


def next_lambda(system: ParticleSystem, model: ModelSpec, cess_star: float, lam_min: float) -> float:
    """Largest bandwidth below the current one with conditional ESS = cess_star * N.

    Found by bisection on log(lam); returns lam_min when even the floor keeps
    the conditional ESS above target.  A non-bracketing search (conditional
    ESS collapsing immediately below the current bandwidth) falls back to a
    small relative step with a warning.
    """
    lam_prev = system.lam
    if not lam_prev > lam_min:
        raise DomainError(f"current bandwidth {lam_prev} is already at or below the floor {lam_min}")
    n = system.n_particles
    prev_w = system.weights
    stat = _weight_stat(model, system.z, system.x)
    dim = system.z.shape[1]
    target = cess_star * n

    def cess_at(lam: float) -> float:
        return _cess_from_log(prev_w, _incremental_from_stat(stat, model.blocks, dim, lam_prev, lam), n)

    if cess_at(lam_min) >= target:
        return lam_min
    lo, hi = math.log(lam_min), math.log(lam_prev)
    while hi - lo > _BISECT_LOG_TOL:
        mid = 0.5 * (lo + hi)
        if cess_at(math.exp(mid)) >= target:
            hi = mid
        else:
            lo = mid
    lam_new = math.exp(0.5 * (lo + hi))
    if lam_new >= lam_prev * (1.0 - 2.0 * _BISECT_LOG_TOL):
        warnings.warn(
            "conditional ESS already below target arbitrarily close to the current bandwidth; "
            "taking a fixed small step",
            ScheduleWarning,
            stacklevel=2,
        )
        lam_new = lam_prev * (1.0 - _FALLBACK_SHRINK)
    return lam_new


def resample_multinomial(weights, rng: np.random.Generator) -> np.ndarray:
    """N independent categorical draws proportional to the weights."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise WeightDegeneracyError("cannot resample from all-zero weights")
    cdf = np.cumsum(w)
    cdf[-1] = total  # guard against round-off in the final bin
    return np.searchsorted(cdf, rng.random(len(w)) * total, side="right")


# ---------------------------------------------------------------------------
# Genealogy-based variance estimation
# ---------------------------------------------------------------------------

def _phi_values(phi, z: np.ndarray) -> np.ndarray:
    values = np.asarray(phi(z), dtype=float) if phi is not None else z
    if values.ndim == 1:
        values = values[:, None]
    return values


def asymptotic_variance_estimate(system: ParticleSystem, phi=None) -> np.ndarray:
    """Genealogy-based estimate of the asymptotic variance of the current estimate.

    With Wb the weights normalised to sum to N, phi centred at the current
    estimate, and r the number of resampling events so far, this evaluates

        (N/(N-1))^{r+1} * (1/N) * sum_e ( sum_{i: eve_i = e} Wb_i phi_c(z_i) )^2,

    which is the pairwise eve-comparison form reduced by exact cancellation
    of the same-estimate terms.  A fully coalesced genealogy returns exactly
    zero (with a degeneracy warning): the particle count was too small for
    the run.
    """
    n = system.n_particles
    values = _phi_values(phi, system.z)
    if system.distinct_eves == 1:
        warnings.warn(
            "all particles share one ancestor; variance estimate degenerates to zero",
            DegeneracyWarning,
            stacklevel=2,
        )
        return np.zeros(values.shape[1])
    w_bar = system.weights * n  # normalised to sum to N
    centered = values - np.sum(system.weights[:, None] * values, axis=0)
    sums = np.zeros((n, values.shape[1]))
    np.add.at(sums, system.eve, w_bar[:, None] * centered)
    factor = (n / (n - 1.0)) ** (system.resampling_count + 1)
    return factor * np.sum(sums**2, axis=0) / n


# ---------------------------------------------------------------------------
# Initialisation and moves
# ---------------------------------------------------------------------------

def _conjugate_fields(model: ModelSpec):
    p = model.conjugate_params
    tau0 = 0.0 if p.s0sq is None else 1.0 / p.s0sq
    return p, tau0, model.conjugacy == LOGNORMAL_CONJUGATE


def _init_particles_conjugate(model: ModelSpec, lam0: float, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    p, tau0, log_space = _conjugate_fields(model)
    smoothed = p.s2 + model.kernel.scales * lam0
    prec = tau0 + np.sum(1.0 / smoothed)
    if prec <= 0:
        raise DomainError("smoothed target is improper at lam0")
    mean = (tau0 * p.mu0 + np.sum(p.mu / smoothed)) / prec
    w = mean + rng.standard_normal(n) / math.sqrt(prec)
    clam = model.kernel.scales * lam0
    cond_mean = (p.s2 * w[:, None] + clam * p.mu) / (p.s2 + clam)
    cond_sd = np.sqrt(clam * p.s2 / (p.s2 + clam))
    wx = cond_mean + cond_sd * rng.standard_normal((n, len(p.mu)))
    if log_space:
        return np.exp(w)[:, None], np.exp(wx)[:, :, None]
    return w[:, None], wx[:, :, None]


_THINNING_TARGET_ACF = 0.05
_THINNING_MAX_INTERVAL = 200


def _init_particles_thinned(model: ModelSpec, lam0: float, n: int, inner_steps: int, seed: int):
    """Thin a long extended-space chain at lam0 until lag autocorrelation is small."""
    pilot = run_chain(
        model,
        GibbsConfig(lam=lam0, chain_length=max(2000, 10 * model.dim), seed=seed, inner_steps=inner_steps),
    )
    zc = pilot.z_samples - pilot.z_samples.mean(axis=0)
    denom = np.maximum(np.sum(zc**2, axis=0), 1e-300)
    interval = _THINNING_MAX_INTERVAL
    for k in range(1, _THINNING_MAX_INTERVAL + 1):
        rho = np.max(np.abs(np.sum(zc[:-k] * zc[k:], axis=0) / denom))
        if rho < _THINNING_TARGET_ACF:
            interval = k
            break
    burn = 10 * interval
    main = run_chain(
        model,
        GibbsConfig(
            lam=lam0, chain_length=burn + n * interval, seed=seed + 1,
            inner_steps=inner_steps, keep_x=True,
        ),
    )
    idx = burn + interval * np.arange(n)
    return main.z_samples[idx], main.x_samples[idx]


def _move_conjugate(model, z, x, lam, rng) -> tuple[np.ndarray, np.ndarray]:
    """One exact Gibbs sweep applied to every particle (vectorised)."""
    p, tau0, log_space = _conjugate_fields(model)
    w = np.log(z[:, 0]) if log_space else z[:, 0]
    clam = model.kernel.scales * lam
    cond_mean = (p.s2 * w[:, None] + clam * p.mu) / (p.s2 + clam)
    cond_sd = np.sqrt(clam * p.s2 / (p.s2 + clam))
    wx = cond_mean + cond_sd * rng.standard_normal((z.shape[0], len(p.mu)))
    prec = tau0 + np.sum(1.0 / clam)
    mean = (tau0 * p.mu0 + wx @ (1.0 / clam)) / prec
    w_new = mean + rng.standard_normal(z.shape[0]) / math.sqrt(prec)
    if log_space:
        return np.exp(w_new)[:, None], np.exp(wx)[:, :, None]
    return w_new[:, None], wx[:, :, None]


def _move_generic(model, z, x, lam, inner_steps, rng, chols) -> tuple[np.ndarray, np.ndarray]:
    n = z.shape[0]
    z_new = np.empty_like(z)
    x_new = np.empty_like(x)
    for i in range(n):
        xi = x[i]
        for j in range(model.blocks):
            xi[j], _, _ = update_local_block(
                model, j, z[i], xi[j], lam, inner_steps, rng, proposal_chol=chols[j]
            )
        z_new[i] = update_global(model, xi, lam, rng, z=z[i])
        x_new[i] = xi
    return z_new, x_new


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def run_smc(
    model: ModelSpec,
    schedule: ScheduleConfig,
    n_particles: int,
    phi=None,
    seed: int = 0,
    inner_steps: int = 10,
    stopping: StoppingState | None = None,
) -> SmcResult:
    """Run the bandwidth-annealing SMC sampler.

    Records the weighted estimate of phi and its asymptotic-variance estimate
    at every bandwidth.  When a `stopping` state is supplied the run
    terminates as soon as its rule fires, and the chosen estimate is reported
    alongside the final bias-corrected value.  Deterministic given the seed.
    """
    if n_particles < 2:
        raise ConfigError("n_particles", "need at least two particles")
    conjugate = model.conjugacy in (GAUSSIAN_CONJUGATE, LOGNORMAL_CONJUGATE)
    init_rng = _rng.substream(seed, _rng.SMC_INIT)
    if conjugate:
        z, x = _init_particles_conjugate(model, schedule.lam0, n_particles, init_rng)
        chols = None
    else:
        z, x = _init_particles_thinned(
            model, schedule.lam0, n_particles, inner_steps, int(init_rng.integers(2**62))
        )
        from .gibbs import block_curvature  # deferred: only the generic path needs it

        curvatures = [block_curvature(model, j) for j in range(model.blocks)]
        chols = None  # rebuilt per bandwidth below

    system = ParticleSystem(
        z=z, x=x, log_weights=np.zeros(n_particles), lam=schedule.lam0,
        eve=np.arange(n_particles), resampling_count=0, step_index=0,
    )
    trace = SmcTrace()
    result_extra: dict = {}

    def record_step(ess_value: float, resampled: bool) -> SmcStepRecord:
        weights = system.weights
        values = _phi_values(phi, system.z)
        eta = np.sum(weights[:, None] * values, axis=0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegeneracyWarning)
            variance = asymptotic_variance_estimate(system, phi)
        n_eves = system.distinct_eves
        rec = SmcStepRecord(
            step=system.step_index, lam=system.lam, ess=ess_value, resampled=resampled,
            eta=eta, variance=variance, variance_degenerate=n_eves == 1, distinct_eves=n_eves,
        )
        trace.append(rec)
        return rec

    rec = record_step(float(n_particles), False)
    if stopping is not None:
        decision = stopping.step(system.lam, rec.eta, rec.variance)
        if decision.stop:
            result_extra = _stopping_outputs(decision, trace)
            return SmcResult(trace=trace, system=system, **result_extra)

    fixed = list(schedule.lambdas[1:]) if schedule.mode == "fixed" else None
    step_limit = len(fixed) if fixed is not None else schedule.max_steps

    p = 0
    while p < step_limit:
        p += 1
        if fixed is not None:
            lam_new = fixed[p - 1]
        else:
            if system.lam <= schedule.lam_min:
                break
            lam_new = next_lambda(system, model, schedule.cess_star, schedule.lam_min)

        stat = _weight_stat(model, system.z, system.x)
        log_inc = _incremental_from_stat(stat, model.blocks, system.z.shape[1], system.lam, lam_new)
        log_w = system.log_weights + log_inc
        shift = np.max(log_w)
        if not np.isfinite(shift):
            raise WeightDegeneracyError(
                f"total particle weight underflowed moving to bandwidth {lam_new:g}"
            )
        lin_w = np.exp(log_w - shift)
        ess_value = ess(lin_w)

        step_rng = _rng.substream(seed, _rng.SMC_STEP, p)
        resampled = ess_value < schedule.ess_threshold * n_particles
        if resampled:
            ancestors = resample_multinomial(lin_w, step_rng)
            system.z = system.z[ancestors]
            system.x = system.x[ancestors]
            system.eve = system.eve[ancestors]
            system.resampling_count += 1
            log_w = np.zeros(n_particles)
        system.log_weights = log_w
        system.lam = lam_new
        system.step_index = p

        if conjugate:
            system.z, system.x = _move_conjugate(model, system.z, system.x, lam_new, step_rng)
        else:
            from .gibbs import block_proposal_chol

            chols = [
                block_proposal_chol(model, j, lam_new, curvature=curvatures[j])
                for j in range(model.blocks)
            ]
            system.z, system.x = _move_generic(
                model, system.z, system.x, lam_new, inner_steps, step_rng, chols
            )

        rec = record_step(ess_value, resampled)
        if stopping is not None:
            decision = stopping.step(system.lam, rec.eta, rec.variance)
            if decision.stop:
                result_extra = _stopping_outputs(decision, trace)
                break
        if fixed is None and system.lam <= schedule.lam_min:
            break  # bandwidth floor reached: normal termination

    return SmcResult(trace=trace, system=system, **result_extra)


def _stopping_outputs(decision, trace: SmcTrace) -> dict:
    chosen = decision.chosen_index
    return {
        "stopped_at": decision.step,
        "chosen_index": chosen,
        "chosen_estimate": trace.records[chosen].eta if chosen is not None else None,
        "bias_corrected": decision.bias_corrected,
    }
