"""Statistical targets and the instrumental model built on top of them.

A model is a prior plus ``b`` partial log-likelihoods, one per data block,
together with a family of Markov transition densities ``K_j`` that couple
the global variable ``z`` to one local proxy ``x_j`` per block.  The family
is indexed by a regularisation parameter ``lam`` controlling how tightly the
proxies concentrate around ``z``; as ``lam`` decreases to zero the extended
target collapses onto the original posterior.

Three concrete models are provided: a conjugate Gaussian location model, its
log-normal reparametrisation, and Bayesian logistic regression on binary
covariates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import rng as _rng
from .errors import ConfigError, DomainError, UnsupportedOperationError

_LOG_2PI = math.log(2.0 * math.pi)

GAUSSIAN_CONJUGATE = "gaussian_conjugate"
LOGNORMAL_CONJUGATE = "lognormal_conjugate"
GENERIC = "generic"


def _norm_logpdf(x, mean, var):
    """Elementwise Gaussian log-density; inputs broadcast."""
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


@dataclass(frozen=True)
class KernelFamily:
    """Per-block transition densities coupling the global and local variables.

    ``gaussian`` kind: x ~ N(z, c_j * lam * I) componentwise.
    ``lognormal`` kind (scalar models): log x ~ N(log z, c_j * lam).
    """

    kind: str
    scales: np.ndarray  # c_j, one positive multiplier per block

    def __post_init__(self):
        if self.kind not in ("gaussian", "lognormal"):
            raise ConfigError("kernel.kind", f"unknown kernel kind {self.kind!r}")
        scales = np.atleast_1d(np.asarray(self.scales, dtype=float))
        if np.any(scales <= 0) or not np.all(np.isfinite(scales)):
            raise ConfigError("kernel_scales", "scale multipliers must be positive and finite")
        object.__setattr__(self, "scales", scales)

    @property
    def blocks(self) -> int:
        return len(self.scales)

    def log_density(self, j: int, lam: float, z, x):
        """log K_j(z, x); vectorized over any leading axes of z and x."""
        if lam <= 0:
            raise DomainError("kernel bandwidth lam must be positive")
        var = self.scales[j] * lam
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            return np.sum(_norm_logpdf(x, z, var), axis=-1)
        if np.any(x <= 0) or np.any(z <= 0):
            raise DomainError("log-normal kernel requires strictly positive arguments")
        lx = np.log(x)
        return np.sum(_norm_logpdf(lx, np.log(z), var) - lx, axis=-1)

    def sample(self, j: int, lam: float, z, rng: np.random.Generator):
        """One draw of x | z from K_j; shape follows z."""
        if lam <= 0:
            raise DomainError("kernel bandwidth lam must be positive")
        sd = math.sqrt(self.scales[j] * lam)
        z = np.asarray(z, dtype=float)
        noise = rng.standard_normal(z.shape)
        if self.kind == "gaussian":
            return z + sd * noise
        if np.any(z <= 0):
            raise DomainError("log-normal kernel requires strictly positive z")
        return np.exp(np.log(z) + sd * noise)


@dataclass(frozen=True)
class InstrumentalState:
    """A point (z, x_{1:b}) on the extended state space."""

    z: np.ndarray  # (d,)
    x: np.ndarray  # (b, d)

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        if x.shape[1] != z.shape[0]:
            raise DomainError("local variables must have the same dimension as z")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(x))):
            raise DomainError("state coordinates must be finite")

    @property
    def blocks(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class GaussianBlockParams:
    """Parameters of the conjugate Gaussian location model.

    The prior is N(mu0, s0sq) (``s0sq=None`` means an improper uniform prior)
    and block ``j`` contributes the likelihood factor N(mu[j]; z, s2[j]).
    For the log-normal model these are the parameters of the model obtained
    by taking logs of all variables.
    """

    mu0: float
    s0sq: float | None
    mu: np.ndarray  # (b,)
    s2: np.ndarray  # (b,)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        s2 = np.broadcast_to(np.asarray(self.s2, dtype=float), mu.shape).copy()
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "s2", s2)
        if np.any(s2 <= 0):
            raise ConfigError("block_vars", "block variances must be positive")
        if self.s0sq is not None and self.s0sq <= 0:
            raise ConfigError("prior_var", "prior variance must be positive")


@dataclass(frozen=True)
class LogisticBlocks:
    """Per-block design matrices and +-1 responses for logistic regression."""

    features: tuple[np.ndarray, ...]
    responses: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class ModelSpec:
    """A validated model: target density pieces plus the kernel family.

    Immutable after construction; all evaluation methods are pure functions,
    so instances may be shared freely across concurrent workers.
    """

    name: str
    dim: int
    blocks: int
    kernel: KernelFamily
    conjugacy: str
    prior_log_density: Callable = field(repr=False)
    partial_log_likelihoods: tuple = field(repr=False)
    conjugate_params: GaussianBlockParams | None = None
    # Diagonal Gaussian prior moments, present whenever the prior is Gaussian
    # (enables the exact conjugate update of z given the local variables).
    prior_mean: np.ndarray | None = None
    prior_var: np.ndarray | None = None
    positive_support: bool = False
    logistic_blocks: LogisticBlocks | None = None

    def __post_init__(self):
        if self.blocks < 1:
            raise ConfigError("blocks", "need at least one block")
        if len(self.partial_log_likelihoods) != self.blocks:
            raise ConfigError("blocks", "one partial likelihood required per block")
        if self.kernel.blocks != self.blocks:
            raise ConfigError("kernel_scales", "one kernel scale required per block")

    def validate_state(self, state: InstrumentalState) -> None:
        if state.blocks != self.blocks or state.z.shape[0] != self.dim:
            raise DomainError(
                f"state shape ({state.blocks} blocks, dim {state.z.shape[0]}) does not "
                f"match model ({self.blocks} blocks, dim {self.dim})"
            )
        if self.positive_support and (np.any(state.z <= 0) or np.any(state.x <= 0)):
            raise DomainError("this model requires strictly positive coordinates")

    def log_prior(self, z):
        return self.prior_log_density(np.asarray(z, dtype=float))

    def log_partial(self, j: int, z):
        return self.partial_log_likelihoods[j](np.asarray(z, dtype=float))

    def initial_state(self) -> InstrumentalState:
        """A neutral starting state: z at the prior centre, proxies at z."""
        if self.positive_support:
            z0 = np.exp(np.full(self.dim, self.conjugate_params.mu0))
        elif self.prior_mean is not None:
            z0 = np.array(self.prior_mean, dtype=float)
        else:
            z0 = np.zeros(self.dim)
        return InstrumentalState(z=z0, x=np.tile(z0, (self.blocks, 1)))


def joint_log_density(model: ModelSpec, lam: float, state: InstrumentalState) -> float:
    """Log-density of (z, x_{1:b}) under the extended target at bandwidth lam.

    Up to the model's normalising constant this is
    ``log prior(z) + sum_j [log K_j(z, x_j) + log f_j(x_j)]``.
    """
    if lam <= 0:
        raise DomainError("lam must be positive")
    model.validate_state(state)
    total = float(model.log_prior(state.z))
    for j in range(model.blocks):
        total += float(model.kernel.log_density(j, lam, state.z, state.x[j]))
        total += float(model.log_partial(j, state.x[j]))
    return total


def smoothed_partial_log_likelihood(
    model: ModelSpec, j: int, lam: float, z, quad_nodes: int | None = None
) -> float:
    """Log of the kernel-smoothed block likelihood, log ∫ K_j(z, x) f_j(x) dx.

    Closed forms exist for the conjugate Gaussian and log-normal models; any
    other model needs an explicit Gauss-Hermite node budget (and must be
    one-dimensional).
    """
    if lam <= 0:
        raise DomainError("lam must be positive")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    cj = model.kernel.scales[j]
    if model.conjugacy == GAUSSIAN_CONJUGATE:
        p = model.conjugate_params
        return float(_norm_logpdf(p.mu[j], z[0], p.s2[j] + cj * lam))
    if model.conjugacy == LOGNORMAL_CONJUGATE:
        if z[0] <= 0:
            raise DomainError("z must be positive for the log-normal model")
        p = model.conjugate_params
        return float(_norm_logpdf(p.mu[j], math.log(z[0]), p.s2[j] + cj * lam))
    if quad_nodes is None:
        raise UnsupportedOperationError(
            "no closed-form smoothing for this model; pass quad_nodes to integrate numerically"
        )
    if model.dim != 1:
        raise UnsupportedOperationError("quadrature smoothing is implemented for scalar models only")
    nodes, weights = np.polynomial.hermite_e.hermegauss(int(quad_nodes))
    sd = math.sqrt(cj * lam)
    if model.kernel.kind == "gaussian":
        points = z[0] + sd * nodes
    else:
        points = np.exp(math.log(z[0]) + sd * nodes)
    logf = np.array([float(model.log_partial(j, np.array([p]))) for p in points])
    m = np.max(logf)
    return float(m + np.log(np.sum(weights * np.exp(logf - m)) / math.sqrt(2.0 * math.pi)))


def posterior_log_density(model: ModelSpec) -> Callable:
    """log prior(z) + sum_j log f_j(z), up to the normalising constant."""

    def logpdf(z):
        z = np.asarray(z, dtype=float)
        total = model.prior_log_density(z)
        for logf in model.partial_log_likelihoods:
            total = total + logf(z)
        return total

    return logpdf


def subposterior_log_density(model: ModelSpec, j: int) -> Callable:
    """Block j's target for embarrassingly parallel samplers: prior^{1/b} * f_j."""

    def logpdf(z):
        z = np.asarray(z, dtype=float)
        return model.prior_log_density(z) / model.blocks + model.log_partial(j, z)

    return logpdf


# ---------------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------------

def gaussian_model(
    prior_mean: float,
    prior_var: float | None,
    block_means: Sequence[float],
    block_vars,
    kernel_scales=None,
) -> ModelSpec:
    """Scalar Gaussian location model: prior N(mu0, s0sq), f_j = N(mu_j; z, s2_j)."""
    params = GaussianBlockParams(mu0=float(prior_mean), s0sq=prior_var, mu=block_means, s2=block_vars)
    b = len(params.mu)
    scales = np.ones(b) if kernel_scales is None else np.asarray(kernel_scales, dtype=float)
    kernel = KernelFamily(kind="gaussian", scales=scales)

    if prior_var is None:
        prior_logpdf = lambda z: np.zeros(np.shape(z)[:-1])  # improper uniform
    else:
        prior_logpdf = lambda z: np.sum(_norm_logpdf(z, params.mu0, params.s0sq), axis=-1)

    def make_partial(j):
        return lambda z: np.sum(_norm_logpdf(params.mu[j], z, params.s2[j]), axis=-1)

    return ModelSpec(
        name="gaussian",
        dim=1,
        blocks=b,
        kernel=kernel,
        conjugacy=GAUSSIAN_CONJUGATE,
        prior_log_density=prior_logpdf,
        partial_log_likelihoods=tuple(make_partial(j) for j in range(b)),
        conjugate_params=params,
        prior_mean=None if prior_var is None else np.array([prior_mean]),
        prior_var=None if prior_var is None else np.array([prior_var]),
    )


def gaussian_model_from_observations(
    n: int, blocks: int, obs_var: float, ybar: float, prior_mean: float, prior_var: float
) -> ModelSpec:
    """Gaussian model for n i.i.d. observations with mean ybar in equal blocks.

    Each block's likelihood reduces to N(block mean; z, b*sigma^2/n); only the
    overall mean matters for the marginal quantities, so all block means are
    set to ybar.
    """
    if n % blocks != 0:
        raise ConfigError("blocks", f"blocks={blocks} must divide n={n}")
    s2 = blocks * obs_var / n
    return gaussian_model(prior_mean, prior_var, np.full(blocks, float(ybar)), s2)


def lognormal_model(
    prior_log_mean: float,
    prior_log_var: float,
    block_log_means: Sequence[float],
    block_log_vars,
    kernel_scales=None,
) -> ModelSpec:
    """Log-normal reparametrisation of the Gaussian model.

    With w = log z the model is exactly `gaussian_model` on w; densities here
    are expressed in the original positive variables, with log-normal kernels.
    """
    params = GaussianBlockParams(
        mu0=float(prior_log_mean), s0sq=float(prior_log_var), mu=block_log_means, s2=block_log_vars
    )
    b = len(params.mu)
    scales = np.ones(b) if kernel_scales is None else np.asarray(kernel_scales, dtype=float)
    kernel = KernelFamily(kind="lognormal", scales=scales)

    def prior_logpdf(z):
        z = np.asarray(z, dtype=float)
        if np.any(z <= 0):
            raise DomainError("z must be strictly positive for the log-normal model")
        lz = np.log(z)
        return np.sum(_norm_logpdf(lz, params.mu0, params.s0sq) - lz, axis=-1)

    def make_partial(j):
        def logf(z):
            z = np.asarray(z, dtype=float)
            if np.any(z <= 0):
                raise DomainError("z must be strictly positive for the log-normal model")
            return np.sum(_norm_logpdf(params.mu[j], np.log(z), params.s2[j]), axis=-1)

        return logf

    return ModelSpec(
        name="lognormal",
        dim=1,
        blocks=b,
        kernel=kernel,
        conjugacy=LOGNORMAL_CONJUGATE,
        prior_log_density=prior_logpdf,
        partial_log_likelihoods=tuple(make_partial(j) for j in range(b)),
        conjugate_params=params,
        positive_support=True,
    )


def _logistic_block_loglik(features: np.ndarray, responses: np.ndarray):
    """log f_j(z) = sum_l log S(eta_l z.x_l) with S(t) = 1/(1 + exp(t))."""
    signed = features * responses[:, None]  # (n_j, d)

    def logf(z):
        z = np.asarray(z, dtype=float)
        t = z @ signed.T  # (..., n_j)
        return -np.sum(np.logaddexp(0.0, t), axis=-1)

    return logf


def logistic_model(
    features: np.ndarray, responses: np.ndarray, blocks: int, kernel_scales=None,
    intercept_prior_sd: float = 20.0, coef_prior_sd: float = 5.0,
) -> ModelSpec:
    """Bayesian logistic regression split into equal sequential blocks.

    `features` must already include the intercept column (last); responses
    take values in {-1, +1}.  The prior is a product of independent zero-mean
    Gaussians with the wider standard deviation on the intercept.
    """
    features = np.asarray(features, dtype=float)
    responses = np.asarray(responses, dtype=float)
    n, d = features.shape
    if responses.shape != (n,):
        raise ConfigError("data", "responses must be one value per row")
    if not np.all(np.isin(responses, (-1.0, 1.0))):
        raise ConfigError("data", "responses must lie in {-1, +1}")
    if n % blocks != 0:
        raise ConfigError("blocks", f"blocks={blocks} must divide the number of rows n={n}")
    size = n // blocks
    feat_blocks = tuple(features[j * size:(j + 1) * size] for j in range(blocks))
    resp_blocks = tuple(responses[j * size:(j + 1) * size] for j in range(blocks))

    prior_sd = np.full(d, coef_prior_sd)
    prior_sd[-1] = intercept_prior_sd  # intercept column is appended last
    prior_var = prior_sd**2

    def prior_logpdf(z):
        return np.sum(_norm_logpdf(np.asarray(z, dtype=float), 0.0, prior_var), axis=-1)

    scales = np.ones(blocks) if kernel_scales is None else np.asarray(kernel_scales, dtype=float)
    return ModelSpec(
        name="logistic_regression",
        dim=d,
        blocks=blocks,
        kernel=KernelFamily(kind="gaussian", scales=scales),
        conjugacy=GENERIC,
        prior_log_density=prior_logpdf,
        partial_log_likelihoods=tuple(
            _logistic_block_loglik(X, y) for X, y in zip(feat_blocks, resp_blocks)
        ),
        prior_mean=np.zeros(d),
        prior_var=prior_var,
        logistic_blocks=LogisticBlocks(features=feat_blocks, responses=resp_blocks),
    )


def make_logistic_data(
    n: int,
    inputs: int,
    seed: int,
    interactions: bool = False,
    coefficients: Sequence[float] | None = None,
    input_prob: float = 0.1,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Simulate binary-covariate logistic data under the model's own link.

    Returns (features, responses, true_coefficients); features include the
    raw inputs, optionally their pairwise products, and a trailing intercept
    column, giving d = inputs + C(inputs, 2) + 1 when interactions are on.
    """
    gen = _rng.substream(seed, _rng.DATA_SYNTH)
    raw = (gen.random((n, inputs)) < input_prob).astype(float)
    cols = [raw]
    if interactions:
        cols.extend(
            (raw[:, a] * raw[:, b])[:, None] for a in range(inputs) for b in range(a + 1, inputs)
        )
    cols.append(np.ones((n, 1)))
    features = np.hstack(cols)
    d = features.shape[1]
    if coefficients is None:
        z_star = gen.normal(0.0, 1.0, size=d)
    else:
        z_star = np.asarray(coefficients, dtype=float)
        if z_star.shape != (d,):
            raise ConfigError("coefficients", f"expected {d} coefficients, got {z_star.shape[0]}")
    # P(eta = +1 | xi) = S(z.xi) with S(t) = 1/(1+exp(t)); S(t) + S(-t) = 1.
    p_plus = 1.0 / (1.0 + np.exp(features @ z_star))
    responses = np.where(gen.random(n) < p_plus, 1.0, -1.0)
    return features, responses, z_star


def load_logistic_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read rows of `response,covariate_1,...`; appends the intercept column."""
    try:
        table = np.loadtxt(path, delimiter=",", ndmin=2)
    except Exception as exc:
        raise ConfigError("data_path", f"could not parse {path}: {exc}") from exc
    if table.shape[1] < 2:
        raise ConfigError("data_path", "need a response column plus at least one covariate")
    responses = table[:, 0]
    if not np.all(np.isin(responses, (-1.0, 1.0))):
        raise ConfigError("data_path", "responses (first column) must lie in {-1, +1}")
    features = np.hstack([table[:, 1:], np.ones((table.shape[0], 1))])
    return features, responses


# ---------------------------------------------------------------------------
# Config-driven construction
# ---------------------------------------------------------------------------

def _resolve_block_values(params: dict, key: str, blocks: int, seed_key: int):
    """A block-parameter entry is either an explicit list or a draw spec."""
    value = params.get(key)
    if value is None:
        raise ConfigError(f"params.{key}", "required")
    if isinstance(value, dict):
        try:
            mean, sd, seed = value["mean"], value["sd"], value["seed"]
        except KeyError as exc:
            raise ConfigError(f"params.{key}", f"draw spec needs mean/sd/seed, missing {exc}") from exc
        gen = _rng.substream(int(seed), _rng.DATA_SYNTH, seed_key)
        return gen.normal(float(mean), float(sd), size=blocks)
    value = np.atleast_1d(np.asarray(value, dtype=float))
    if value.shape != (blocks,):
        raise ConfigError(f"params.{key}", f"expected {blocks} values, got {value.shape[0]}")
    return value


def build_model(config: dict) -> ModelSpec:
    """Instantiate a ModelSpec from a JSON-style config document.

    Schema: {"model": name, "blocks": int, "kernel_scales": [..] optional,
    "params": {...}, "data_path": optional}.
    """
    name = config.get("model")
    blocks = config.get("blocks")
    if not isinstance(blocks, int) or blocks < 1:
        raise ConfigError("blocks", "must be a positive integer")
    scales = config.get("kernel_scales")
    params = config.get("params", {})

    if name == "gaussian":
        prior_var = params.get("prior_var", 1.0)
        if prior_var == "uniform":
            prior_var = None
        if "n" in params:
            if scales is not None:
                raise ConfigError("kernel_scales", "not configurable for the n-observation form")
            return gaussian_model_from_observations(
                n=int(params["n"]), blocks=blocks, obs_var=float(params.get("obs_var", 1.0)),
                ybar=float(params["ybar"]), prior_mean=float(params.get("prior_mean", 0.0)),
                prior_var=float(prior_var),
            )
        means = _resolve_block_values(params, "block_means", blocks, 0)
        return gaussian_model(
            prior_mean=float(params.get("prior_mean", 0.0)),
            prior_var=None if prior_var is None else float(prior_var),
            block_means=means,
            block_vars=np.broadcast_to(
                np.asarray(params.get("block_vars", 1.0), dtype=float), (blocks,)
            ),
            kernel_scales=scales,
        )

    if name == "lognormal":
        means = _resolve_block_values(params, "block_log_means", blocks, 1)
        return lognormal_model(
            prior_log_mean=float(params.get("prior_log_mean", 0.0)),
            prior_log_var=float(params.get("prior_log_var", 25.0)),
            block_log_means=means,
            block_log_vars=np.broadcast_to(
                np.asarray(params.get("block_log_vars", 1.0), dtype=float), (blocks,)
            ),
            kernel_scales=scales,
        )

    if name == "logistic_regression":
        if config.get("data_path"):
            features, responses = load_logistic_csv(config["data_path"])
        else:
            try:
                n, inputs, seed = int(params["n"]), int(params["inputs"]), int(params["seed"])
            except KeyError as exc:
                raise ConfigError("params", f"synthetic logistic data needs n/inputs/seed ({exc})") from exc
            features, responses, _ = make_logistic_data(
                n=n, inputs=inputs, seed=seed,
                interactions=bool(params.get("interactions", False)),
                coefficients=params.get("coefficients"),
            )
        return logistic_model(
            features, responses, blocks=blocks, kernel_scales=scales,
            intercept_prior_sd=float(params.get("intercept_prior_sd", 20.0)),
            coef_prior_sd=float(params.get("coef_prior_sd", 5.0)),
        )

    raise ConfigError("model", f"unknown model {name!r}")
