"""Bias correction and stopping for sequences of bandwidth-indexed estimates.

Each sampler step p yields an estimate eta_p of the quantity of interest at
bandwidth lam_p together with a variance proxy v_p.  For small bandwidths the
truth is locally linear in lam, so the weighted-least-squares intercept at
lam = 0 is a bias-corrected estimate.  The inclusion procedure drops
large-bandwidth points while doing so improves the weighted R^2; the stopping
rule tracks which estimate currently minimises the MSE proxy
(eta_q - intercept)^2 + v_q and terminates once the winner has been stable
for kappa consecutive steps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegeneracyWarning, DomainError

# Strict-improvement comparisons of R^2 ignore differences at round-off
# scale, so exact ties (e.g. perfectly collinear data) never trigger a drop.
_R2_TIE_EPS = 1e-12


@dataclass(frozen=True)
class WlsFit:
    intercept: float
    slope: float
    fitted: np.ndarray
    lam_tilde: float
    eta_tilde: float


@dataclass(frozen=True)
class RegressionInput:
    """One component's (lam_p, eta_p, v_p) series, bandwidths strictly decreasing."""

    lambdas: np.ndarray
    etas: np.ndarray
    variances: np.ndarray
    component: int = 0
    source_indices: np.ndarray | None = None  # original step indices, if filtered

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        eta = np.asarray(self.etas, dtype=float)
        var = np.asarray(self.variances, dtype=float)
        if not (lam.shape == eta.shape == var.shape) or lam.ndim != 1:
            raise ConfigError("points", "lambdas, etas and variances must be 1-d and equally long")
        if np.any(np.diff(lam) >= 0):
            raise ConfigError("lambdas", "must be strictly decreasing")
        if np.any(var <= 0):
            raise ConfigError("variances", "must be strictly positive (filter degenerate points first)")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "etas", eta)
        object.__setattr__(self, "variances", var)
        idx = self.source_indices
        idx = np.arange(len(lam)) if idx is None else np.asarray(idx, dtype=int)
        object.__setattr__(self, "source_indices", idx)

    def __len__(self) -> int:
        return len(self.lambdas)

    @classmethod
    def from_series(cls, lambdas, etas, variances, component: int = 0) -> "RegressionInput":
        """Build an input, dropping degenerate (v <= 0) points with a warning."""
        lam = np.asarray(lambdas, dtype=float)
        eta = np.asarray(etas, dtype=float)
        var = np.asarray(variances, dtype=float)
        keep = var > 0
        if not np.all(keep):
            warnings.warn(
                f"excluding {np.count_nonzero(~keep)} degenerate zero-variance point(s) from regression",
                DegeneracyWarning,
                stacklevel=2,
            )
        idx = np.flatnonzero(keep)
        return cls(lam[keep], eta[keep], var[keep], component, source_indices=idx)


def _wls_fit(lam: np.ndarray, eta: np.ndarray, var: np.ndarray) -> WlsFit:
    w = 1.0 / var
    lam_tilde = float(np.sum(lam * w) / np.sum(w))
    eta_tilde = float(np.sum(eta * w) / np.sum(w))
    sxx = float(np.sum(w * (lam - lam_tilde) ** 2))
    if sxx == 0.0:
        raise DomainError("singular design: all bandwidths in the inclusion set are identical")
    slope = float(np.sum(w * (lam - lam_tilde) * (eta - eta_tilde)) / sxx)
    intercept = eta_tilde - slope * lam_tilde
    return WlsFit(intercept, slope, intercept + slope * lam, lam_tilde, eta_tilde)


def _subset(data: RegressionInput, subset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    idx = np.asarray(sorted(subset), dtype=int)
    return data.lambdas[idx], data.etas[idx], data.variances[idx]


def weighted_fit(data: RegressionInput, subset) -> WlsFit:
    """Weighted least squares of eta on lam over `subset`, weights 1/v."""
    lam, eta, var = _subset(data, subset)
    if len(lam) < 2:
        raise ConfigError("subset", "need at least two points to fit a line")
    return _wls_fit(lam, eta, var)


def bias_corrected_estimate(data: RegressionInput, subset) -> float:
    """Weighted-least-squares intercept at lam = 0 over the inclusion set."""
    return weighted_fit(data, subset).intercept


def weighted_r_squared(data: RegressionInput, subset, fitted: np.ndarray) -> float:
    """Explained weighted variation of the fit: sum (fit - mean)^2/v over sum (eta - mean)^2/v.

    All responses equal makes the total sum of squares zero; the ratio is
    then 1 by convention (flagged with a warning).
    """
    lam, eta, var = _subset(data, subset)
    w = 1.0 / var
    eta_tilde = float(np.sum(eta * w) / np.sum(w))
    total = float(np.sum(w * (eta - eta_tilde) ** 2))
    if total == 0.0:
        warnings.warn("zero weighted total sum of squares; R^2 taken as 1", DegeneracyWarning, stacklevel=2)
        return 1.0
    explained = float(np.sum(w * (np.asarray(fitted) - eta_tilde) ** 2))
    return explained / total


def select_inclusion_set(data: RegressionInput) -> list[int]:
    """Drop the largest-bandwidth point while doing so strictly increases R^2.

    Starts from all indices and never shrinks below three points; ties do not
    trigger a drop.  Returns row indices into `data`, ascending.
    """
    if len(data) == 0:
        raise ConfigError("points", "empty input")
    subset = list(range(len(data)))
    if len(subset) < 2:
        return subset
    fit = weighted_fit(data, subset)
    r2 = weighted_r_squared(data, subset, fit.fitted)
    while len(subset) > 3:
        candidate = subset[1:]
        fit_c = weighted_fit(data, candidate)
        r2_c = weighted_r_squared(data, candidate, fit_c.fitted)
        if r2_c > r2 + _R2_TIE_EPS:
            subset, r2 = candidate, r2_c
        else:
            break
    return subset


def mse_decomposition(bias: float, variance: float) -> float:
    """Mean squared error from its bias and variance parts."""
    if variance < 0:
        raise DomainError("variance must be non-negative")
    return bias * bias + variance


def regression_report(
    data_per_component: list[RegressionInput],
    stopped_at: int | None = None,
    chosen_index: int | None = None,
) -> dict:
    """JSON-ready summary of the per-component inclusion sets and fits."""
    subsets, intercepts, slopes, r2s = [], [], [], []
    for data in data_per_component:
        subset = select_inclusion_set(data)
        fit = weighted_fit(data, subset)
        subsets.append([int(data.source_indices[i]) for i in subset])
        intercepts.append(fit.intercept)
        slopes.append(fit.slope)
        r2s.append(weighted_r_squared(data, subset, fit.fitted))
    report = {
        "S": subsets[0] if len(subsets) == 1 else subsets,
        "intercept": intercepts,
        "slope": slopes,
        "r_squared": r2s,
        "stopped_at": stopped_at,
        "chosen_index": chosen_index,
    }
    return report


# ---------------------------------------------------------------------------
# Online stopping rule
# ---------------------------------------------------------------------------

@dataclass
class StoppingDecision:
    stop: bool
    step: int
    chosen_index: int | None
    bias_corrected: np.ndarray | None
    argmin_index: int | None


@dataclass
class StoppingState:
    """Online driver state for the MSE-proxy stopping rule.

    Maintains one inclusion set per component of the test function (the
    regressions are independent); the proxy minimised is the sum over
    components of (eta_q - m_p)^2 + v_q.  Degenerate steps (any zero
    variance) are recorded but excluded from both the regressions and the
    proxy candidates.
    """

    kappa: int
    lambdas: list = field(default_factory=list)
    etas: list = field(default_factory=list)
    variances: list = field(default_factory=list)
    usable: list = field(default_factory=list)
    inclusion: list | None = None  # per component, lists of step indices
    argmin_history: list = field(default_factory=list)
    last_bias_corrected: np.ndarray | None = None

    def __post_init__(self):
        if self.kappa < 1:
            raise ConfigError("kappa", "must be at least 1")

    @property
    def step_count(self) -> int:
        return len(self.lambdas)

    def _component_input(self, comp: int, indices) -> RegressionInput:
        lam = np.array([self.lambdas[i] for i in indices])
        eta = np.array([self.etas[i][comp] for i in indices])
        var = np.array([self.variances[i][comp] for i in indices])
        return RegressionInput(lam, eta, var, component=comp, source_indices=np.asarray(indices))

    def _update_inclusion(self, comp: int, p: int) -> None:
        subset = self.inclusion[comp]
        subset.append(p)
        if len(subset) < 2:
            return
        data = self._component_input(comp, subset)
        rows = list(range(len(subset)))
        fit = weighted_fit(data, rows)
        r2 = weighted_r_squared(data, rows, fit.fitted)
        while len(rows) > 3:
            candidate = rows[1:]
            fit_c = weighted_fit(data, candidate)
            r2_c = weighted_r_squared(data, candidate, fit_c.fitted)
            if r2_c > r2 + _R2_TIE_EPS:
                rows, r2 = candidate, r2_c
            else:
                break
        self.inclusion[comp] = [subset[i] for i in rows]

    def step(self, lam: float, eta, variance) -> StoppingDecision:
        """Record step p's (lam, eta, v) and decide whether to terminate."""
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        variance = np.atleast_1d(np.asarray(variance, dtype=float))
        if self.inclusion is None:
            self.inclusion = [[] for _ in range(len(eta))]
        p = self.step_count
        self.lambdas.append(float(lam))
        self.etas.append(eta)
        self.variances.append(variance)
        ok = bool(np.all(variance > 0))
        self.usable.append(ok)

        if ok:
            for comp in range(len(eta)):
                self._update_inclusion(comp, p)

        m_p = None
        if all(len(s) >= 2 for s in self.inclusion):
            m_p = np.array(
                [
                    weighted_fit(self._component_input(comp, s), range(len(s))).intercept
                    for comp, s in enumerate(self.inclusion)
                ]
            )
            self.last_bias_corrected = m_p

        argmin = None
        if m_p is not None:
            candidates = [q for q in range(p + 1) if self.usable[q]]
            proxies = [
                float(np.sum((self.etas[q] - m_p) ** 2 + self.variances[q])) for q in candidates
            ]
            argmin = candidates[int(np.argmin(proxies))]
            self.argmin_history.append(argmin)

        stop = (
            m_p is not None
            and p >= self.kappa - 1
            and len(self.argmin_history) >= self.kappa
            and len(set(self.argmin_history[-self.kappa:])) == 1
        )
        return StoppingDecision(
            stop=stop,
            step=p,
            chosen_index=argmin if stop else None,
            bias_corrected=m_p,
            argmin_index=argmin,
        )


def stopping_rule_step(state: StoppingState, lam: float, eta, variance) -> StoppingDecision:
    """Functional wrapper over StoppingState.step."""
    return state.step(lam, eta, variance)
