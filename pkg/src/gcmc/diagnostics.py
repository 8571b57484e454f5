"""Chain diagnostics: batch-means variance and effective sample size."""

from __future__ import annotations

import math

import numpy as np


def batch_means_variance(samples: np.ndarray) -> np.ndarray:
    """Batch-means estimate of the asymptotic variance, per component.

    Uses floor(sqrt(N)) batches of equal size, discarding any remainder from
    the front of the chain.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float).T).T  # (N, d)
    n = samples.shape[0]
    n_batches = max(2, math.isqrt(n))
    size = n // n_batches
    if size < 1:
        raise ValueError("chain too short for batch means")
    trimmed = samples[n - n_batches * size:]
    means = trimmed.reshape(n_batches, size, -1).mean(axis=1)  # (B, d)
    overall = trimmed.mean(axis=0)
    return size * np.sum((means - overall) ** 2, axis=0) / (n_batches - 1)


def effective_sample_size(samples: np.ndarray) -> np.ndarray:
    """N * sample variance / batch-means asymptotic variance, per component."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float).T).T
    n = samples.shape[0]
    s2 = samples.var(axis=0, ddof=1)
    asym = batch_means_variance(samples)
    return n * s2 / np.maximum(asym, 1e-300)


def autocorrelation(samples: np.ndarray, lag: int) -> float:
    """Empirical lag-k autocorrelation of a scalar chain."""
    x = np.asarray(samples, dtype=float).ravel()
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if lag == 0:
        return 1.0
    return float(np.dot(x[:-lag], x[lag:]) / denom)
