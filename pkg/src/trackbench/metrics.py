"""Tracking metrics: mean position error, Gaussian entropy sum, and negative log-likelihood."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimation import Belief

LOG_2PI = math.log(2.0 * math.pi)


class SingularCovariance(Exception):
    """Covariance is not invertible; density undefined."""


@dataclass(frozen=True)
class MetricsFrame:
    t: int
    rmse: float
    entropy: float
    nll: float
    detected_count: int
    n_targets: int


def gaussian_logpdf(y: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> float:
    """log N(y | mu, sigma) via Cholesky; raises SingularCovariance if not PD."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as e:
        raise SingularCovariance("covariance is not positive definite") from e
    diff = y - mu
    sol = np.linalg.solve(chol, diff)
    maha = float(sol @ sol)
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    n = y.shape[0]
    return -0.5 * (maha + logdet + n * LOG_2PI)


def rmse(beliefs: dict[int, Belief], truths: dict[int, np.ndarray],
         detected: set[int], empty_value: float) -> float:
    """Mean Euclidean position error over detected targets.

    Follows the per-target root-then-mean form; empty_value (conventionally the
    map diagonal) is returned when nothing is detected.
    """
    if not detected:
        return empty_value
    total = 0.0
    for j in sorted(detected):
        err = np.asarray(truths[j], dtype=float)[:2] - beliefs[j].mu[:2]
        total += float(np.linalg.norm(err))
    return total / len(detected)


def entropy(beliefs: dict[int, Belief], detected: set[int],
            n_targets: int, sigma_bar: np.ndarray) -> float:
    """Sum of log det over detected covariances plus the undetected ceiling term."""
    total = 0.0
    for j in sorted(detected):
        sign, logdet = np.linalg.slogdet(beliefs[j].sigma)
        total += float(logdet) if sign > 0 else -math.inf
    sign, logdet_bar = np.linalg.slogdet(np.asarray(sigma_bar, dtype=float))
    return total + (n_targets - len(detected)) * float(logdet_bar)


def nll(beliefs: dict[int, Belief], truths: dict[int, np.ndarray],
        detected: set[int], n_targets: int, sigma_bar: np.ndarray) -> float:
    """Negative log-likelihood of the true states under the current beliefs.

    Undetected targets are scored against N(0, sigma_bar).
    """
    sigma_bar = np.asarray(sigma_bar, dtype=float)
    if len(truths) != n_targets:
        raise ValueError("truths must cover every target")
    total = 0.0
    for j in sorted(truths):
        y = np.asarray(truths[j], dtype=float)
        if j in detected:
            total -= gaussian_logpdf(y, beliefs[j].mu, beliefs[j].sigma)
        else:
            total -= gaussian_logpdf(y, np.zeros(sigma_bar.shape[0]), sigma_bar)
    return total
