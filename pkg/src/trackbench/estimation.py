"""Per-target Kalman filters with visibility-gated updates and detected-set bookkeeping."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .world import AgentPose, FieldOfView, OccupancyGrid, in_fov


class SingularInnovation(Exception):
    """Innovation covariance is numerically singular; update impossible."""


class TargetStatus(enum.Enum):
    UNDETECTED = "undetected"
    TRACKED = "tracked"
    LOST = "lost"


@dataclass(frozen=True)
class Belief:
    """Gaussian estimate of one target state."""

    mu: np.ndarray
    sigma: np.ndarray
    status: TargetStatus

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))

    def position(self) -> np.ndarray:
        return self.mu[:2]


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def kf_predict(belief: Belief, a: np.ndarray, q: np.ndarray) -> Belief:
    """Time update: mu' = A mu, sigma' = A sigma A^T + Q (re-symmetrized)."""
    a = np.asarray(a, dtype=float)
    q = np.asarray(q, dtype=float)
    return replace(belief, mu=a @ belief.mu,
                   sigma=_symmetrize(a @ belief.sigma @ a.T + q))


def kf_update(belief: Belief, z: np.ndarray, h: np.ndarray, r: np.ndarray) -> Belief:
    """Measurement update with Joseph-form covariance for numerical robustness."""
    h = np.asarray(h, dtype=float)
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    s = _symmetrize(h @ belief.sigma @ h.T + r)
    if np.linalg.eigvalsh(s).min() <= 1e-12:
        raise SingularInnovation("innovation covariance is singular")
    k = belief.sigma @ h.T @ np.linalg.inv(s)
    mu = belief.mu + k @ (z - h @ belief.mu)
    ikh = np.eye(belief.sigma.shape[0]) - k @ h
    sigma = _symmetrize(ikh @ belief.sigma @ ikh.T + k @ r @ k.T)
    return replace(belief, mu=mu, sigma=sigma)


def uncertainty(belief: Belief) -> float:
    """log det of the covariance; -inf when the determinant underflows."""
    sign, logdet = np.linalg.slogdet(belief.sigma)
    if sign <= 0:
        return -math.inf
    return float(logdet)


def undetected_belief(sigma_bar: np.ndarray) -> Belief:
    """Uninformative placeholder belief centered at the environment origin."""
    sigma_bar = np.asarray(sigma_bar, dtype=float)
    sign, logdet = np.linalg.slogdet(sigma_bar)
    if sign <= 0 or logdet <= 1.0:
        raise ValueError("sigma_bar must satisfy log det > 1")
    return Belief(np.zeros(sigma_bar.shape[0]), sigma_bar.copy(), TargetStatus.UNDETECTED)


@dataclass
class FilterBank:
    """All per-target filters plus the detected set and shared model matrices.

    init_sigma is the covariance assigned to a freshly discovered target before
    its first measurement update; sigma_bar is the uninformative ceiling used
    for undetected targets downstream.
    """

    a: np.ndarray
    q: np.ndarray
    h: np.ndarray
    r: np.ndarray
    sigma_bar: np.ndarray
    init_sigma: np.ndarray
    beliefs: dict[int, Belief] = field(default_factory=dict)
    detected: set[int] = field(default_factory=set)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        self.sigma_bar = np.asarray(self.sigma_bar, dtype=float)
        self.init_sigma = np.asarray(self.init_sigma, dtype=float)
        sign, logdet = np.linalg.slogdet(self.sigma_bar)
        if sign <= 0 or logdet <= 1.0:
            raise ValueError("sigma_bar must satisfy log det > 1")

    def max_detected_uncertainty(self) -> float:
        if not self.detected:
            return -math.inf
        return max(uncertainty(self.beliefs[j]) for j in sorted(self.detected))


def _new_belief(bank: FilterBank, z: np.ndarray) -> Belief:
    # Pseudo-inverse lift of the measurement gives the initial mean.
    mu = np.linalg.pinv(bank.h) @ np.asarray(z, dtype=float)
    return Belief(mu, bank.init_sigma.copy(), TargetStatus.TRACKED)


def process_step(bank: FilterBank, measurements: list[tuple[int, np.ndarray]],
                 pose: AgentPose, grid: OccupancyGrid, fov: FieldOfView) -> FilterBank:
    """One estimation cycle: predict all, update measured, demote missing targets.

    A detected target with no measurement whose predicted mean position is
    visible becomes Lost and leaves the detected set; its filter keeps
    predicting and resumes updates on re-detection without reinitialization.
    """
    for j in sorted(bank.beliefs):
        if bank.beliefs[j].status is not TargetStatus.UNDETECTED:
            bank.beliefs[j] = kf_predict(bank.beliefs[j], bank.a, bank.q)

    measured = {}
    for j, z in measurements:
        measured[j] = z
    for j in sorted(measured):
        if j not in bank.beliefs:
            bank.beliefs[j] = _new_belief(bank, measured[j])
        updated = kf_update(bank.beliefs[j], measured[j], bank.h, bank.r)
        bank.beliefs[j] = replace(updated, status=TargetStatus.TRACKED)
        bank.detected.add(j)

    for j in sorted(bank.detected - set(measured)):
        belief = bank.beliefs[j]
        if in_fov(pose, belief.position(), grid, fov):
            bank.detected.discard(j)
            bank.beliefs[j] = replace(belief, status=TargetStatus.LOST)
    return bank
