import math

import numpy as np
import pytest

from trackbench.estimation import Belief, TargetStatus
from trackbench.metrics import (
    SingularCovariance,
    entropy,
    gaussian_logpdf,
    nll,
    rmse,
)

from oracles import gaussian_logpdf_oracle


def _belief(mu, sigma):
    return Belief(np.asarray(mu, float), np.asarray(sigma, float), TargetStatus.TRACKED)


def _random_cov(rng, n=2):
    m = rng.normal(size=(n, n))
    return m @ m.T + 0.1 * np.eye(n)


# --------------------------------------------------------- gaussian_logpdf

def test_logpdf_at_mean_identity():
    val = gaussian_logpdf(np.zeros(2), np.zeros(2), np.eye(2))
    assert val == pytest.approx(-math.log(2 * math.pi), abs=1e-12)
    assert val == pytest.approx(-1.837877, abs=1e-6)


def test_logpdf_unit_offset():
    val = gaussian_logpdf(np.array([1.0, 0.0]), np.zeros(2), np.eye(2))
    assert val == pytest.approx(-math.log(2 * math.pi) - 0.5, abs=1e-12)


def test_logpdf_matches_oracle(rng):
    for _ in range(300):
        sigma = _random_cov(rng)
        mu = rng.normal(size=2)
        y = rng.normal(size=2)
        assert gaussian_logpdf(y, mu, sigma) == pytest.approx(
            gaussian_logpdf_oracle(y, mu, sigma), abs=1e-10)


def test_logpdf_singular():
    with pytest.raises(SingularCovariance):
        gaussian_logpdf(np.zeros(2), np.zeros(2), np.zeros((2, 2)))


# -------------------------------------------------------------------- rmse

def test_rmse_exact_estimate():
    beliefs = {0: _belief([1.0, 2.0], np.eye(2))}
    truths = {0: np.array([1.0, 2.0])}
    assert rmse(beliefs, truths, {0}, empty_value=99.0) == 0.0


def test_rmse_mean_of_roots():
    beliefs = {0: _belief([0.0, 0.0], np.eye(2)), 1: _belief([0.0, 0.0], np.eye(2))}
    truths = {0: np.array([3.0, 0.0]), 1: np.array([0.0, 4.0])}
    assert rmse(beliefs, truths, {0, 1}, empty_value=99.0) == pytest.approx(3.5)


def test_rmse_empty_sentinel():
    assert rmse({}, {}, set(), empty_value=12.34) == 12.34


def test_rmse_rigid_transform_invariant(rng):
    for _ in range(50):
        mus = rng.normal(size=(3, 2))
        ys = rng.normal(size=(3, 2))
        th = float(rng.uniform(0, 2 * math.pi))
        rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        shift = rng.normal(size=2)
        beliefs = {j: _belief(mus[j], np.eye(2)) for j in range(3)}
        truths = {j: ys[j] for j in range(3)}
        moved_b = {j: _belief(rot @ mus[j] + shift, np.eye(2)) for j in range(3)}
        moved_t = {j: rot @ ys[j] + shift for j in range(3)}
        a = rmse(beliefs, truths, {0, 1, 2}, empty_value=0.0)
        b = rmse(moved_b, moved_t, {0, 1, 2}, empty_value=0.0)
        assert a == pytest.approx(b, abs=1e-9)


# ----------------------------------------------------------------- entropy

def test_entropy_all_undetected():
    sb = np.diag([math.e ** 10, math.e ** 10])  # log det = 20
    assert entropy({}, set(), 3, sb) == pytest.approx(60.0)


def test_entropy_mixed():
    sb = np.diag([math.e ** 10, math.e ** 10])
    beliefs = {0: _belief([0, 0], np.eye(2))}
    assert entropy(beliefs, {0}, 3, sb) == pytest.approx(40.0)


def test_entropy_matches_termwise_oracle(rng):
    sb = np.diag([70.0, 90.0])
    for _ in range(100):
        n = int(rng.integers(1, 7))
        beliefs = {j: _belief(rng.normal(size=2), _random_cov(rng)) for j in range(n)}
        detected = {j for j in range(n) if rng.random() < 0.5}
        expected = sum(math.log(np.linalg.det(beliefs[j].sigma)) for j in detected)
        expected += (n - len(detected)) * math.log(np.linalg.det(sb))
        got = entropy(beliefs, detected, n, sb)
        assert got == pytest.approx(expected, abs=1e-9)


def test_entropy_additive_decomposition(rng):
    sb = np.diag([70.0, 90.0])
    beliefs = {j: _belief(rng.normal(size=2), _random_cov(rng)) for j in range(4)}
    detected = {0, 2}
    total = entropy(beliefs, detected, 4, sb)
    detected_part = entropy(beliefs, detected, 2, sb)  # as if only detected exist
    undetected_part = entropy({}, set(), 2, sb)
    assert total == detected_part + undetected_part


# --------------------------------------------------------------------- nll

def test_nll_single_detected_at_mean():
    beliefs = {0: _belief([1.0, 1.0], np.eye(2))}
    truths = {0: np.array([1.0, 1.0])}
    sb = np.diag([50.0, 50.0])
    assert nll(beliefs, truths, {0}, 1, sb) == pytest.approx(1.837877, abs=1e-6)


def test_nll_all_undetected_reduces_to_ceiling_terms(rng):
    sb = np.diag([50.0, 80.0])
    truths = {j: rng.normal(size=2) for j in range(3)}
    expected = sum(-gaussian_logpdf_oracle(truths[j], np.zeros(2), sb) for j in range(3))
    assert nll({}, truths, set(), 3, sb) == pytest.approx(expected, abs=1e-10)


def test_nll_mixed_matches_termwise_oracle(rng):
    sb = np.diag([60.0, 60.0])
    for _ in range(100):
        n = int(rng.integers(1, 6))
        beliefs = {j: _belief(rng.normal(size=2), _random_cov(rng)) for j in range(n)}
        truths = {j: rng.normal(size=2) for j in range(n)}
        detected = {j for j in range(n) if rng.random() < 0.5}
        expected = 0.0
        for j in range(n):
            if j in detected:
                expected -= gaussian_logpdf_oracle(truths[j], beliefs[j].mu,
                                                   beliefs[j].sigma)
            else:
                expected -= gaussian_logpdf_oracle(truths[j], np.zeros(2), sb)
        assert nll(beliefs, truths, detected, n, sb) == pytest.approx(expected, abs=1e-9)


def test_nll_minimized_at_true_state(rng):
    sb = np.diag([50.0, 50.0])
    y = np.array([0.7, -0.4])
    sigma = _random_cov(rng)
    base = nll({0: _belief(y, sigma)}, {0: y}, {0}, 1, sb)
    for _ in range(50):
        mu = y + rng.normal(scale=0.5, size=2)
        if np.allclose(mu, y):
            continue
        worse = nll({0: _belief(mu, sigma)}, {0: y}, {0}, 1, sb)
        assert worse > base
