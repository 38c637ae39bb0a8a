import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterlcbwk.estimate import (RESOLVE_EVERY, ClusterEstimate, RadiusConfig,
                                   consumption_radius, estimate_init, estimate_update,
                                   optimistic_consumption, optimistic_reward, reward_radius,
                                   sum_of_norms_bound)
from clusterlcbwk.exceptions import ValidationError
from clusterlcbwk.testing import sample_ellipsoid_boundary


def _random_state(rng, m=3, d=2, n=40):
    est = estimate_init(m, d, 1.0)
    for _ in range(n):
        estimate_update(est, rng.random(m), rng.random(), rng.random(d))
    return est


def test_init_identity():
    est = estimate_init(2, 1, 1.0)
    assert np.array_equal(est.M, np.eye(2)) and np.array_equal(est.mu_hat, np.zeros(2))
    assert est.t_c == 0


def test_init_scalar_inverse():
    assert estimate_init(1, 1, 2.0).M_inv[0, 0] == 0.5


def test_init_rejects_bad_lambda():
    with pytest.raises(ValidationError):
        estimate_init(2, 1, 0.0)


def test_init_optimistic_zero(rng):
    est = estimate_init(3, 1, 1.0)
    value, _ = optimistic_reward(est, rng.random(3), 0.0)
    assert value == 0.0


def test_update_hand_example():
    est = estimate_update(estimate_init(2, 1, 1.0), np.array([1.0, 0.0]), 0.5, [0.0])
    assert np.array_equal(est.M, np.diag([2.0, 1.0]))
    assert est.mu_hat == pytest.approx([0.25, 0.0], abs=1e-15)


def test_update_zero_context(rng):
    est = _random_state(rng)
    M, mu = est.M.copy(), est.mu_hat.copy()
    est.update(np.zeros(3), 0.7, np.ones(2))
    assert np.array_equal(est.M, M)
    assert np.allclose(est.mu_hat, mu, atol=1e-15)


def test_update_matches_batch_solve(rng):
    m, d, n = 4, 3, 1000
    X = rng.random((n, m))
    y = rng.random(n)
    V = rng.random((n, d))
    est = estimate_init(m, d, 1.0)
    for x, r, v in zip(X, y, V):
        est.update(x, r, v)
    M = np.eye(m) + X.T @ X
    assert np.max(np.abs(est.mu_hat - np.linalg.solve(M, X.T @ y))) <= 1e-8
    assert np.max(np.abs(est.W_hat - np.linalg.solve(M, X.T @ V))) <= 1e-8
    assert np.array_equal(est.M, M) or np.allclose(est.M, M, atol=1e-9)
    assert est.t_c == n


def test_inverse_drift_at_checkpoints(rng):
    est = estimate_init(5, 1, 1.0)
    for i in range(1, 4 * RESOLVE_EVERY + 1):
        est.update(rng.random(5), rng.random(), [rng.random()])
        if i % RESOLVE_EVERY == 0:
            assert np.max(np.abs(est.M @ est.M_inv - np.eye(5))) <= 1e-8


def test_copy_is_independent(rng):
    est = _random_state(rng)
    snap = est.copy()
    est.update(np.ones(3), 1.0, np.ones(2))
    assert snap.t_c == est.t_c - 1
    assert not np.array_equal(snap.M, est.M)


def test_radius_hand_value():
    # 3 sqrt(ln 10) + 1, evaluated at 30 digits
    assert reward_radius(1, 1, 0.1, 0.0) == pytest.approx(5.55228138815543905, abs=1e-12)


def test_radius_with_eps():
    assert reward_radius(100, 2, 0.1, 0.1) == pytest.approx(15.1110611834955264, abs=1e-12)
    assert consumption_radius(100, 2, 3, 0.1, 0.1) == \
        pytest.approx(15.9278567356373646, abs=1e-12)


def test_consumption_equals_reward_for_one_resource():
    for t in (0, 1, 10, 500):
        assert consumption_radius(t, 3, 1, 0.2) == reward_radius(t, 3, 0.2)


def test_radius_exceeds_eps_term():
    assert reward_radius(100, 1, 0.1, 0.1) > 1.0


def test_radius_clamped_for_tiny_counts():
    assert reward_radius(0, 2, 0.9) >= 3 * math.sqrt(2) + math.sqrt(2)


def test_radius_config_eps_modes():
    assert RadiusConfig().resolve_eps(0.25, 8) == 0.5
    assert RadiusConfig(eps_hat="zero").resolve_eps(0.25, 8) == 0.0
    assert RadiusConfig(eps_hat=0.03).resolve_eps(0.25, 8) == 0.03
    with pytest.raises(ValidationError):
        RadiusConfig(zeta=1.5)
    with pytest.raises(ValidationError):
        RadiusConfig(eps_hat="sometimes")


def test_optimistic_identity_case():
    est = estimate_init(2, 1, 1.0)
    value, beta = optimistic_reward(est, np.array([1.0, 0.0]), 0.7)
    assert value == pytest.approx(0.7, abs=1e-15)
    assert beta == pytest.approx([0.7, 0.0], abs=1e-15)


def test_optimistic_zero_radius(rng):
    est = _random_state(rng)
    x = rng.random(3)
    assert optimistic_reward(est, x, 0.0)[0] == x @ est.mu_hat


def test_optimistic_zero_context_witness(rng):
    est = _random_state(rng)
    _, beta = optimistic_reward(est, np.zeros(3), 2.0)
    assert np.array_equal(beta, est.mu_hat)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), radius=st.floats(0.01, 10.0))
def test_witness_on_boundary(seed, radius):
    rng = np.random.default_rng(seed)
    est = _random_state(rng, n=int(rng.integers(1, 60)))
    x = rng.random(3) + 0.01
    value, beta = optimistic_reward(est, x, radius)
    diff = beta - est.mu_hat
    assert abs(math.sqrt(diff @ est.M @ diff) - radius) <= 1e-8
    assert value == pytest.approx(x @ beta, abs=1e-10)


def test_optimistic_reward_dominates_boundary(rng):
    est = _random_state(rng)
    x = rng.random(3)
    radius = 1.3
    value, _ = optimistic_reward(est, x, radius)
    betas = sample_ellipsoid_boundary(est.mu_hat, est.M, radius, 10_000, rng)
    assert np.all(value >= betas @ x - 1e-12)


def test_optimistic_consumption_zero_radius(rng):
    est = _random_state(rng)
    x = rng.random(3)
    assert np.array_equal(optimistic_consumption(est, x, 0.0), x @ est.W_hat)


def test_optimistic_consumption_one_resource(rng):
    est = _random_state(rng, d=1)
    x = rng.random(3)
    expected = x @ est.W_hat[:, 0] - 0.9 * math.sqrt(x @ np.linalg.inv(est.M) @ x)
    assert optimistic_consumption(est, x, 0.9)[0] == pytest.approx(expected, abs=1e-12)


def test_optimistic_consumption_below_boundary(rng):
    d = 3
    est = _random_state(rng, d=d)
    x = rng.random(3)
    radius = 0.8
    theta = rng.dirichlet(np.ones(d + 1))[1:]
    low = optimistic_consumption(est, x, radius) @ theta
    cols = [sample_ellipsoid_boundary(est.W_hat[:, j], est.M, radius, 10_000, rng)
            for j in range(d)]
    sampled = sum(theta[j] * (cols[j] @ x) for j in range(d))
    assert np.all(low <= sampled + 1e-12)


def test_sum_of_norms_bound_value():
    # sqrt(2 * 10 * ln 10)
    assert sum_of_norms_bound(10, 2) == pytest.approx(6.78614042441511180, abs=1e-12)


def test_state_dump(rng):
    payload = _random_state(rng).to_dict()
    assert payload["t_c"] == 40 and len(payload["M"]) == 3
