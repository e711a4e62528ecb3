from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedtab.covariance import (EIG_FLOOR, DpParams, GlobalCovariance, add_dp_noise,
                               aggregate_covariance, gaussian_sigma, local_moments,
                               psd_cholesky)
from fedtab.errors import ConfigError, ContractError, ProtocolError


def test_single_row_moments():
    x = np.array([[1.0, -2.0, 0.5]])
    mo = local_moments(x)
    np.testing.assert_array_equal(mo.mean, x[0])
    np.testing.assert_array_equal(mo.second_moment, x.T @ x)
    assert mo.count == 1


def test_two_row_hand_example():
    mo = local_moments(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    np.testing.assert_array_equal(mo.mean, [0.0, 0.0])
    np.testing.assert_array_equal(mo.second_moment, [[1.0, 0.0], [0.0, 0.0]])


def test_all_zero_matrix_and_empty_matrix():
    mo = local_moments(np.zeros((4, 3)))
    assert not mo.mean.any() and not mo.second_moment.any()
    with pytest.raises(ValueError):
        local_moments(np.zeros((0, 3)))


def test_scalar_count_is_l_times_l_plus_one():
    assert local_moments(np.zeros((2, 19))).scalar_count == 19 * 20


def test_single_client_equals_centralized():
    x = np.random.default_rng(0).normal(size=(40, 5))
    cov = aggregate_covariance([local_moments(x)], clamp=False)
    np.testing.assert_allclose(cov.sigma, np.cov(x, rowvar=False, bias=True), rtol=0, atol=1e-12)


def test_two_clients_equal_pooled():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(50, 6)), rng.normal(1.0, 2.0, size=(50, 6))
    fed = aggregate_covariance([local_moments(a), local_moments(b)], clamp=False)
    pooled = np.cov(np.vstack([a, b]), rowvar=False, bias=True)
    np.testing.assert_allclose(fed.sigma, pooled, rtol=1e-9)


def test_constant_rows_give_zero_covariance():
    x = np.tile([0.3, -1.2, 0.7], (20, 1))
    cov = aggregate_covariance([local_moments(x[:8]), local_moments(x[8:])])
    np.testing.assert_allclose(cov.sigma, 0.0, atol=1e-15)


def test_mismatched_width_is_a_protocol_error():
    with pytest.raises(ProtocolError):
        aggregate_covariance([local_moments(np.ones((2, 3))), local_moments(np.ones((2, 4)))])
    with pytest.raises(ProtocolError):
        aggregate_covariance([])


def test_clamping_counts_entries_outside_unit_box():
    x = np.random.default_rng(2).normal(0, 3, size=(200, 3))
    cov = aggregate_covariance([local_moments(x)])
    assert cov.clamped and cov.clamp_count >= 3
    assert np.abs(cov.sigma).max() <= 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_any_sharding_matches_pooled(k, width, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(12 * k, width))
    cuts = np.sort(rng.choice(np.arange(1, x.shape[0]), size=k - 1, replace=False))
    shards = np.split(x, cuts)
    fed = aggregate_covariance([local_moments(s) for s in shards], clamp=False)
    pooled = np.cov(x, rowvar=False, bias=True).reshape(width, width)
    np.testing.assert_allclose(fed.sigma, pooled, rtol=1e-9, atol=1e-12)
    np.testing.assert_array_equal(fed.sigma, fed.sigma.T)


def test_gaussian_sigma_matches_high_precision():
    expected = float(2 * mpmath.sqrt(2 * mpmath.log(mpmath.mpf(1.25) / mpmath.mpf("1e-4"))))
    got = gaussian_sigma(1.0, 1e-4, 2.0)
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(8.6872, abs=1e-3)


def test_gaussian_sigma_scaling_and_limits():
    assert gaussian_sigma(2.0, 1e-4) == pytest.approx(gaussian_sigma(1.0, 1e-4) / 2)
    assert gaussian_sigma(math.inf, 1e-4) == 0.0
    for eps in (0.0, -1.0):
        with pytest.raises(ConfigError):
            gaussian_sigma(eps, 1e-4)
    with pytest.raises(ConfigError):
        DpParams(epsilon=1.0, delta=1.5)


def test_infinite_budget_is_identity():
    sigma = np.eye(3) * 0.5
    out = add_dp_noise(GlobalCovariance(sigma), DpParams())
    np.testing.assert_array_equal(out.sigma, sigma)
    assert out.dp == DpParams()


def test_noise_is_symmetric_and_calibrated():
    dp = DpParams(epsilon=1.0, delta=1e-4, seed=3)
    l = 141  # 141 * 142 / 2 = 10011 independent draws
    out = add_dp_noise(GlobalCovariance(np.zeros((l, l))), dp)
    np.testing.assert_array_equal(out.sigma, out.sigma.T)
    draws = out.sigma[np.triu_indices(l)]
    assert draws.size >= 10_000
    assert abs(draws.std() / dp.noise_sigma - 1) < 0.02


def test_noise_is_seeded():
    base = GlobalCovariance(np.zeros((4, 4)))
    a = add_dp_noise(base, DpParams(epsilon=2.0, seed=7)).sigma
    b = add_dp_noise(base, DpParams(epsilon=2.0, seed=7)).sigma
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, add_dp_noise(base, DpParams(epsilon=2.0, seed=8)).sigma)


def test_identity_factor():
    chol = psd_cholesky(np.eye(4))
    np.testing.assert_array_equal(chol.u, np.eye(4))
    assert chol.repair_shift == 0.0


def test_hand_cholesky():
    chol = psd_cholesky(np.array([[4.0, 2.0], [2.0, 5.0]]))
    np.testing.assert_allclose(chol.u, [[2.0, 0.0], [1.0, 2.0]], atol=1e-15)


def test_negative_eigenvalue_is_repaired():
    q, _ = np.linalg.qr(np.random.default_rng(4).normal(size=(3, 3)))
    sigma = (q * np.array([1.0, 0.5, -0.3])) @ q.T
    sigma = 0.5 * (sigma + sigma.T)
    chol = psd_cholesky(sigma)
    assert chol.repair_shift >= 0.3
    np.testing.assert_allclose(chol.u @ chol.u.T, chol.repaired, atol=1e-9)
    assert np.linalg.eigvalsh(chol.repaired).min() >= EIG_FLOOR * 0.5
    # eigenvectors are kept, only the negative eigenvalue moves
    np.testing.assert_allclose(chol.repaired, (q * np.array([1.0, 0.5, EIG_FLOOR])) @ q.T,
                               atol=1e-9)


def test_non_symmetric_input_is_a_contract_error():
    with pytest.raises(ContractError):
        psd_cholesky(np.array([[1.0, 0.2], [0.0, 1.0]]))
    with pytest.raises(ContractError):
        psd_cholesky(np.ones((2, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.floats(0.0, 20.0), st.integers(0, 2**32 - 1))
def test_factor_reconstructs_repaired_matrix(l, scale, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(l, l))
    sigma = a @ a.T / l
    noisy = add_dp_noise(GlobalCovariance(sigma), DpParams(epsilon=1.0, seed=seed)).sigma
    noisy = sigma + scale / 8.6872 * (noisy - sigma)
    chol = psd_cholesky(noisy)
    assert np.allclose(chol.u, np.tril(chol.u))
    np.testing.assert_allclose(chol.u @ chol.u.T, chol.repaired, atol=1e-9)
    assert chol.repair_shift >= 0.0
