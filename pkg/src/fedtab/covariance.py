"""Global covariance of encoded rows from per-client moments, DP noise and factorisation."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, ProtocolError

SENSITIVITY = 2.0
SYMMETRY_TOL = 1e-12
EIG_FLOOR = 1e-9
JITTER = 1e-12


@dataclass(frozen=True, eq=False)
class LocalMoments:
    mean: np.ndarray
    second_moment: np.ndarray
    count: int

    @property
    def width(self) -> int:
        return int(self.mean.shape[0])

    @property
    def scalar_count(self) -> int:
        l = self.width
        return l * (l + 1)


@dataclass(frozen=True)
class DpParams:
    epsilon: float = math.inf
    delta: float = 1e-4
    sensitivity: float = SENSITIVITY
    seed: int = 0

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def noise_sigma(self) -> float:
        return gaussian_sigma(self.epsilon, self.delta, self.sensitivity)

    def to_dict(self) -> dict:
        eps = None if math.isinf(self.epsilon) else self.epsilon
        return {"epsilon": eps, "delta": self.delta, "sensitivity": self.sensitivity,
                "noise_sigma": self.noise_sigma, "seed": self.seed}


@dataclass(frozen=True, eq=False)
class GlobalCovariance:
    sigma: np.ndarray
    clamped: bool = False
    clamp_count: int = 0
    dp: DpParams | None = None


@dataclass(frozen=True, eq=False)
class CholFactor:
    u: np.ndarray
    repaired: np.ndarray
    repair_shift: float = 0.0


def local_moments(encoded: np.ndarray) -> LocalMoments:
    x = np.asarray(encoded, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("local moments need a non-empty 2-D matrix")
    n = x.shape[0]
    second = x.T @ x / n
    second = 0.5 * (second + second.T)
    return LocalMoments(mean=x.mean(axis=0), second_moment=second, count=n)


def aggregate_covariance(moments: Sequence[LocalMoments], clamp: bool = True
                         ) -> GlobalCovariance:
    """Pool client moments into the population covariance, weighting by N_k / N."""
    if not moments:
        raise ProtocolError("no client moments to aggregate")
    l = moments[0].width
    for mo in moments:
        if mo.width != l or mo.second_moment.shape != (l, l):
            raise ProtocolError(f"client moments have width {mo.width}, expected {l}")
    total = sum(mo.count for mo in moments)
    mean = np.zeros(l)
    second = np.zeros((l, l))
    for mo in moments:
        w = mo.count / total
        mean += w * mo.mean
        second += w * mo.second_moment
    sigma = second - np.outer(mean, mean)
    sigma = 0.5 * (sigma + sigma.T)
    clamp_count = 0
    if clamp:
        outside = np.abs(sigma) > 1.0
        clamp_count = int(outside.sum())
        if clamp_count:
            sigma = np.clip(sigma, -1.0, 1.0)
    return GlobalCovariance(sigma, clamped=clamp_count > 0, clamp_count=clamp_count)


def gaussian_sigma(epsilon: float, delta: float, sensitivity: float = SENSITIVITY) -> float:
    """Gaussian-mechanism noise scale; zero for an infinite budget."""
    if math.isinf(epsilon) and epsilon > 0:
        return 0.0
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def add_dp_noise(cov: GlobalCovariance, dp: DpParams) -> GlobalCovariance:
    """Add N(0, s^2) to the upper triangle (diagonal included) and mirror it."""
    s = dp.noise_sigma
    if s == 0.0:
        return replace(cov, dp=dp)
    l = cov.sigma.shape[0]
    rng = np.random.default_rng(dp.seed)
    noise = np.triu(rng.normal(0.0, s, size=(l, l)))
    noise = noise + np.triu(noise, 1).T
    return replace(cov, sigma=cov.sigma + noise, dp=dp)


def psd_cholesky(sigma: np.ndarray) -> CholFactor:
    """Lower-triangular U with U U^T equal to ``sigma`` or its PSD repair.

    Tries a plain factorisation, then one with a 1e-12 diagonal jitter, and
    finally clips eigenvalues below 1e-9 up to 1e-9 before factorising.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ContractError(f"covariance must be square, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=SYMMETRY_TOL):
        raise ContractError("covariance is not symmetric")
    l = sigma.shape[0]
    if l == 0:
        return CholFactor(np.zeros((0, 0)), np.zeros((0, 0)))
    sigma = 0.5 * (sigma + sigma.T)
    for shift in (0.0, JITTER):
        target = sigma + shift * np.eye(l)
        try:
            return CholFactor(np.linalg.cholesky(target), target, shift)
        except np.linalg.LinAlgError:
            pass
    vals, vecs = np.linalg.eigh(sigma)
    clip = float(max(EIG_FLOOR - vals.min(), 0.0))
    repaired = (vecs * np.maximum(vals, EIG_FLOOR)) @ vecs.T
    repaired = 0.5 * (repaired + repaired.T)
    try:
        u = np.linalg.cholesky(repaired)
    except np.linalg.LinAlgError:
        repaired = repaired + JITTER * np.eye(l)
        u = np.linalg.cholesky(repaired)
    return CholFactor(u, repaired, clip)
