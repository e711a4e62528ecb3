"""Federated variational-Bayes Gaussian mixtures for univariate columns.

Every continuous column gets one global mixture. Clients never reveal their
values; per round they send per-mode sufficient statistics which the server
sums in a fixed client order:

    round r (per column, per client)
      server -> client   E-step parameters        5T scalars
      client -> server   ClientEStats             2T + 2 scalars
      server -> client   global per-mode means    T scalars
      client -> server   ClientMStats             T scalars
      server -> client   lower bound / stop flag  1 scalar

The server keeps the canonical posterior. Columns are rescaled to [-1, 1]
with a preliminary min/max exchange so the default prior is scale free; the
returned posterior is mapped back to raw units (the VB updates are affine
equivariant, so this is equivalent to a range-scaled prior).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import digamma, gammaln

from . import ledger as L
from .errors import ConfigError, NumericalError

LOG_2PI = math.log(2.0 * math.pi)
EMPTY_MODE = 1e-12


@dataclass(frozen=True)
class GmmPrior:
    """Hyperparameters. ``m0`` and ``w0`` are in range-normalised units."""

    t_max: int = 10
    alpha0: float | None = None
    beta0: float = 1.0
    m0: float = 0.0
    w0: float = 1.0
    nu0: float = 3.0
    conv_eps: float = 1e-4
    max_rounds: int = 1000
    prune_threshold: float = 0.005
    sigma_floor: float = 1e-6
    accelerate: bool = True

    def __post_init__(self):
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if self.alpha0 is None:
            object.__setattr__(self, "alpha0", 1.0 / self.t_max)
        for name in ("alpha0", "beta0", "w0", "nu0", "conv_eps", "sigma_floor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True, eq=False)
class GmmPosterior:
    alpha: np.ndarray
    beta: np.ndarray
    nu: np.ndarray
    m: np.ndarray
    w: np.ndarray
    sigma_floor: float = 1e-6
    rounds: int = 0
    final_elbo: float | None = None
    elbo_history: tuple = field(default=())
    data_range: tuple | None = None

    def __post_init__(self):
        for name in ("alpha", "beta", "nu", "m", "w"):
            arr = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_modes(self) -> int:
        return int(self.alpha.shape[0])

    @property
    def pi(self) -> np.ndarray:
        return self.alpha / self.alpha.sum()

    @property
    def mu(self) -> np.ndarray:
        return self.m

    @property
    def sigma(self) -> np.ndarray:
        return np.maximum((self.nu * self.w) ** -0.5, self.sigma_floor)

    def mixture_moments(self) -> tuple[float, float]:
        """Overall mean and standard deviation of the fitted mixture."""
        pi, mu, sd = self.pi, self.mu, self.sigma
        mean = float(pi @ mu)
        var = float(pi @ (sd**2 + mu**2) - mean**2)
        return mean, math.sqrt(max(var, 0.0))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        modes = rng.choice(self.n_modes, size=n, p=self.pi)
        return self.mu[modes] + self.sigma[modes] * rng.standard_normal(n)

    def rescaled(self, center: float, scale: float) -> "GmmPosterior":
        """Map a posterior fitted on (x - center) / scale back to raw units."""
        return replace(self, m=center + scale * self.m, w=self.w / scale**2)

    def to_dict(self) -> dict:
        pi, sigma = self.pi, self.sigma
        modes = [{"pi": float(pi[t]), "mu": float(self.m[t]), "sigma": float(sigma[t]),
                  "alpha": float(self.alpha[t]), "beta": float(self.beta[t]),
                  "nu": float(self.nu[t]), "w": float(self.w[t])}
                 for t in range(self.n_modes)]
        out = {"modes": modes, "sigma_floor": self.sigma_floor,
               "rounds": self.rounds, "final_elbo": self.final_elbo}
        if self.data_range is not None:
            out["range"] = [float(v) for v in self.data_range]
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "GmmPosterior":
        modes = obj["modes"]
        return cls(alpha=[md["alpha"] for md in modes], beta=[md["beta"] for md in modes],
                   nu=[md["nu"] for md in modes], m=[md["mu"] for md in modes],
                   w=[md["w"] for md in modes], sigma_floor=obj.get("sigma_floor", 1e-6),
                   rounds=obj.get("rounds", 0), final_elbo=obj.get("final_elbo"),
                   data_range=tuple(obj["range"]) if "range" in obj else None)


@dataclass(frozen=True)
class ClientEStats:
    resp_sums: np.ndarray
    weighted_sums: np.ndarray
    resp_log_resp: float = 0.0
    degenerate_rows: int = 0

    @property
    def scalar_count(self) -> int:
        return 2 * len(self.resp_sums) + 2


@dataclass(frozen=True)
class ClientMStats:
    scatter: np.ndarray

    @property
    def scalar_count(self) -> int:
        return len(self.scatter)


@dataclass(frozen=True)
class ElboValue:
    value: float
    round: int


def expected_log_pi(alpha: np.ndarray) -> np.ndarray:
    return digamma(alpha) - digamma(alpha.sum())


def expected_log_lambda(nu: np.ndarray, w: np.ndarray) -> np.ndarray:
    # univariate Wishart (D = 1): E[ln Lambda] = psi(nu / 2) + ln 2 + ln w
    return digamma(nu / 2.0) + math.log(2.0) + np.log(w)


def e_step_params(posterior: GmmPosterior) -> np.ndarray:
    """The 5 x T block the server broadcasts before a client E-step."""
    return np.vstack([expected_log_pi(posterior.alpha),
                      expected_log_lambda(posterior.nu, posterior.w),
                      posterior.beta, posterior.nu * posterior.w, posterior.m])


def _responsibilities(values: np.ndarray, params: np.ndarray
                      ) -> tuple[np.ndarray, int, float]:
    """Responsibilities, degenerate-row count and sum of r ln r in one pass."""
    log_pi, log_lam, beta, prec, m = params
    x = np.asarray(values, dtype=np.float64)[:, None]
    log_rho = (log_pi + 0.5 * log_lam - 0.5 * LOG_2PI - 0.5 / beta) - 0.5 * prec * (x - m) ** 2
    top = log_rho.max(axis=1, keepdims=True)
    bad = ~np.isfinite(top[:, 0])
    if bad.any():
        top[bad] = 0.0
    with np.errstate(invalid="ignore", over="ignore"):
        log_rho -= top
        resp = np.exp(log_rho)
        total = resp.sum(axis=1, keepdims=True)
        resp /= total
        log_rho -= np.log(total)
    bad |= ~np.all(np.isfinite(resp), axis=1)
    if bad.any():
        T = params.shape[1]
        resp[bad] = 1.0 / T
        log_rho[bad] = -math.log(T)
    positive = resp > 0
    rlr = float(np.sum(resp[positive] * log_rho[positive]))
    return resp, int(bad.sum()), rlr


def responsibilities_from_params(values: np.ndarray, params: np.ndarray
                                 ) -> tuple[np.ndarray, int]:
    resp, bad, _ = _responsibilities(values, params)
    return resp, bad


def responsibilities(values: np.ndarray, posterior: GmmPosterior) -> tuple[np.ndarray, int]:
    """Per-row responsibilities (rows sum to 1) and the count of degenerate rows."""
    return responsibilities_from_params(values, e_step_params(posterior))


def e_step_local(values: np.ndarray, posterior: GmmPosterior,
                 resp: np.ndarray | None = None) -> ClientEStats:
    values = np.asarray(values, dtype=np.float64)
    degenerate = 0
    if resp is None:
        resp, degenerate = responsibilities(values, posterior)
    return _summarize_e(values, resp, degenerate)


def _summarize_e(values: np.ndarray, resp: np.ndarray, degenerate: int) -> ClientEStats:
    positive = resp > 0
    rlr = float(np.sum(resp[positive] * np.log(resp[positive])))
    return ClientEStats(resp_sums=resp.sum(axis=0), weighted_sums=resp.T @ values,
                        resp_log_resp=rlr, degenerate_rows=degenerate)


def aggregate_e(stats: Sequence[ClientEStats], m0: float = 0.0
                ) -> tuple[np.ndarray, np.ndarray]:
    """Global per-mode mass N_t and mean x̄_t. Empty modes fall back to ``m0``."""
    if not stats:
        raise ValueError("no client statistics to aggregate")
    n_t = np.zeros_like(stats[0].resp_sums, dtype=np.float64)
    s_t = np.zeros_like(n_t)
    for s in stats:
        n_t = n_t + s.resp_sums
        s_t = s_t + s.weighted_sums
    empty = n_t < EMPTY_MODE
    xbar = np.where(empty, m0, s_t / np.where(empty, 1.0, n_t))
    return n_t, xbar


def conjugate_update(n_t: np.ndarray, xbar: np.ndarray, prior: GmmPrior):
    alpha = prior.alpha0 + n_t
    beta = prior.beta0 + n_t
    nu = prior.nu0 + n_t
    m = (prior.beta0 * prior.m0 + n_t * xbar) / beta
    return alpha, beta, nu, m


def m_step_local(n_t: np.ndarray, xbar: np.ndarray, values: np.ndarray, resp: np.ndarray,
                 prior: GmmPrior):
    """Client M-step: updated (alpha, beta, nu, m) and the local per-mode scatter."""
    values = np.asarray(values, dtype=np.float64)
    scatter = np.sum(resp * (values[:, None] - xbar) ** 2, axis=0)
    return conjugate_update(n_t, xbar, prior), ClientMStats(scatter=scatter)


def aggregate_m(stats: Sequence[ClientMStats], n_t: np.ndarray,
                prior: GmmPrior | None = None) -> np.ndarray:
    """Global per-mode variance S_t; empty modes get the prior scale 1 / w0."""
    w0 = prior.w0 if prior is not None else 1.0
    total = np.zeros_like(n_t, dtype=np.float64)
    for s in stats:
        if len(s.scatter) != len(n_t):
            raise ValueError("mode count mismatch between clients")
        total = total + s.scatter
    empty = n_t < EMPTY_MODE
    return np.where(empty, 1.0 / w0, total / np.where(empty, 1.0, n_t))


def update_w(n_t, xbar, s_t, prior: GmmPrior) -> np.ndarray:
    w_inv = (1.0 / prior.w0
             + prior.beta0 * n_t / (prior.beta0 + n_t) * (xbar - prior.m0) ** 2
             + n_t * s_t)
    if np.any(~(w_inv > 0)):
        raise NumericalError("non-positive Wishart scale; check the prior")
    return 1.0 / w_inv


def _log_wishart_norm(w: np.ndarray | float, nu: np.ndarray | float):
    # ln B(W, nu) for a 1x1 Wishart
    return -0.5 * nu * np.log(w) - 0.5 * nu * math.log(2.0) - gammaln(nu / 2.0)


def lower_bound(posterior: GmmPosterior, n_t, xbar, s_t, resp_log_resp: float,
                prior: GmmPrior) -> float:
    """Standard variational lower bound for a univariate Bayesian GMM."""
    alpha, beta, nu, m, w = (posterior.alpha, posterior.beta, posterior.nu,
                             posterior.m, posterior.w)
    T = len(alpha)
    e_lp = expected_log_pi(alpha)
    e_ll = expected_log_lambda(nu, w)
    a0, b0, m0, w0, nu0 = prior.alpha0, prior.beta0, prior.m0, prior.w0, prior.nu0

    log_px = 0.5 * np.sum(n_t * (e_ll - 1.0 / beta - nu * w * s_t
                                 - nu * w * (xbar - m) ** 2 - LOG_2PI))
    log_pz = np.sum(n_t * e_lp)
    log_ppi = gammaln(T * a0) - T * gammaln(a0) + (a0 - 1.0) * e_lp.sum()
    log_pmul = (0.5 * np.sum(math.log(b0 / (2 * math.pi)) + e_ll - b0 / beta
                             - b0 * nu * w * (m - m0) ** 2)
                + T * _log_wishart_norm(w0, nu0)
                + 0.5 * (nu0 - 2.0) * e_ll.sum()
                - 0.5 * np.sum(nu * w / w0))
    log_qpi = np.sum((alpha - 1.0) * e_lp) + gammaln(alpha.sum()) - gammaln(alpha).sum()
    entropy_lam = -_log_wishart_norm(w, nu) - 0.5 * (nu - 2.0) * e_ll + 0.5 * nu
    log_qmul = np.sum(0.5 * e_ll + 0.5 * np.log(beta / (2 * math.pi)) - 0.5 - entropy_lam)
    value = log_px + log_pz + log_ppi + log_pmul - resp_log_resp - log_qpi - log_qmul
    return float(value)


def finalize_round(posterior: GmmPosterior, n_t, xbar, s_t, prior: GmmPrior,
                   resp_log_resp: float = 0.0, round_no: int = 0
                   ) -> tuple[GmmPosterior, ElboValue]:
    """Close one round: conjugate updates, Wishart scale, and the lower bound."""
    alpha, beta, nu, m = conjugate_update(n_t, xbar, prior)
    w = update_w(n_t, xbar, s_t, prior)
    new = replace(posterior, alpha=alpha, beta=beta, nu=nu, m=m, w=w, rounds=round_no)
    value = lower_bound(new, n_t, xbar, s_t, resp_log_resp, prior)
    if not math.isfinite(value):
        raise NumericalError(f"lower bound is not finite in round {round_no}")
    return new, ElboValue(value, round_no)


def initial_posterior(prior: GmmPrior) -> GmmPosterior:
    """Means evenly spaced over the normalised range [-1, 1]."""
    T = prior.t_max
    m = -1.0 + (2.0 * np.arange(T) + 1.0) / T
    ones = np.ones(T)
    return GmmPosterior(alpha=prior.alpha0 * ones, beta=prior.beta0 * ones,
                        nu=prior.nu0 * ones, m=m, w=prior.w0 * ones,
                        sigma_floor=prior.sigma_floor)


def prune(posterior: GmmPosterior, threshold: float) -> GmmPosterior:
    keep = posterior.pi >= threshold
    if not keep.any():
        keep = posterior.pi == posterior.pi.max()
    return replace(posterior, alpha=posterior.alpha[keep], beta=posterior.beta[keep],
                   nu=posterior.nu[keep], m=posterior.m[keep], w=posterior.w[keep])


class GmmColumnClient:
    """Client-side state for one column. Holds the raw values; exposes statistics only."""

    def __init__(self, values: np.ndarray):
        self._values = np.asarray(values, dtype=np.float64)
        self._scaled = None
        self._resp = None

    def __len__(self):
        return self._values.shape[0]

    def local_range(self) -> tuple[float, float]:
        return float(self._values.min()), float(self._values.max())

    def set_scaling(self, center: float, scale: float) -> None:
        self._scaled = (self._values - center) / scale

    def e_step(self, params: np.ndarray) -> ClientEStats:
        resp, degenerate, rlr = _responsibilities(self._scaled, params)
        self._resp = resp
        return ClientEStats(resp_sums=resp.sum(axis=0), weighted_sums=self._scaled @ resp,
                            resp_log_resp=rlr, degenerate_rows=degenerate)

    def m_step(self, xbar: np.ndarray) -> ClientMStats:
        d = self._scaled[:, None] - xbar
        d *= d
        return ClientMStats(scatter=np.einsum("nt,nt->t", self._resp, d))


def _to_moments(n_t, xbar, s_t) -> np.ndarray:
    return np.concatenate([n_t, n_t * xbar, n_t * (s_t + xbar**2)])


def _from_moments(u: np.ndarray, prior: GmmPrior):
    T = u.shape[0] // 3
    s0 = np.maximum(u[:T], 0.0)
    empty = s0 < EMPTY_MODE
    safe = np.where(empty, 1.0, s0)
    xbar = np.where(empty, prior.m0, u[T:2 * T] / safe)
    var = np.where(empty, 1.0 / prior.w0, np.maximum(u[2 * T:] / safe - xbar**2, 0.0))
    return s0, xbar, var


def squarem_step(u0: np.ndarray, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Squared-extrapolation proposal from three successive statistic vectors."""
    r = u1 - u0
    v = u2 - 2.0 * u1 + u0
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return u2
    a = min(-np.linalg.norm(r) / nv, -1.0)
    return u0 - 2.0 * a * r + a * a * v


def run_gmm_protocol(clients: Sequence[GmmColumnClient], prior: GmmPrior,
                     ledger: L.CommLedger | None = None,
                     client_ids: Sequence[int] | None = None) -> GmmPosterior:
    """Server side of the federated fit for one column.

    With ``prior.accelerate`` every third round starts from a squared
    extrapolation of the aggregated moments (sum r, sum r x, sum r x^2).
    The extrapolated state is kept only if its lower bound beats the plain
    two-step state, so the recorded bound stays nondecreasing.
    """
    if not clients:
        raise ValueError("need at least one client")
    ids = list(client_ids) if client_ids is not None else list(range(len(clients)))
    phase = [L.GMM_INIT]

    def log(direction, count):
        if ledger is not None:
            for cid in ids:
                ledger.record(phase[0], direction, cid, count)

    ranges = [c.local_range() for c in clients]
    log(L.UPLOAD, 2)
    lo = min(r[0] for r in ranges)
    hi = max(r[1] for r in ranges)
    center, scale = 0.5 * (lo + hi), 0.5 * (hi - lo)
    if scale < prior.sigma_floor:
        # constant column: one mode pinned at the value with the floor spread
        nu = np.array([prior.nu0])
        return GmmPosterior(alpha=[1.0], beta=[prior.beta0], nu=nu, m=[center],
                            w=1.0 / (nu * prior.sigma_floor**2), sigma_floor=prior.sigma_floor,
                            data_range=(lo, hi))
    for c in clients:
        c.set_scaling(center, scale)
    log(L.DOWNLOAD, 2)
    phase[0] = L.GMM_ROUND

    T = prior.t_max
    rounds = 0

    def one_round(post: GmmPosterior):
        nonlocal rounds
        rounds += 1
        params = e_step_params(post)
        log(L.DOWNLOAD, 5 * T)
        e_stats = [c.e_step(params) for c in clients]
        log(L.UPLOAD, 2 * T + 2)
        n_t, xbar = aggregate_e(e_stats, prior.m0)
        rlr = sum(s.resp_log_resp for s in e_stats)
        log(L.DOWNLOAD, T)
        m_stats = [c.m_step(xbar) for c in clients]
        log(L.UPLOAD, T)
        s_t = aggregate_m(m_stats, n_t, prior)
        new, elbo = finalize_round(post, n_t, xbar, s_t, prior, rlr, rounds)
        log(L.DOWNLOAD, 1)
        return new, elbo.value, _to_moments(n_t, xbar, s_t)

    def budget_left():
        return rounds < prior.max_rounds

    post, bound, u = one_round(initial_posterior(prior))
    history = [bound]
    while budget_left():
        post2, bound2, u2 = one_round(post)
        history.append(bound2)
        if abs(bound2 - bound) < prior.conv_eps:
            post, bound = post2, bound2
            break
        if not (prior.accelerate and budget_left()):
            post, bound, u = post2, bound2, u2
            continue
        post3, bound3, u3 = one_round(post2)
        history.append(bound3)
        proposal = squarem_step(u, u2, u3)
        post, bound, u = post3, bound3, u3
        if budget_left():
            n_t, xbar, s_t = _from_moments(proposal, prior)
            jump, _ = finalize_round(post3, n_t, xbar, s_t, prior)
            post4, bound4, u4 = one_round(jump)
            if bound4 >= bound3:
                post, bound, u = post4, bound4, u4
                history.append(bound4)

    post = prune(post, prior.prune_threshold)
    post = replace(post, rounds=rounds, final_elbo=history[-1], elbo_history=tuple(history),
                   data_range=(lo, hi))
    return post.rescaled(center, scale)


def fit_federated_gmm(shards: Sequence[np.ndarray], prior: GmmPrior | None = None,
                      seed: int = 0, ledger: L.CommLedger | None = None,
                      client_ids: Sequence[int] | None = None) -> GmmPosterior:
    """Fit one global mixture to a column split across ``shards``.

    The initialisation is deterministic (evenly spaced means), so ``seed`` is
    accepted for interface symmetry and does not change the result.
    """
    prior = prior or GmmPrior()
    pairs = [(i, np.asarray(s, dtype=np.float64)) for i, s in enumerate(shards)]
    pairs = [(i, s) for i, s in pairs if s.size]
    if not pairs:
        raise ValueError("all shards are empty")
    ids = [client_ids[i] for i, _ in pairs] if client_ids is not None else [i for i, _ in pairs]
    clients = [GmmColumnClient(s) for _, s in pairs]
    return run_gmm_protocol(clients, prior, ledger, ids)
