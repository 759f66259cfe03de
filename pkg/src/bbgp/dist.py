"""Probability mass functions and closed-form moments of the hierarchy

    X | N, pi ~ binomial(N, pi)          pi  ~ beta(mu/theta, (1-mu)/theta)
    N | tau   ~ Poisson(lam * tau)       tau ~ gamma(shape alpha/delta, scale delta)

Product forms are the evaluation path. The log-gamma forms are kept for
cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .kernels import ragged_sums
from .model import DomainError, NaturalParams

_TABLE_CAP = 1 << 16
_log_fact = np.zeros(1)


def log_factorial(n):
    """``log(n!)`` from a cumulative-log table, log-gamma past the table cap."""
    global _log_fact
    n = np.asarray(n)
    if np.any(n < 0):
        raise DomainError("factorial of a negative number")
    top = int(n.max(initial=0))
    if top >= _log_fact.size and top < _TABLE_CAP:
        size = min(max(2 * top, 256), _TABLE_CAP)
        _log_fact = np.concatenate([[0.0], np.cumsum(np.log(np.arange(1, size)))])
    if top < _log_fact.size:
        return _log_fact[n.astype(np.int64)]
    return gammaln(n + 1.0)


def log_binom_coef(n, x):
    return log_factorial(n) - log_factorial(x) - log_factorial(np.asarray(n) - x)


def _check_bb(x, n, mu, theta):
    x, n = np.asarray(x), np.asarray(n)
    if np.any(x < 0) or np.any(x > n):
        raise DomainError("beta-binomial requires 0 <= x <= n")
    mu, theta = np.asarray(mu, dtype=float), np.asarray(theta, dtype=float)
    if np.any(~(mu > 0) | ~(mu < 1)):
        raise DomainError("mu must lie in (0, 1)")
    if np.any(~(theta > 0)):
        raise DomainError("theta must be positive")
    return x, n, mu, theta


def _scalar_if(arr, *inputs):
    return float(arr) if all(np.ndim(a) == 0 for a in inputs) else arr


def beta_binomial_log_pmf(x, n, mu, theta, one_minus_mu=None):
    """Log beta-binomial mass in product form.

    ``log C(n,x) + sum_v log(mu+v*theta) + sum_w log(1-mu+w*theta) - sum_u log(1+u*theta)``
    with ``v < x``, ``w < n-x``, ``u < n``. Vectorises over broadcastable inputs.
    """
    x, n, mu, theta = _check_bb(x, n, mu, theta)
    xb, nb, mb, tb = np.broadcast_arrays(x, n, mu, theta)
    shape = xb.shape
    xb, nb, mb, tb = (a.ravel() for a in (xb, nb, mb, tb))
    omm = 1.0 - mb if one_minus_mu is None else np.broadcast_to(one_minus_mu, shape).ravel()
    out = (ragged_sums(mb, tb, xb, order=0)[:, 0]
           + ragged_sums(omm, tb, nb - xb, order=0)[:, 0]
           - ragged_sums(np.ones_like(tb), tb, nb, order=0)[:, 0]
           + log_binom_coef(nb, xb))
    return _scalar_if(out.reshape(shape), x, n, mu, theta)


def beta_binomial_log_pmf_gamma_form(x, n, mu, theta):
    """Log beta-binomial mass written with gamma-function ratios.

    A ratio whose shift is zero (``n=0``, ``x=0`` or ``x=n``) is one and is
    skipped rather than evaluated.
    """
    x, n, mu, theta = _check_bb(x, n, mu, theta)
    x, n, mu, theta = np.broadcast_arrays(x, n, mu, theta)
    a, b, s = mu / theta, (1.0 - mu) / theta, 1.0 / theta
    out = log_binom_coef(n, x).astype(float)
    out = out + np.where(n > 0, gammaln(s) - gammaln(s + n), 0.0)
    out = out + np.where(x > 0, gammaln(a + x) - gammaln(a), 0.0)
    out = out + np.where(n - x > 0, gammaln(b + n - x) - gammaln(b), 0.0)
    return _scalar_if(out, x, n, mu, theta)


def _check_gp(n_vec, lam_vec, alpha, delta):
    n_vec = np.asarray(n_vec)
    lam_vec = np.asarray(lam_vec, dtype=float)
    if n_vec.shape[-1:] != lam_vec.shape[-1:]:
        raise DomainError(f"count vector length {n_vec.shape[-1:]} != rate vector length {lam_vec.shape[-1:]}")
    if np.any(n_vec < 0):
        raise DomainError("counts must be nonnegative")
    if np.any(~(lam_vec > 0)) or np.any(~(np.asarray(alpha) > 0)) or np.any(~(np.asarray(delta) > 0)):
        raise DomainError("lambda, alpha and delta must be positive")
    return n_vec, lam_vec, np.asarray(alpha, dtype=float), np.asarray(delta, dtype=float)


def gamma_poisson_log_pmf(n_vec, lam_vec, alpha, delta):
    """Joint log mass of ``(N_1, ..., N_p)`` sharing one gamma unit effect.

    ``sum_h [n_h log lam_h - log n_h!] + sum_{u<S} log(alpha + u*delta)
    - (S + alpha/delta) log(delta * sum_h lam_h + 1)`` with ``S = sum_h n_h``.
    The last axis indexes conditions; leading axes broadcast.
    """
    n_vec, lam_vec, alpha, delta = _check_gp(n_vec, lam_vec, alpha, delta)
    nb, lb = np.broadcast_arrays(n_vec, lam_vec)
    S = nb.sum(axis=-1)
    alpha, delta = np.broadcast_to(alpha, S.shape), np.broadcast_to(delta, S.shape)
    rising = ragged_sums(alpha.ravel(), delta.ravel(), S.ravel(), order=0)[:, 0].reshape(S.shape)
    out = ((nb * np.log(lb) - log_factorial(nb)).sum(axis=-1) + rising
           - (S + alpha / delta) * np.log1p(delta * lb.sum(axis=-1)))
    return _scalar_if(out, S)


def gamma_poisson_log_pmf_gamma_form(n_vec, lam_vec, alpha, delta):
    """Same mass through ``Gamma(S + alpha/delta) / Gamma(alpha/delta)``."""
    n_vec, lam_vec, alpha, delta = _check_gp(n_vec, lam_vec, alpha, delta)
    nb, lb = np.broadcast_arrays(n_vec, lam_vec)
    S = nb.sum(axis=-1)
    k = alpha / delta
    out = ((nb * np.log(lb) - log_factorial(nb)).sum(axis=-1)
           - k * np.log(delta)
           + np.where(S > 0, gammaln(S + k) - gammaln(k), 0.0)
           - (S + k) * np.log(lb.sum(axis=-1) + 1.0 / delta))
    return _scalar_if(out, S)


@dataclass(frozen=True)
class MomentSet:
    """First and second moments of the hierarchy.

    Per-unit: ``e_tau, var_tau`` (M,), ``cov_n, cov_x, cov_xn`` (M, p, p).
    Per-observation, shaped (M, p): ``e_n, var_n, e_pi, var_pi, e_x, var_x``
    and ``cov_xn_same`` (the diagonal of ``cov_xn``).

    ``cov_xn[g, h, k]`` is Cov(X_gh, N_gk).
    """

    e_tau: np.ndarray
    var_tau: np.ndarray
    e_n: np.ndarray
    var_n: np.ndarray
    cov_n: np.ndarray
    e_pi: np.ndarray
    var_pi: np.ndarray
    e_x: np.ndarray
    var_x: np.ndarray
    cov_x: np.ndarray
    cov_xn: np.ndarray
    cov_xn_same: np.ndarray

    def joint_covariance(self, g):
        """Covariance of ``(X_g1, N_g1, ..., X_gp, N_gp)`` as a 2p x 2p matrix."""
        p = self.e_n.shape[1]
        out = np.empty((2 * p, 2 * p))
        out[0::2, 0::2] = self.cov_x[g]
        out[1::2, 1::2] = self.cov_n[g]
        out[0::2, 1::2] = self.cov_xn[g]
        out[1::2, 0::2] = self.cov_xn[g].T
        return out


def compute_moments(natural: NaturalParams) -> MomentSet:
    """Closed-form moments; ``theta = 0`` and ``delta = 0`` are accepted."""
    M, p = natural.M, natural.p
    mu = natural.mu.reshape(M, p)
    theta = natural.theta.reshape(M, p)
    lam = natural.lam.reshape(M, p)
    alpha, delta = natural.alpha, natural.delta
    if np.any(theta < 0) or np.any(delta < 0) or np.any(lam <= 0) or np.any(alpha <= 0):
        raise DomainError("moments need theta, delta >= 0 and lambda, alpha > 0")
    a, d = alpha[:, None], delta[:, None]

    e_n = lam * a
    var_n = lam * a * (1.0 + lam * d)
    cov_n = lam[:, :, None] * lam[:, None, :] * (alpha * delta)[:, None, None]
    idx = np.arange(p)
    cov_n[:, idx, idx] = var_n

    rho = theta / (1.0 + theta)
    var_pi = mu * (1.0 - mu) * rho
    e_x = mu * lam * a
    var_x = var_pi * lam ** 2 * a * (a + d) + mu * lam * a * (1.0 + mu * lam * d)
    ml = mu * lam
    cov_x = ml[:, :, None] * ml[:, None, :] * (alpha * delta)[:, None, None]
    cov_x[:, idx, idx] = var_x

    cov_xn_same = mu * lam * a * (1.0 + lam * d)
    # off-diagonal: Cov(mu_h N_h, N_k) = mu_h lam_h lam_k alpha delta
    cov_xn = ml[:, :, None] * lam[:, None, :] * (alpha * delta)[:, None, None]
    cov_xn[:, idx, idx] = cov_xn_same

    return MomentSet(
        e_tau=alpha.copy(), var_tau=alpha * delta,
        e_n=e_n, var_n=var_n, cov_n=cov_n,
        e_pi=mu.copy(), var_pi=var_pi,
        e_x=e_x, var_x=var_x, cov_x=cov_x,
        cov_xn=cov_xn, cov_xn_same=cov_xn_same,
    )
