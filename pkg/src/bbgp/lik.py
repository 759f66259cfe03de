"""Log-likelihood kernels, scores and Hessians for both model components.

Everything is accumulated per observation or per unit; the block-diagonal
and Kronecker-structured matrices of the matrix formulation are never
formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dist import log_binom_coef, log_factorial
from .kernels import INV, INV2, LOG, U2_INV2, U_INV, U_INV2, ragged_sums
from .model import DesignSet, ParamVector, RepeatedCountData, evaluate_links


# ---------------------------------------------------------------------------
# beta-binomial component: coefficients (beta_mu, beta_theta)
# ---------------------------------------------------------------------------

def _bb_sums(nat, data, order):
    x = data.x.ravel()
    n = data.n.ravel()
    theta = nat.theta
    V = ragged_sums(nat.mu, theta, x, order)
    W = ragged_sums(nat.one_minus_mu, theta, n - x, order)
    U = ragged_sums(np.ones_like(theta), theta, n, order)
    return V, W, U


def _bb_terms(params, data, designs, order):
    designs.check_data(data)
    nat = evaluate_links(params, designs)
    V, W, U = _bb_sums(nat, data, order)
    out = {"loglik": float(np.sum(V[:, LOG] + W[:, LOG] - U[:, LOG]))}
    if order == 0:
        return out
    mu, omm, theta = nat.mu, nat.one_minus_mu, nat.theta
    m1 = mu * omm
    # derivatives of the per-observation kernel in (mu, theta)
    s_mu = V[:, INV] - W[:, INV]
    s_th = V[:, U_INV] + W[:, U_INV] - U[:, U_INV]
    Zm, Zt = designs.mu, designs.theta
    out["score"] = np.concatenate([Zm.T @ (m1 * s_mu), Zt.T @ (theta * s_th)])
    if order == 1:
        return out
    l_mm = -(V[:, INV2] + W[:, INV2])
    l_mt = -V[:, U_INV2] + W[:, U_INV2]
    l_tt = -V[:, U2_INV2] - W[:, U2_INV2] + U[:, U2_INV2]
    w_mm = m1 * m1 * l_mm + m1 * (omm - mu) * s_mu
    w_mt = m1 * theta * l_mt
    w_tt = theta * theta * l_tt + theta * s_th
    H_mm = Zm.T @ (w_mm[:, None] * Zm)
    H_mt = Zm.T @ (w_mt[:, None] * Zt)
    H_tt = Zt.T @ (w_tt[:, None] * Zt)
    H = np.block([[H_mm, H_mt], [H_mt.T, H_tt]])
    # exact symmetry; Z'WZ products differ from their transposes by rounding
    out["hessian"] = 0.5 * (H + H.T)
    return out


def bb_loglik(params: ParamVector, data: RepeatedCountData, designs: DesignSet) -> float:
    """Beta-binomial log-likelihood kernel (binomial coefficients omitted)."""
    return _bb_terms(params, data, designs, 0)["loglik"]


def bb_score(params, data, designs):
    """Gradient of :func:`bb_loglik` over ``(beta_mu, beta_theta)``."""
    return _bb_terms(params, data, designs, 1)["score"]


def bb_hessian(params, data, designs):
    return _bb_terms(params, data, designs, 2)["hessian"]


def bb_constant(data):
    """``sum log C(n, x)``, the part of the beta-binomial log-likelihood left out of the kernel."""
    return float(np.sum(log_binom_coef(data.n, data.x)))


# ---------------------------------------------------------------------------
# gamma-Poisson component: coefficients (beta_lambda, beta_alpha, beta_delta)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GpWorkspace:
    """Per-unit auxiliary quantities of the gamma-Poisson derivatives.

    Diagonal matrices are held as their diagonals: ``A=diag(a)``,
    ``B=diag(b)``, ``C=diag(c)`` and so on; ``Mmat`` is ``diag(alpha)``,
    ``D`` is ``diag(delta)``, ``Ns`` the per-unit trial totals and ``Ls`` the
    per-unit sums of ``lam``. ``lam`` and ``n`` have shape ``(M, p)``.
    ``rising`` is ``sum_{u<S} log(alpha + u*delta)``.
    """

    n: np.ndarray
    S: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    delta: np.ndarray
    Ls: np.ndarray
    a: np.ndarray
    b: np.ndarray
    log_b: np.ndarray
    rising: np.ndarray
    c: np.ndarray = None
    e: np.ndarray = None
    f: np.ndarray = None
    j: np.ndarray = None
    q: np.ndarray = None

    @property
    def Ns(self):
        return self.S

    @property
    def Mmat(self):
        return self.alpha

    @property
    def D(self):
        return self.delta


def gp_workspace(params, data, designs, order=2) -> GpWorkspace:
    designs.check_data(data)
    nat = evaluate_links(params, designs)
    M, p = data.M, data.p
    n = data.n.astype(np.float64)
    S = data.n.sum(axis=1)
    lam = nat.lam.reshape(M, p)
    alpha, delta = nat.alpha, nat.delta
    Ls = lam.sum(axis=1)
    dL = delta * Ls
    sums = ragged_sums(alpha, delta, S, 0 if order == 0 else 2)
    extra = {}
    if order > 0:
        extra = dict(c=sums[:, INV], e=sums[:, U_INV], f=sums[:, INV2],
                     j=sums[:, U_INV2], q=sums[:, U2_INV2])
    return GpWorkspace(
        n=n, S=S.astype(np.float64), lam=lam, alpha=alpha, delta=delta, Ls=Ls,
        a=delta * S + alpha, b=dL + 1.0, log_b=np.log1p(dL), rising=sums[:, LOG],
        **extra,
    )


def _gp_unit_loglik(ws):
    return (np.sum(ws.n * np.log(ws.lam), axis=1) + ws.rising
            - (ws.S + ws.alpha / ws.delta) * ws.log_b)


def _gp_terms(params, data, designs, order):
    ws = gp_workspace(params, data, designs, order)
    out = {"loglik": float(np.sum(_gp_unit_loglik(ws)))}
    if order == 0:
        return out
    M, p = data.M, data.p
    Zl, Za, Zd = designs.lam, designs.alpha, designs.delta
    a, b, log_b = ws.a, ws.b, ws.log_b
    alpha, delta, lam, Ls, S = ws.alpha, ws.delta, ws.lam, ws.Ls, ws.S

    g_lam = Zl.T @ (ws.n - lam * (a / b)[:, None]).ravel()
    g_alpha = Za.T @ (alpha * (ws.c - log_b / delta))
    g_delta = Zd.T @ (delta * ws.e + alpha * log_b / delta - a * Ls / b)
    out["score"] = np.concatenate([g_lam, g_alpha, g_delta])
    if order == 1:
        return out

    Zl3 = Zl.reshape(M, p, -1)
    # v_g = sum_h lam_gh z_gh couples the conditions of a unit through b_g
    v = np.einsum("gh,ghk->gk", lam, Zl3)
    w_diag = (lam * (a / b)[:, None]).ravel()
    H_ll = -(Zl.T @ (w_diag[:, None] * Zl)) + v.T @ ((a * delta / b ** 2)[:, None] * v)
    H_la = -v.T @ ((alpha / b)[:, None] * Za)
    excess = S - alpha * Ls
    H_ld = -v.T @ ((delta * excess / b ** 2)[:, None] * Zd)
    w_aa = alpha * (ws.c - log_b / delta - alpha * ws.f)
    H_aa = Za.T @ (w_aa[:, None] * Za)
    w_ad = -alpha * delta * ws.j - alpha * Ls / b + alpha * log_b / delta
    H_ad = Za.T @ (w_ad[:, None] * Zd)
    w_dd = (delta * ws.e - delta ** 2 * ws.q - alpha * log_b / delta
            + alpha * Ls / b - delta * Ls * excess / b ** 2)
    H_dd = Zd.T @ (w_dd[:, None] * Zd)
    H = np.block([
        [H_ll, H_la, H_ld],
        [H_la.T, H_aa, H_ad],
        [H_ld.T, H_ad.T, H_dd],
    ])
    out["hessian"] = 0.5 * (H + H.T)
    return out


def gp_loglik(params: ParamVector, data: RepeatedCountData, designs: DesignSet) -> float:
    """Gamma-Poisson log-likelihood kernel (``-log n!`` terms omitted)."""
    return _gp_terms(params, data, designs, 0)["loglik"]


def gp_score(params, data, designs):
    """Gradient of :func:`gp_loglik` over ``(beta_lambda, beta_alpha, beta_delta)``."""
    return _gp_terms(params, data, designs, 1)["score"]


def gp_hessian(params, data, designs):
    return _gp_terms(params, data, designs, 2)["hessian"]


def gp_constant(data):
    return -float(np.sum(log_factorial(data.n)))


# ---------------------------------------------------------------------------
# flat-vector views used by the optimiser
# ---------------------------------------------------------------------------

class Component:
    """One likelihood block as functions of its flat coefficient vector.

    The last evaluation is cached, so asking for the log-likelihood, score
    and Hessian at the same point computes the shared sums once.
    """

    name = None
    _terms = None

    def __init__(self, data, designs, template=None):
        designs.check_data(data)
        self.data = data
        self.designs = designs
        self.template = ParamVector.zeros(designs) if template is None else template
        self._cache_key = None
        self._cache = {}
        self._cache_order = -1

    def params(self, beta):
        raise NotImplementedError

    def size(self):
        raise NotImplementedError

    def _eval(self, beta, order):
        beta = np.asarray(beta, dtype=np.float64)
        key = beta.tobytes()
        if key != self._cache_key or order > self._cache_order:
            self._cache = type(self)._terms(self.params(beta), self.data, self.designs, order)
            self._cache_key = key
            self._cache_order = order
        return self._cache

    def loglik(self, beta):
        return self._eval(beta, 0)["loglik"]

    def score(self, beta):
        return self._eval(beta, 1)["score"]

    def hessian(self, beta):
        return self._eval(beta, 2)["hessian"]

    def constant(self):
        raise NotImplementedError


class BetaBinomialComponent(Component):
    name = "beta-binomial"
    _terms = staticmethod(_bb_terms)

    def params(self, beta):
        k = self.designs.mu.shape[1]
        beta = np.asarray(beta, dtype=np.float64)
        return self.template.replace(mu=beta[:k], theta=beta[k:])

    def size(self):
        return self.designs.mu.shape[1] + self.designs.theta.shape[1]

    def names(self):
        return [("mu", s) for s in self.designs.names["mu"]] + \
            [("theta", s) for s in self.designs.names["theta"]]

    def constant(self):
        return bb_constant(self.data)


class GammaPoissonComponent(Component):
    name = "gamma-Poisson"
    _terms = staticmethod(_gp_terms)

    def params(self, beta):
        k1 = self.designs.lam.shape[1]
        k2 = k1 + self.designs.alpha.shape[1]
        beta = np.asarray(beta, dtype=np.float64)
        return self.template.replace(lam=beta[:k1], alpha=beta[k1:k2], delta=beta[k2:])

    def size(self):
        return sum(self.designs.sizes()[c] for c in ("lam", "alpha", "delta"))

    def names(self):
        return [(c, s) for c in ("lam", "alpha", "delta") for s in self.designs.names[c]]

    def constant(self):
        return gp_constant(self.data)
