"""Maximum likelihood fitting, likelihood-ratio tests and natural-scale summaries."""

from __future__ import annotations

import hashlib
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaincc

from .lik import BetaBinomialComponent, GammaPoissonComponent
from .model import (
    BB_COMPONENTS,
    COMPONENTS,
    GP_COMPONENTS,
    DesignSet,
    NonFiniteParameterError,
    ParamVector,
    RepeatedCountData,
    logistic,
)

logger = logging.getLogger(__name__)

THETA_FLOOR = 1e-4
GP_FLOOR = 1e-4
# eigenvalues of the observed information below this fraction of the largest
# are treated as zero
NULL_RTOL = 1e-9


class InitializationError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-8
    ftol: float = 1e-12
    max_iter: int = 200
    max_halvings: int = 30
    ridge0: float = 1e-8
    staged: bool = False
    seed: int = 0

    def replace(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass(frozen=True)
class TraceEntry:
    loglik: float
    step_norm: float
    grad_max: float
    ridge: float = 0.0
    halvings: int = 0


@dataclass(frozen=True)
class FitResult:
    """Outcome of maximising one likelihood component.

    ``covariance`` is the Moore-Penrose inverse of the observed information.
    Where the information is singular, ``null_space`` holds an orthonormal
    basis of the flat directions and the affected coefficients have
    ``identified = False`` and a NaN standard error; variances of estimable
    functions (gradients orthogonal to ``null_space``) remain valid.
    """

    beta: np.ndarray
    covariance: np.ndarray
    std_errors: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    trace: list
    gradient: np.ndarray
    hessian: np.ndarray
    identified: np.ndarray
    null_space: np.ndarray
    loglik_full: float = None
    aic: float = None
    bic: float = None
    nobs: int = None
    names: list = None
    component: str = None
    estimates: ParamVector = None
    data_digest: str = None
    messages: list = field(default_factory=list)

    @property
    def grad_max(self):
        return float(np.max(np.abs(self.gradient))) if self.gradient.size else 0.0

    @property
    def n_params(self):
        return int(self.beta.size)


def _information_eig(H):
    w, V = np.linalg.eigh(-0.5 * (H + H.T))
    return w, V


def newton_direction(H, g, ridge0=1e-8):
    """Solve ``(-H + eps I) s = g``; ``eps`` doubles from ``ridge0`` until ``-H + eps I``
    is numerically positive definite. Returns ``(s, eps)`` with ``eps = 0`` when no
    ridge was needed."""
    w, V = _information_eig(H)
    scale = max(float(np.max(np.abs(w))), 1.0)
    ridge = 0.0
    if w.min() <= NULL_RTOL * scale:
        ridge = ridge0
        while w.min() + ridge <= NULL_RTOL * (scale + ridge):
            ridge *= 2.0
    return V @ ((V.T @ g) / (w + ridge)), ridge


def _safe(f, beta):
    try:
        val = f(beta)
    except (NonFiniteParameterError, FloatingPointError, OverflowError):
        return -np.inf
    return val if np.isfinite(val) else -np.inf


def fit_component(loglik, score, hessian, init, options: FitOptions = None) -> FitResult:
    """Newton-Raphson maximisation with step halving and ridge regularisation.

    Iterates ``beta <- beta - H^{-1} g``. A step whose log-likelihood falls
    below the current value is halved (at most ``max_halvings`` times); a
    Hessian that is not negative definite gets ``eps I`` subtracted with
    ``eps`` doubling from ``ridge0``. Stops when ``max|g| <= tol``, when the
    relative log-likelihood change drops to ``ftol`` without the step at least
    halving ``max|g|``, or after ``max_iter`` iterations. ``converged`` is reported only when ``max|g| <= tol`` at the
    returned estimate.
    """
    opt = options or FitOptions()
    beta = np.array(init, dtype=np.float64)
    if not np.all(np.isfinite(beta)):
        raise InitializationError("initial values are not finite")
    f = _safe(loglik, beta)
    if not np.isfinite(f):
        raise InitializationError("log-likelihood is not finite at the initial values")
    trace = []
    messages = []
    g = score(beta)
    it = 0
    while np.max(np.abs(g), initial=0.0) > opt.tol and it < opt.max_iter:
        H = hessian(beta)
        step, ridge = newton_direction(H, g, opt.ridge0)
        t = 1.0
        # tolerate rounding-level decreases near the optimum
        slack = 16 * np.finfo(float).eps * (abs(f) + 1.0)
        for halvings in range(opt.max_halvings + 1):
            cand = beta + t * step
            fc = _safe(loglik, cand)
            if fc >= f - slack:
                break
            t *= 0.5
        else:
            messages.append(f"step halving failed at iteration {it + 1}")
            break
        it += 1
        change = abs(fc - f) / max(abs(f), 1e-300)
        g_prev = np.max(np.abs(g), initial=0.0)
        beta, f = cand, fc
        g = score(beta)
        g_now = np.max(np.abs(g), initial=0.0)
        trace.append(TraceEntry(float(f), float(np.linalg.norm(t * step)), float(g_now), ridge, halvings))
        # a flat log-likelihood only ends the run once Newton stops shrinking the gradient;
        # for large |loglik| the relative change reaches ftol a step before max|g| reaches tol
        if change <= opt.ftol and g_now > opt.tol and g_now > 0.5 * g_prev:
            messages.append(f"relative log-likelihood change {change:.2e} <= ftol")
            break
    grad_max = float(np.max(np.abs(g), initial=0.0))
    converged = grad_max <= opt.tol
    if not converged and it >= opt.max_iter:
        messages.append(f"reached max_iter={opt.max_iter}")
    H = hessian(beta)
    cov, se, identified, null = _covariance(H)
    if not np.all(identified):
        messages.append("observed information is singular; "
                        f"{int(np.sum(~identified))} coefficient(s) not identified")
    return FitResult(
        beta=beta, covariance=cov, std_errors=se, loglik=float(f), iterations=it,
        converged=converged, trace=trace, gradient=np.asarray(g, dtype=float),
        hessian=H, identified=identified, null_space=null, messages=messages,
    )


def _covariance(H):
    k = H.shape[0]
    if k == 0:
        return np.zeros((0, 0)), np.zeros(0), np.zeros(0, bool), np.zeros((0, 0))
    w, V = _information_eig(H)
    scale = max(float(np.max(np.abs(w))), 1e-300)
    keep = w > NULL_RTOL * scale
    null = V[:, ~keep]
    cov = (V[:, keep] / w[keep]) @ V[:, keep].T
    cov = 0.5 * (cov + cov.T)
    identified = np.all(np.abs(null) <= 1e-6, axis=1) if null.size else np.ones(k, bool)
    se = np.where(identified, np.sqrt(np.clip(np.diag(cov), 0.0, None)), np.nan)
    return cov, se, identified, null


# ---------------------------------------------------------------------------
# method-of-moments starting values
# ---------------------------------------------------------------------------

def _cells(Z):
    """Group rows of ``Z`` into cells of identical rows."""
    uniq, inverse = np.unique(np.round(Z, 12), axis=0, return_inverse=True)
    return uniq, inverse.ravel()


def _wls(Z, y, w):
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(Z * sw[:, None], y * sw, rcond=None)
    return coef


def mom_init_bb(data: RepeatedCountData, designs: DesignSet):
    """Moment starting values for ``(beta_mu, beta_theta)``.

    Observations are pooled into cells sharing both design rows. Per cell,
    ``p = sum x / sum n`` and the intra-class correlation
    ``rho = theta/(1+theta)`` is matched from
    ``sum (x - n p)^2 = p(1-p) sum n [1 + (n-1) rho]``. Cell values are mapped
    to the link scale by weighted least squares (minimum-norm, so columns the
    cells cannot identify start at zero).
    """
    designs.check_data(data)
    x = data.x.ravel().astype(float)
    n = data.n.ravel().astype(float)
    used = n > 0
    if not np.any(used):
        raise InitializationError("every trial count is zero; nothing to initialise from")
    Zm, Zt = designs.mu[used], designs.theta[used]
    x, n = x[used], n[used]
    _, cell = _cells(np.hstack([Zm, Zt]))
    ncell = cell.max() + 1
    sx = np.bincount(cell, x, ncell)
    sn = np.bincount(cell, n, ncell)
    p_hat = np.clip(sx / sn, 1e-6, 1 - 1e-6)
    resid2 = np.bincount(cell, (x - n * p_hat[cell]) ** 2, ncell)
    nn1 = np.bincount(cell, n * (n - 1), ncell)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = (resid2 / (p_hat * (1 - p_hat)) - sn) / nn1
    rho = np.where(np.isfinite(rho), rho, 0.0)
    theta_hat = np.clip(rho / (1.0 - np.minimum(rho, 0.999)), THETA_FLOOR, 1e4)
    first = np.array([np.flatnonzero(cell == c)[0] for c in range(ncell)])
    b_mu = _wls(Zm[first], np.log(p_hat) - np.log1p(-p_hat), sn)
    b_theta = _wls(Zt[first], np.log(theta_hat), sn)
    return b_mu, b_theta


def mom_init_gp(data: RepeatedCountData, designs: DesignSet):
    """Moment starting values for ``(beta_lambda, beta_alpha, beta_delta)``.

    Only products such as ``E(N) = lam * alpha`` are identified by the
    moments, so ``alpha`` is pinned to the mean count of the reference cell
    (the rows whose lambda design equals the first row pattern with only the
    intercept set, or all rows when no such cell exists) and the remaining
    variation is attributed to ``lam``. ``delta`` is matched to the pooled
    cross-condition covariance ``Cov(N_h, N_k) = lam_h lam_k alpha delta``
    (to the excess variance when ``p = 1``).
    """
    designs.check_data(data)
    M, p = data.M, data.p
    Zl, Za, Zd = designs.lam, designs.alpha, designs.delta
    n = data.n.astype(float)
    if M * p == 1:
        lam = np.full(M * p, max(n.mean(), GP_FLOOR))
        alpha, delta = 1.0, 0.1
    else:
        ref = np.all(np.isclose(Zl[:, 1:], 0.0), axis=1) if Zl.shape[1] > 1 else np.ones(M * p, bool)
        if not np.any(ref):
            ref = np.ones(M * p, bool)
        alpha = max(n.ravel()[ref].mean(), GP_FLOOR)
        _, cell = _cells(Zl)
        ncell = cell.max() + 1
        cnt = np.bincount(cell, minlength=ncell).astype(float)
        cmean = np.bincount(cell, n.ravel(), ncell) / cnt
        cmean = np.maximum(cmean / alpha, GP_FLOOR)
        first = np.array([np.flatnonzero(cell == c)[0] for c in range(ncell)])
        b_lam0 = _wls(Zl[first], np.log(cmean), cnt)
        lam = np.exp(Zl @ b_lam0)
        lam2 = lam.reshape(M, p)
        r = n - lam2 * alpha
        if p > 1:
            rs = r.sum(axis=1)
            num = np.sum(rs ** 2 - np.sum(r ** 2, axis=1)) / 2.0
            ls = lam2.sum(axis=1)
            den = alpha * np.sum(ls ** 2 - np.sum(lam2 ** 2, axis=1)) / 2.0
        else:
            num = np.sum(r[:, 0] ** 2 - lam2[:, 0] * alpha)
            den = alpha * np.sum(lam2[:, 0] ** 2)
        delta = num / den if den > 0 else 0.0
        delta = delta if np.isfinite(delta) else 0.0
    delta = max(delta, GP_FLOOR)
    b_lam = _wls(Zl, np.log(lam), np.ones(M * p))
    b_alpha = _wls(Za, np.full(M, math.log(alpha)), np.ones(M))
    b_delta = _wls(Zd, np.full(M, math.log(delta)), np.ones(M))
    return b_lam, b_alpha, b_delta


# ---------------------------------------------------------------------------
# fitting both components
# ---------------------------------------------------------------------------

def data_digest(data):
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(data.x).tobytes())
    h.update(np.ascontiguousarray(data.n).tobytes())
    return h.hexdigest()


def _finish(res, comp, data, designs, template):
    full = res.loglik + comp.constant()
    k = res.n_params
    estimates = comp.params(res.beta)
    return replace(
        res, loglik_full=full, aic=-2.0 * full + 2 * k, bic=-2.0 * full + k * math.log(data.M),
        nobs=data.M, names=comp.names(), component=comp.name, estimates=estimates,
        data_digest=data_digest(data),
    )


def _column_blocks(designs, comps):
    """Offsets of each component's columns inside the flat vector of ``comps``."""
    out, start = {}, 0
    for c in comps:
        k = getattr(designs, c).shape[1]
        out[c] = np.arange(start, start + k)
        start += k
    return out


def _staged(cls, data, designs, comps, init, template, opt):
    """Warm-start by fitting main effects first, then adding interactions one at a time."""
    names = designs.names
    blocks = _column_blocks(designs, comps)
    inter = [(c, j) for c in comps for j, nm in enumerate(names[c]) if "*" in nm]
    if not inter:
        return init
    beta = np.array(init, dtype=float)
    active = {c: [j for j, nm in enumerate(names[c]) if "*" not in nm] for c in comps}
    for nm in inter:
        beta[blocks[nm[0]][nm[1]]] = 0.0
    schedule = [None] + inter
    for added in schedule[:-1]:
        if added is not None:
            active[added[0]] = sorted(active[added[0]] + [added[1]])
        sub = designs.subset({c: active[c] for c in comps})
        idx = np.concatenate([blocks[c][active[c]] for c in comps])
        comp = cls(data, sub, template)
        try:
            res = fit_component(comp.loglik, comp.score, comp.hessian, beta[idx], opt)
        except InitializationError:
            continue
        beta[idx] = res.beta
        logger.info("staged fit with %d columns: loglik %.6f", idx.size, res.loglik)
    return beta


def fit_bb(data, designs, options=None, init=None, template=None):
    opt = options or FitOptions()
    comp = BetaBinomialComponent(data, designs, template)
    beta0 = np.concatenate(mom_init_bb(data, designs)) if init is None else np.asarray(init, float)
    if opt.staged:
        beta0 = _staged(BetaBinomialComponent, data, designs, BB_COMPONENTS, beta0, template, opt)
    res = fit_component(comp.loglik, comp.score, comp.hessian, beta0, opt)
    return _finish(res, comp, data, designs, template)


def fit_gp(data, designs, options=None, init=None, template=None):
    opt = options or FitOptions()
    comp = GammaPoissonComponent(data, designs, template)
    beta0 = np.concatenate(mom_init_gp(data, designs)) if init is None else np.asarray(init, float)
    if opt.staged:
        beta0 = _staged(GammaPoissonComponent, data, designs, GP_COMPONENTS, beta0, template, opt)
    res = fit_component(comp.loglik, comp.score, comp.hessian, beta0, opt)
    return _finish(res, comp, data, designs, template)


@dataclass(frozen=True)
class JointFit:
    """Both component fits with information criteria over all coefficients.

    Unpacks as ``bb, gp = fit(...)``.
    """

    bb: FitResult
    gp: FitResult

    def __iter__(self):
        return iter((self.bb, self.gp))

    @property
    def params(self):
        return ParamVector(mu=self.bb.estimates.mu, theta=self.bb.estimates.theta,
                           lam=self.gp.estimates.lam, alpha=self.gp.estimates.alpha,
                           delta=self.gp.estimates.delta)

    @property
    def covariance(self):
        kb, kg = self.bb.n_params, self.gp.n_params
        out = np.zeros((kb + kg, kb + kg))
        out[:kb, :kb] = self.bb.covariance
        out[kb:, kb:] = self.gp.covariance
        return out

    @property
    def null_space(self):
        kb, kg = self.bb.n_params, self.gp.n_params
        nb, ng = self.bb.null_space.shape[1], self.gp.null_space.shape[1]
        out = np.zeros((kb + kg, nb + ng))
        out[:kb, :nb] = self.bb.null_space
        out[kb:, nb:] = self.gp.null_space
        return out

    @property
    def converged(self):
        return self.bb.converged and self.gp.converged

    @property
    def n_params(self):
        return self.bb.n_params + self.gp.n_params

    @property
    def loglik(self):
        return self.bb.loglik + self.gp.loglik

    @property
    def loglik_full(self):
        return self.bb.loglik_full + self.gp.loglik_full

    @property
    def aic(self):
        return -2.0 * self.loglik_full + 2 * self.n_params

    @property
    def bic(self):
        return -2.0 * self.loglik_full + self.n_params * math.log(self.bb.nobs)

    @property
    def names(self):
        return self.bb.names + self.gp.names

    @property
    def std_errors(self):
        return np.concatenate([self.bb.std_errors, self.gp.std_errors])


def fit(data: RepeatedCountData, designs: DesignSet, options: FitOptions = None,
        init: ParamVector = None) -> JointFit:
    """Fit both components; each is maximised on its own (the likelihood separates)."""
    opt = options or FitOptions()
    designs.check_data(data)
    template = ParamVector.zeros(designs) if init is None else init
    bb = fit_bb(data, designs, opt, None if init is None else init.bb, template)
    gp = fit_gp(data, designs, opt, None if init is None else init.gp, template)
    for res in (bb, gp):
        if not res.converged:
            logger.warning("%s fit did not converge: %s", res.component, "; ".join(res.messages))
    return JointFit(bb, gp)


# ---------------------------------------------------------------------------
# likelihood-ratio tests
# ---------------------------------------------------------------------------

def chi2_sf(x, df):
    """Upper tail of the chi-squared distribution via the regularised incomplete gamma."""
    if df <= 0:
        raise UsageError("degrees of freedom must be positive")
    if x <= 0:
        return 1.0
    return float(gammaincc(0.5 * df, 0.5 * x))


@dataclass(frozen=True)
class LrTestResult:
    lr_stat: float
    df: int
    p_value: float
    loglik_full: float
    loglik_reduced: float


def lr_test(fit_full, fit_reduced, tol=1e-6) -> LrTestResult:
    """``LR = 2 (L - L*)`` referred to chi-squared with the parameter-count difference.

    Accepts a pair of :class:`FitResult` (one component) or :class:`JointFit`.
    Kernels are differenced, so constants common to both models cancel.
    """
    if isinstance(fit_full, JointFit) != isinstance(fit_reduced, JointFit):
        raise UsageError("cannot compare a joint fit with a single-component fit")
    digests = lambda f: (f.bb.data_digest, f.gp.data_digest) if isinstance(f, JointFit) else f.data_digest
    if digests(fit_full) != digests(fit_reduced):
        raise UsageError("the two fits were computed on different data")
    df = fit_full.n_params - fit_reduced.n_params
    if df == 0 and fit_full.names == fit_reduced.names:
        # the same model twice: a degenerate test that never rejects
        return LrTestResult(0.0, 0, 1.0, fit_full.loglik, fit_reduced.loglik)
    if df <= 0:
        raise UsageError(f"full model must have more parameters than the reduced one (df={df})")
    l1, l0 = fit_full.loglik, fit_reduced.loglik
    lr = 2.0 * (l1 - l0)
    if lr < 0:
        if lr < -tol * max(1.0, abs(l1)):
            raise ConvergenceError(
                f"reduced model has a larger log-likelihood ({l0:.6f} > {l1:.6f}); "
                "one of the fits has not reached its maximum")
        warnings.warn(f"LR statistic {lr:.3e} < 0 within tolerance; set to 0", RuntimeWarning)
        lr = 0.0
    return LrTestResult(lr, int(df), chi2_sf(lr, df), l1, l0)


# ---------------------------------------------------------------------------
# natural-scale summaries with delta-method standard errors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignRow:
    """Covariate rows for one (unit, condition) setting."""

    label: str
    mu: np.ndarray
    theta: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    delta: np.ndarray


class _Symbols:
    """Values and log-gradients (w.r.t. the flat coefficient vector) of the
    natural parameters at one design row."""

    def __init__(self, params, row, offsets, k):
        self.k = k
        self.val = {}
        self.dlog = {}
        eta = {c: float(np.dot(getattr(row, c), getattr(params, c))) for c in COMPONENTS}

        def vec(comp, coef):
            v = np.zeros(k)
            v[offsets[comp]] = coef * np.asarray(getattr(row, comp), dtype=float)
            return v

        mu, omm = (float(v) for v in logistic(eta["mu"]))
        theta = math.exp(eta["theta"])
        self.val.update(mu=mu, omm=omm, theta=theta, opt=1.0 + theta,
                        lam=math.exp(eta["lam"]), alpha=math.exp(eta["alpha"]),
                        delta=math.exp(eta["delta"]))
        self.dlog.update(mu=vec("mu", omm), omm=vec("mu", -mu), theta=vec("theta", 1.0),
                         opt=vec("theta", theta / (1.0 + theta)), lam=vec("lam", 1.0),
                         alpha=vec("alpha", 1.0), delta=vec("delta", 1.0))


def _poly(terms):
    """Value and gradient of ``sum coef * prod sym**power`` over ``(coef, [(symbols, name, power)])``."""
    total, grad = 0.0, 0.0
    for coef, factors in terms:
        v = coef
        dl = 0.0
        for sym, name, power in factors:
            v *= sym.val[name] ** power
            dl = dl + power * sym.dlog[name]
        total += v
        grad = grad + v * dl
    return total, np.asarray(grad, dtype=float)


def _offsets(params):
    out, start = {}, 0
    for c in COMPONENTS:
        k = getattr(params, c).size
        out[c] = np.arange(start, start + k)
        start += k
    return out, start


def summary_polys(a, b=None):
    """Monomial expansions of the natural-scale summaries at rows ``a`` (and ``b``)."""
    out = {
        "mu": [(1.0, [(a, "mu", 1)])],
        "theta": [(1.0, [(a, "theta", 1)])],
        "lambda": [(1.0, [(a, "lam", 1)])],
        "alpha": [(1.0, [(a, "alpha", 1)])],
        "delta": [(1.0, [(a, "delta", 1)])],
        "var_pi": [(1.0, [(a, "mu", 1), (a, "omm", 1), (a, "theta", 1), (a, "opt", -1)])],
        "e_x": [(1.0, [(a, "mu", 1), (a, "lam", 1), (a, "alpha", 1)])],
        "e_n": [(1.0, [(a, "lam", 1), (a, "alpha", 1)])],
        "var_n": [(1.0, [(a, "lam", 1), (a, "alpha", 1)]),
                  (1.0, [(a, "lam", 2), (a, "alpha", 1), (a, "delta", 1)])],
        "var_x": [(1.0, [(a, "mu", 1), (a, "omm", 1), (a, "theta", 1), (a, "opt", -1),
                         (a, "lam", 2), (a, "alpha", 2)]),
                  (1.0, [(a, "mu", 1), (a, "omm", 1), (a, "theta", 1), (a, "opt", -1),
                         (a, "lam", 2), (a, "alpha", 1), (a, "delta", 1)]),
                  (1.0, [(a, "mu", 1), (a, "lam", 1), (a, "alpha", 1)]),
                  (1.0, [(a, "mu", 2), (a, "lam", 2), (a, "alpha", 1), (a, "delta", 1)])],
        "cov_xn": [(1.0, [(a, "mu", 1), (a, "lam", 1), (a, "alpha", 1)]),
                   (1.0, [(a, "mu", 1), (a, "lam", 2), (a, "alpha", 1), (a, "delta", 1)])],
    }
    if b is not None:
        ad = [(a, "alpha", 1), (a, "delta", 1)]
        out["cov_n"] = [(1.0, [(a, "lam", 1), (b, "lam", 1)] + ad)]
        out["cov_x"] = [(1.0, [(a, "mu", 1), (b, "mu", 1), (a, "lam", 1), (b, "lam", 1)] + ad)]
        out["cov_xn_cross"] = [(1.0, [(a, "mu", 1), (a, "lam", 1), (b, "lam", 1)] + ad)]
    return out


ROW_SUMMARIES = ("mu", "theta", "lambda", "alpha", "delta", "var_pi", "e_x", "e_n",
                 "var_n", "var_x", "cov_xn")


def _delta_se(grad, cov, null):
    if cov is None:
        return float("nan")
    if null is not None and null.size:
        g = np.linalg.norm(grad)
        if g > 0 and np.max(np.abs(null.T @ grad)) > 1e-7 * g:
            return float("nan")  # not estimable
    return float(math.sqrt(max(grad @ cov @ grad, 0.0)))


def _resolve(fit_or_params, covariance, null_space):
    if isinstance(fit_or_params, JointFit):
        if not fit_or_params.converged:
            raise ConvergenceError("refusing to summarise an unconverged fit: "
                                   + "; ".join(fit_or_params.bb.messages + fit_or_params.gp.messages))
        return fit_or_params.params, fit_or_params.covariance, fit_or_params.null_space
    return fit_or_params, covariance, null_space


def predict_summaries(fit_or_params, rows, covariance=None, null_space=None):
    """Natural-scale summaries at each design row, with delta-method standard errors.

    ``fit_or_params`` is a converged :class:`JointFit` or a :class:`ParamVector`
    (then ``covariance`` is optional and standard errors are NaN without it).
    Returns one dict per row: ``{"label", name: (estimate, se), ...}`` for the
    names in ``ROW_SUMMARIES``.
    """
    params, cov, null = _resolve(fit_or_params, covariance, null_space)
    offsets, k = _offsets(params)
    out = []
    for row in rows:
        sym = _Symbols(params, row, offsets, k)
        polys = summary_polys(sym)
        rec = {"label": row.label}
        for name in ROW_SUMMARIES:
            val, grad = _poly(polys[name])
            rec[name] = (val, _delta_se(grad, cov, null))
        out.append(rec)
    return out


def predict_covariance(fit_or_params, rows, covariance=None, null_space=None):
    """Covariance matrix of ``(X_1, N_1, ..., X_p, N_p)`` for one unit whose
    conditions are given by ``rows`` (sharing unit-level covariates).

    Returns ``(estimate, se)``, both ``2p x 2p``.
    """
    params, cov, null = _resolve(fit_or_params, covariance, null_space)
    offsets, k = _offsets(params)
    syms = [_Symbols(params, r, offsets, k) for r in rows]
    p = len(rows)
    est = np.zeros((2 * p, 2 * p))
    se = np.zeros((2 * p, 2 * p))
    for h in range(p):
        for j in range(h, p):
            if h == j:
                polys = summary_polys(syms[h])
                entries = {(2 * h, 2 * h): "var_x", (2 * h + 1, 2 * h + 1): "var_n",
                           (2 * h, 2 * h + 1): "cov_xn"}
            else:
                polys = summary_polys(syms[h], syms[j])
                entries = {(2 * h, 2 * j): "cov_x", (2 * h + 1, 2 * j + 1): "cov_n",
                           (2 * h, 2 * j + 1): "cov_xn_cross"}
                # Cov(X_j, N_h) uses the roles of h and j swapped
                swapped = summary_polys(syms[j], syms[h])
                val, grad = _poly(swapped["cov_xn_cross"])
                est[2 * j, 2 * h + 1] = est[2 * h + 1, 2 * j] = val
                se[2 * j, 2 * h + 1] = se[2 * h + 1, 2 * j] = _delta_se(grad, cov, null)
            for (r, c), name in entries.items():
                val, grad = _poly(polys[name])
                est[r, c] = est[c, r] = val
                se[r, c] = se[c, r] = _delta_se(grad, cov, null)
    return est, se


def coefficient_summary(fit_or_params, comp, index, covariance=None, null_space=None):
    """Estimate and delta-method SE of a single coefficient (identity transform)."""
    params, cov, null = _resolve(fit_or_params, covariance, null_space)
    offsets, k = _offsets(params)
    grad = np.zeros(k)
    grad[offsets[comp][index]] = 1.0
    return float(getattr(params, comp)[index]), _delta_se(grad, cov, null)
