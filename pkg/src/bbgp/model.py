"""Data, design and parameter containers plus the link functions.

Observation-level arrays are stored unit-major: row ``g * p + h`` holds
unit ``g`` under condition ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

COMPONENTS = ("mu", "theta", "lam", "alpha", "delta")
BB_COMPONENTS = ("mu", "theta")
GP_COMPONENTS = ("lam", "alpha", "delta")


class ConfigurationError(ValueError):
    """Inconsistent dimensions between data, designs and coefficients."""


class DomainError(ValueError):
    """Argument outside the support of a distribution."""


class NonFiniteParameterError(FloatingPointError):
    """A link evaluation overflowed to a non-finite natural parameter."""

    def __init__(self, component, row):
        self.component = component
        self.row = row
        super().__init__(f"non-finite {component} at design row {row}")


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class Observation(NamedTuple):
    x: int
    n: int
    condition_id: object


class UnitRecord(NamedTuple):
    unit_id: object
    observations: list


@dataclass(frozen=True)
class RepeatedCountData:
    """Successes ``x`` in ``n`` trials, an ``(M, p)`` array each."""

    x: np.ndarray
    n: np.ndarray
    unit_ids: tuple = None
    condition_ids: tuple = None

    def __post_init__(self):
        x = np.asarray(self.x)
        n = np.asarray(self.n)
        if x.ndim == 1:
            x, n = x[:, None], n[:, None]
        if x.shape != n.shape or x.ndim != 2:
            raise ConfigurationError(f"x shape {x.shape} does not match n shape {n.shape}")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise ConfigurationError("need at least one unit and one condition")
        if np.any(np.asarray(x) != np.round(x)) or np.any(np.asarray(n) != np.round(n)):
            raise DomainError("counts must be integers")
        if np.any(n < 0) or np.any(x < 0) or np.any(x > n):
            raise DomainError("counts must satisfy 0 <= x <= n")
        object.__setattr__(self, "x", _frozen(x, np.int64))
        object.__setattr__(self, "n", _frozen(n, np.int64))
        M, p = x.shape
        uid = tuple(range(M)) if self.unit_ids is None else tuple(self.unit_ids)
        cid = tuple(range(p)) if self.condition_ids is None else tuple(self.condition_ids)
        if len(uid) != M or len(cid) != p:
            raise ConfigurationError("identifier lists do not match the count array shape")
        if len(set(cid)) != p:
            raise ConfigurationError("condition identifiers must be distinct")
        object.__setattr__(self, "unit_ids", uid)
        object.__setattr__(self, "condition_ids", cid)

    @property
    def M(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def units(self):
        return [
            UnitRecord(u, [Observation(int(xx), int(nn), c)
                           for xx, nn, c in zip(self.x[g], self.n[g], self.condition_ids)])
            for g, u in enumerate(self.unit_ids)
        ]

    def with_trials(self, n):
        """Copy with the trial counts replaced, successes clipped to fit."""
        n = np.asarray(n)
        return RepeatedCountData(np.minimum(self.x, n), n, self.unit_ids, self.condition_ids)


@dataclass(frozen=True)
class DesignSet:
    """The five covariate matrices.

    ``mu``, ``theta`` and ``lam`` have ``M*p`` rows; ``alpha`` and ``delta``
    have ``M`` rows. ``names`` optionally maps each component to its column
    labels.
    """

    mu: np.ndarray
    theta: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    delta: np.ndarray
    names: dict = field(default=None, compare=False)

    def __post_init__(self):
        for comp in COMPONENTS:
            z = np.asarray(getattr(self, comp), dtype=np.float64)
            if z.ndim == 1:
                z = z[:, None]
            if z.ndim != 2:
                raise ConfigurationError(f"design {comp} must be a matrix")
            object.__setattr__(self, comp, _frozen(z))
        rows_obs = {self.mu.shape[0], self.theta.shape[0], self.lam.shape[0]}
        if len(rows_obs) != 1:
            raise ConfigurationError("mu, theta and lambda designs differ in row count")
        if self.alpha.shape[0] != self.delta.shape[0]:
            raise ConfigurationError("alpha and delta designs differ in row count")
        Mp, M = self.mu.shape[0], self.alpha.shape[0]
        if M < 1 or Mp % M:
            raise ConfigurationError(f"{Mp} observation rows are not a multiple of {M} units")
        names = dict(self.names or {})
        for comp in COMPONENTS:
            k = getattr(self, comp).shape[1]
            names.setdefault(comp, [f"{comp}{j}" for j in range(k)])
            if len(names[comp]) != k:
                raise ConfigurationError(f"{comp}: {len(names[comp])} names for {k} columns")
            names[comp] = list(names[comp])
        object.__setattr__(self, "names", names)

    @property
    def M(self):
        return self.alpha.shape[0]

    @property
    def p(self):
        return self.mu.shape[0] // self.alpha.shape[0]

    def sizes(self):
        return {comp: getattr(self, comp).shape[1] for comp in COMPONENTS}

    def check_data(self, data):
        if (data.M, data.p) != (self.M, self.p):
            raise ConfigurationError(
                f"designs are built for M={self.M}, p={self.p} but data has M={data.M}, p={data.p}")

    def subset(self, columns):
        """Keep only the given column indices per component (others kept whole)."""
        kw = {}
        names = {}
        for comp in COMPONENTS:
            idx = columns.get(comp, slice(None))
            kw[comp] = getattr(self, comp)[:, idx]
            names[comp] = list(np.asarray(self.names[comp], dtype=object)[idx])
        return DesignSet(names=names, **kw)

    def rows(self, obs_rows=None, unit_rows=None):
        """Design restricted to selected observation and unit rows."""
        obs_rows = slice(None) if obs_rows is None else obs_rows
        unit_rows = slice(None) if unit_rows is None else unit_rows
        return self.mu[obs_rows], self.theta[obs_rows], self.lam[obs_rows], \
            self.alpha[unit_rows], self.delta[unit_rows]

    @classmethod
    def intercepts(cls, M, p):
        one_obs, one_unit = np.ones((M * p, 1)), np.ones((M, 1))
        return cls(one_obs, one_obs, one_obs, one_unit, one_unit,
                   names={c: ["intercept"] for c in COMPONENTS})


@dataclass(frozen=True)
class ParamVector:
    """Regression coefficients on the link scale."""

    mu: np.ndarray
    theta: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        for comp in COMPONENTS:
            b = np.atleast_1d(np.asarray(getattr(self, comp), dtype=np.float64))
            if b.ndim != 1:
                raise ConfigurationError(f"coefficients {comp} must be a vector")
            if not np.all(np.isfinite(b)):
                raise NonFiniteParameterError(comp, int(np.flatnonzero(~np.isfinite(b))[0]))
            object.__setattr__(self, comp, _frozen(b))

    @property
    def bb(self):
        return np.concatenate([self.mu, self.theta])

    @property
    def gp(self):
        return np.concatenate([self.lam, self.alpha, self.delta])

    @property
    def flat(self):
        return np.concatenate([self.bb, self.gp])

    def sizes(self):
        return {comp: getattr(self, comp).size for comp in COMPONENTS}

    def replace(self, **blocks):
        kw = {comp: getattr(self, comp) for comp in COMPONENTS}
        kw.update(blocks)
        return ParamVector(**kw)

    def with_bb(self, flat):
        k = self.mu.size
        flat = np.asarray(flat, dtype=np.float64)
        return self.replace(mu=flat[:k], theta=flat[k:])

    def with_gp(self, flat):
        k1 = self.lam.size
        k2 = k1 + self.alpha.size
        flat = np.asarray(flat, dtype=np.float64)
        return self.replace(lam=flat[:k1], alpha=flat[k1:k2], delta=flat[k2:])

    @classmethod
    def zeros(cls, designs):
        return cls(**{comp: np.zeros(k) for comp, k in designs.sizes().items()})


@dataclass(frozen=True)
class NaturalParams:
    mu: np.ndarray
    theta: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    delta: np.ndarray
    # 1 - mu evaluated without cancellation
    one_minus_mu: np.ndarray = None

    def __post_init__(self):
        for comp in COMPONENTS:
            object.__setattr__(self, comp, _frozen(np.atleast_1d(getattr(self, comp))))
        omm = 1.0 - self.mu if self.one_minus_mu is None else self.one_minus_mu
        object.__setattr__(self, "one_minus_mu", _frozen(np.atleast_1d(omm)))

    @property
    def M(self):
        return self.alpha.shape[0]

    @property
    def p(self):
        return self.lam.shape[0] // self.alpha.shape[0]


def logistic(z):
    """Overflow-free logistic function, returns ``(expit(z), expit(-z))``."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    big = 1.0 / (1.0 + e)
    small = e / (1.0 + e)
    pos = z >= 0
    return np.where(pos, big, small), np.where(pos, small, big)


def _linear(comp, Z, beta):
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[1] != beta.shape[0]:
        raise ConfigurationError(f"{comp}: design has {Z.shape[1]} columns, "
                                 f"coefficient vector has {beta.shape[0]}")
    return Z @ beta


def _exp_link(comp, eta):
    with np.errstate(over="ignore"):
        out = np.exp(eta)
    bad = ~np.isfinite(out) | (out <= 0.0)
    if np.any(bad):
        raise NonFiniteParameterError(comp, int(np.flatnonzero(bad)[0]))
    return out


def evaluate_links(params: ParamVector, designs: DesignSet) -> NaturalParams:
    """Map coefficients to ``mu`` (logit link) and ``theta, lam, alpha, delta`` (log link)."""
    mu, omm = logistic(_linear("mu", designs.mu, params.mu))
    return NaturalParams(
        mu=mu,
        theta=_exp_link("theta", _linear("theta", designs.theta, params.theta)),
        lam=_exp_link("lam", _linear("lam", designs.lam, params.lam)),
        alpha=_exp_link("alpha", _linear("alpha", designs.alpha, params.alpha)),
        delta=_exp_link("delta", _linear("delta", designs.delta, params.delta)),
        one_minus_mu=omm,
    )


def to_classical(mu, theta, alpha, delta):
    """Usual beta(a, b) and gamma(c, d) parameters: ``a=mu/theta, b=(1-mu)/theta,
    c=alpha/delta, d=1/delta``."""
    mu, theta = np.asarray(mu, dtype=float), np.asarray(theta, dtype=float)
    alpha, delta = np.asarray(alpha, dtype=float), np.asarray(delta, dtype=float)
    return mu / theta, (1.0 - mu) / theta, alpha / delta, 1.0 / delta


def to_natural(a, b, c, d):
    """Inverse of :func:`to_classical`."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    c, d = np.asarray(c, dtype=float), np.asarray(d, dtype=float)
    return a / (a + b), 1.0 / (a + b), c / d, 1.0 / d


def classical_parametrization(natural: NaturalParams, index):
    """``(a, b, c, d)`` for unit ``g`` under condition ``h``, ``index=(g, h)``."""
    g, h = index
    M, p = natural.M, natural.p
    if not (0 <= g < M and 0 <= h < p):
        raise IndexError(f"index {index} outside M={M}, p={p}")
    row = g * p + h
    a, b, c, d = to_classical(natural.mu[row], natural.theta[row],
                              natural.alpha[g], natural.delta[g])
    return float(a), float(b), float(c), float(d)
