"""Reference-cell design construction from a declarative model specification.

A model specification names categorical factors (levels, reference level,
and whether the factor is fixed per unit or varies across conditions) and,
for each of the five regression components, a list of terms. A term is a
``*``-joined product of selectors, each either ``factor`` (every
non-reference level) or ``factor[level]`` (one level). An intercept is
included unless the formula sets ``intercept: false``.

Column names follow the reference-cell convention: ``intercept``, the
level label for a main effect, ``*``-joined labels for interactions. A
label is qualified as ``factor=level`` when the same level label occurs in
more than one factor.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import yaml

from .infer import FitOptions
from .model import COMPONENTS, ConfigurationError, DesignSet, ParamVector

UNIT_COMPONENTS = ("alpha", "delta")
_FORMULA_KEYS = {"mu": "mu", "theta": "theta", "lambda": "lam", "lam": "lam",
                 "alpha": "alpha", "delta": "delta"}
DISPLAY = {"mu": "mu", "theta": "theta", "lam": "lambda", "alpha": "alpha", "delta": "delta"}


class SpecError(ValueError):
    """Invalid model specification."""


@dataclass(frozen=True)
class Factor:
    name: str
    levels: tuple
    reference: str
    scope: str = "condition"

    def __post_init__(self):
        levels = tuple(str(v) for v in self.levels)
        if len(levels) < 1 or len(set(levels)) != len(levels):
            raise SpecError(f"factor {self.name}: levels must be distinct and non-empty")
        if any("*" in v or "[" in v for v in levels):
            raise SpecError(f"factor {self.name}: level labels may not contain '*' or '['")
        ref = str(self.reference) if self.reference is not None else levels[0]
        if ref not in levels:
            raise SpecError(f"factor {self.name}: reference {ref!r} is not a level")
        if self.scope not in ("unit", "condition"):
            raise SpecError(f"factor {self.name}: scope must be 'unit' or 'condition'")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "reference", ref)

    @property
    def contrasts(self):
        return tuple(v for v in self.levels if v != self.reference)


@dataclass(frozen=True)
class Term:
    # each part: (factor name, tuple of selected non-reference levels)
    parts: tuple
    source: str

    def columns(self, factors, label):
        """Yield ``(name, ((factor, level), ...))`` for every column of the term."""
        choices = [[(f, lv) for lv in levels] for f, levels in self.parts]
        for combo in itertools.product(*choices):
            yield "*".join(label(f, lv) for f, lv in combo), combo


def parse_term(text, factors):
    parts = []
    seen = set()
    for piece in str(text).split("*"):
        piece = piece.strip()
        if not piece:
            raise SpecError(f"empty selector in term {text!r}")
        if "[" in piece:
            if not piece.endswith("]"):
                raise SpecError(f"malformed selector {piece!r} in term {text!r}")
            name, level = piece[:-1].split("[", 1)
            name, level = name.strip(), level.strip()
        else:
            name, level = piece, None
        if name not in factors:
            raise SpecError(f"term {text!r}: unknown factor {name!r}")
        if name in seen:
            raise SpecError(f"term {text!r}: factor {name!r} repeated")
        seen.add(name)
        fac = factors[name]
        if level is None:
            levels = fac.contrasts
        elif level not in fac.levels:
            raise SpecError(f"term {text!r}: {name!r} has no level {level!r}")
        elif level == fac.reference:
            raise SpecError(f"term {text!r}: {level!r} is the reference level of {name!r}")
        else:
            levels = (level,)
        if not levels:
            raise SpecError(f"term {text!r}: factor {name!r} has no non-reference level")
        parts.append((name, levels))
    return Term(tuple(parts), str(text))


@dataclass(frozen=True)
class Formula:
    terms: tuple
    intercept: bool = True


@dataclass(frozen=True)
class ModelSpec:
    factors: dict
    formulas: dict
    coefficients: dict = field(default=None)
    options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self):
        missing = [c for c in COMPONENTS if c not in self.formulas]
        if missing:
            raise SpecError(f"formulas missing for {', '.join(DISPLAY[c] for c in missing)}")
        for comp in UNIT_COMPONENTS:
            for term in self.formulas[comp].terms:
                for fname, _ in term.parts:
                    if self.factors[fname].scope != "unit":
                        raise SpecError(
                            f"{comp} term {term.source!r} uses condition-level factor {fname!r}; "
                            "alpha and delta may only depend on unit-level factors")
        for comp in COMPONENTS:
            names = self.column_names(comp)
            if len(set(names)) != len(names):
                raise SpecError(f"{DISPLAY[comp]} formula produces duplicate columns: {names}")
        if self.coefficients is not None:
            for comp, values in self.coefficients.items():
                unknown = set(values) - set(self.column_names(comp))
                if unknown:
                    raise SpecError(f"{DISPLAY[comp]} coefficients name unknown columns {sorted(unknown)}")

    # -- naming -----------------------------------------------------------

    def _label(self, fname, level):
        clashes = sum(level in f.levels for f in self.factors.values())
        return level if clashes == 1 else f"{fname}={level}"

    def columns(self, comp):
        formula = self.formulas[comp]
        cols = [("intercept", ())] if formula.intercept else []
        for term in formula.terms:
            cols.extend(term.columns(self.factors, self._label))
        return cols

    def column_names(self, comp):
        return [name for name, _ in self.columns(comp)]

    def parameter_names(self):
        """``(component, column name)`` for every coefficient, in fitting order."""
        return [(c, name) for c in COMPONENTS for name in self.column_names(c)]

    def describe(self, comp, name):
        if name == "intercept":
            ref = ", ".join(f"{f.name}={f.reference}" for f in self.factors.values()
                            if comp not in UNIT_COMPONENTS or f.scope == "unit")
            return f"reference cell ({ref})" if ref else "intercept"
        return "effect of " + " and ".join(
            f"{fname}={lv}" for fname, lv in dict(self.columns(comp))[name])

    # -- design matrices --------------------------------------------------

    def design_rows(self, comp, settings):
        """Design rows for a list of ``{factor: level}`` mappings."""
        cols = self.columns(comp)
        Z = np.zeros((len(settings), len(cols)))
        for i, setting in enumerate(settings):
            for j, (_, combo) in enumerate(cols):
                Z[i, j] = all(str(setting[f]) == lv for f, lv in combo)
        return Z

    def build_designs(self, covariates, M, p, check_rank=True):
        """Designs from per-row covariate levels (``{factor: array of length M*p}``)."""
        for fname, fac in self.factors.items():
            if fname not in covariates:
                raise ConfigurationError(f"covariate column {fname!r} missing from data")
            vals = np.asarray(covariates[fname]).astype(str)
            if vals.shape != (M * p,):
                raise ConfigurationError(f"covariate {fname!r} has {vals.shape} entries, need {M * p}")
            bad = sorted(set(vals) - set(fac.levels))
            if bad:
                raise ConfigurationError(f"covariate {fname!r} has undeclared levels {bad}")
            if fac.scope == "unit":
                per_unit = vals.reshape(M, p)
                inconsistent = np.flatnonzero(np.any(per_unit != per_unit[:, :1], axis=1))
                if inconsistent.size:
                    raise ConfigurationError(
                        f"unit-level factor {fname!r} varies within unit index {inconsistent[0]}")
        rows = [{f: str(covariates[f][i]) for f in self.factors} for i in range(M * p)]
        unit_rows = rows[::p]
        mats = {}
        for comp in COMPONENTS:
            mats[comp] = self.design_rows(comp, unit_rows if comp in UNIT_COMPONENTS else rows)
            if check_rank:
                self._check_rank(comp, mats[comp])
        return DesignSet(names={c: self.column_names(c) for c in COMPONENTS}, **mats)

    def _check_rank(self, comp, Z):
        if Z.shape[1] == 0:
            return
        names = self.column_names(comp)
        rank = 0
        for j in range(Z.shape[1]):
            r = np.linalg.matrix_rank(Z[:, : j + 1])
            if r == rank:
                raise SpecError(f"{DISPLAY[comp]} design is not of full column rank: "
                                f"term column {names[j]!r} is empty or collinear")
            rank = r

    # -- simulation layout -------------------------------------------------

    def unit_factors(self):
        return [f for f in self.factors.values() if f.scope == "unit"]

    def condition_factors(self):
        return [f for f in self.factors.values() if f.scope == "condition"]

    def conditions(self):
        """All condition-level combinations, in declaration order."""
        facs = self.condition_factors()
        combos = list(itertools.product(*[f.levels for f in facs])) or [()]
        return [dict(zip([f.name for f in facs], c)) for c in combos]

    def subgroups(self):
        facs = self.unit_factors()
        combos = list(itertools.product(*[f.levels for f in facs])) or [()]
        return [dict(zip([f.name for f in facs], c)) for c in combos]

    def balanced_layout(self, M):
        """Covariates for ``M`` units cycling through the unit-level subgroups."""
        groups, conds = self.subgroups(), self.conditions()
        p = len(conds)
        cov = {f: [] for f in self.factors}
        for g in range(M):
            grp = groups[g % len(groups)]
            for cond in conds:
                for f in self.factors:
                    cov[f].append(grp.get(f, cond.get(f)))
        cov = {f: np.array(v, dtype=object) for f, v in cov.items()}
        cond_ids = ["-".join(c.values()) or "c0" for c in conds]
        return cov, p, cond_ids

    def coefficient_vector(self):
        if self.coefficients is None:
            raise SpecError("model specification has no coefficients section")
        blocks = {}
        for comp in COMPONENTS:
            values = self.coefficients.get(comp, {})
            blocks[comp] = np.array([float(values.get(name, 0.0)) for name in self.column_names(comp)])
        return ParamVector(**blocks)


def _parse_formula(entry):
    if entry is None:
        return [], True
    if isinstance(entry, dict):
        return list(entry.get("terms") or []), bool(entry.get("intercept", True))
    if isinstance(entry, (list, tuple)):
        return list(entry), True
    raise SpecError(f"formula must be a list of terms or a mapping, got {entry!r}")


def spec_from_dict(doc):
    if not isinstance(doc, dict):
        raise SpecError("model specification must be a mapping")
    raw_factors = doc.get("factors") or {}
    factors = {}
    for name, d in raw_factors.items():
        d = d or {}
        factors[str(name)] = Factor(str(name), tuple(d.get("levels", ())),
                                    d.get("reference"), d.get("scope", "condition"))
    raw_formulas = doc.get("formulas") or {}
    formulas = {}
    for key, entry in raw_formulas.items():
        if key not in _FORMULA_KEYS:
            raise SpecError(f"unknown formula {key!r}")
        terms, intercept = _parse_formula(entry)
        formulas[_FORMULA_KEYS[key]] = Formula(
            tuple(parse_term(t, factors) for t in terms), intercept)
    for comp in COMPONENTS:
        formulas.setdefault(comp, Formula(()))
    coefficients = None
    if doc.get("coefficients") is not None:
        coefficients = {}
        for key, values in doc["coefficients"].items():
            if key not in _FORMULA_KEYS:
                raise SpecError(f"unknown coefficient block {key!r}")
            coefficients[_FORMULA_KEYS[key]] = {str(k): float(v) for k, v in (values or {}).items()}
    opts = doc.get("options") or {}
    known = set(FitOptions.__dataclass_fields__)
    unknown = set(opts) - known
    if unknown:
        raise SpecError(f"unknown options {sorted(unknown)}")
    options = FitOptions(**{k: type(getattr(FitOptions(), k))(v) for k, v in opts.items()})
    return ModelSpec(factors, formulas, coefficients, options)


def spec_to_dict(spec: ModelSpec):
    doc = {
        "factors": {name: {"levels": list(f.levels), "reference": f.reference, "scope": f.scope}
                    for name, f in spec.factors.items()},
        "formulas": {DISPLAY[c]: {"terms": [t.source for t in spec.formulas[c].terms],
                                  "intercept": spec.formulas[c].intercept}
                     for c in COMPONENTS},
        "options": dict(spec.options.__dict__),
    }
    if spec.coefficients is not None:
        doc["coefficients"] = {DISPLAY[c]: dict(v) for c, v in spec.coefficients.items()}
    return doc


def load_spec(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SpecError(f"{path}: {exc}") from exc
    return spec_from_dict(doc)
