"""Command-line front end: ``bbgp {fit,lrtest,predict,simulate}``.

Exit codes: 0 success, 1 non-convergence, 2 input error.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys

import numpy as np
import yaml

from . import __version__
from .design import DISPLAY, SpecError, load_spec, spec_from_dict, spec_to_dict
from .infer import (
    ConvergenceError,
    DesignRow,
    InitializationError,
    UsageError,
    fit,
    lr_test,
    predict_covariance,
    predict_summaries,
)
from .io import LoadError, load_csv, read_json, save_csv, write_json, write_text
from .model import COMPONENTS, ConfigurationError, DomainError, ParamVector
from .sim import SimSpec, sample_dataset

EXIT_OK, EXIT_NONCONVERGED, EXIT_INPUT = 0, 1, 2
FORMAT = "bbgp-fit/1"

logger = logging.getLogger("bbgp")


class InputError(ValueError):
    pass


def _num(x):
    x = float(x)
    return None if not math.isfinite(x) else x


def _unnum(x):
    return float("nan") if x is None else float(x)


def _matrix(a):
    return [[_num(v) for v in row] for row in np.atleast_2d(a)]


def _unmatrix(rows, shape):
    if not rows:
        return np.zeros(shape)
    return np.array([[_unnum(v) for v in row] for row in rows], dtype=float).reshape(shape)


def _fmt(v, width=10, digits=4):
    if v is None or not math.isfinite(v):
        return f"{'NA':>{width}}"
    return f"{v:>{width}.{digits}f}"


def _table(header, rows):
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    line = lambda cells: "  ".join(str(c).ljust(w) if i < 2 else str(c).rjust(w)
                                   for i, (c, w) in enumerate(zip(cells, widths)))
    out = [line(header), "  ".join("-" * w for w in widths)]
    out.extend(line(r) for r in rows)
    return "\n".join(out)


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _options(spec, args):
    return spec.options.replace(
        tol=getattr(args, "tol", None), max_iter=getattr(args, "max_iter", None),
        staged=True if getattr(args, "staged", False) else None,
        seed=getattr(args, "seed", None))


def _load(data_path, spec):
    data, covariates = load_csv(data_path, unit_level=[f.name for f in spec.unit_factors()])
    designs = spec.build_designs(covariates, data.M, data.p)
    return data, designs


def _fit_document(spec, data, data_path, result):
    coefs = []
    for res in result:
        for (comp, name), b, se, ok in zip(res.names, res.beta, res.std_errors, res.identified):
            coefs.append({"component": DISPLAY[comp], "name": name,
                          "description": spec.describe(comp, name),
                          "estimate": _num(b), "std_error": _num(se), "identified": bool(ok)})
    comps = {}
    for key, res in zip(("beta_binomial", "gamma_poisson"), result):
        comps[key] = {
            "loglik_kernel": res.loglik, "loglik": res.loglik_full, "aic": res.aic, "bic": res.bic,
            "n_params": res.n_params, "iterations": res.iterations, "converged": res.converged,
            "grad_max": res.grad_max, "messages": list(res.messages),
            "trace": [dict(iteration=i + 1, loglik=t.loglik, step_norm=t.step_norm,
                           grad_max=t.grad_max, ridge=t.ridge, halvings=t.halvings)
                      for i, t in enumerate(res.trace)],
            "covariance": _matrix(res.covariance),
            "null_space": _matrix(res.null_space) if res.null_space.size else [],
        }
    return {
        "format": FORMAT,
        "spec": spec_to_dict(spec),
        "data": {"path": os.path.abspath(data_path), "units": data.M, "conditions": list(data.condition_ids),
                 "digest": result.bb.data_digest},
        "converged": result.converged,
        "loglik": result.loglik_full,
        "loglik_kernel": result.loglik,
        "aic": result.aic,
        "bic": result.bic,
        "n_params": result.n_params,
        "coefficients": coefs,
        "components": comps,
    }


def _fit_text(doc):
    lines = [f"bbgp fit report ({doc['data']['units']} units, "
             f"{len(doc['data']['conditions'])} conditions)", ""]
    titles = {"beta_binomial": ("Beta-binomial component", ("mu", "theta")),
              "gamma_poisson": ("Gamma-Poisson component", ("lambda", "alpha", "delta"))}
    for key, (title, comps) in titles.items():
        rows = [(f"{c['component']}[{c['name']}]", c["description"], _fmt(c["estimate"]),
                 _fmt(c["std_error"])) for c in doc["coefficients"] if c["component"] in comps]
        lines += [title, _table(("Parameter", "Description", "Estimate", "SE"), rows), ""]
    lines.append(f"log-likelihood {doc['loglik']:.4f}   AIC {doc['aic']:.2f}   "
                 f"BIC {doc['bic']:.2f}   parameters {doc['n_params']}")
    unidentified = [f"{c['component']}[{c['name']}]" for c in doc["coefficients"] if not c["identified"]]
    if unidentified:
        lines.append("not separately identified (SE shown as NA): " + ", ".join(unidentified))
    lines.append("")
    for key, (title, _) in titles.items():
        comp = doc["components"][key]
        status = "converged" if comp["converged"] else "NOT converged"
        lines.append(f"{title}: {status} after {comp['iterations']} iterations, "
                     f"max|gradient| {comp['grad_max']:.2e}")
        for t in comp["trace"]:
            lines.append(f"  iter {t['iteration']:3d}  loglik {t['loglik']:.8f}  step {t['step_norm']:.3e}"
                         f"  max|g| {t['grad_max']:.3e}  ridge {t['ridge']:.1e}  halvings {t['halvings']}")
        for m in comp["messages"]:
            lines.append(f"  note: {m}")
    return "\n".join(lines) + "\n"


def _emit(text, doc, out):
    sys.stdout.write(text)
    if out:
        root, ext = os.path.splitext(out)
        json_path = out if ext.lower() == ".json" else out + ".json"
        write_json(json_path, doc)
        write_text(os.path.splitext(json_path)[0] + ".txt", text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args):
    spec = load_spec(args.spec)
    data, designs = _load(args.data, spec)
    result = fit(data, designs, _options(spec, args))
    doc = _fit_document(spec, data, args.data, result)
    _emit(_fit_text(doc), doc, args.out)
    if not result.converged:
        logger.error("fit did not converge")
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_lrtest(args):
    full_spec, reduced_spec = load_spec(args.full), load_spec(args.reduced)
    fits = []
    for spec in (full_spec, reduced_spec):
        data, designs = _load(args.data, spec)
        res = fit(data, designs, _options(full_spec, args))
        if not res.converged:
            raise ConvergenceError("a model did not converge; the LR statistic is not valid")
        fits.append(res)
    test = lr_test(*fits)
    text = (f"LR = {test.lr_stat:.4f}, df = {test.df}, p={test.p_value:.3f}\n"
            f"  LR statistic {test.lr_stat!r}\n  p-value      {test.p_value!r}\n"
            f"  log-likelihood full {test.loglik_full:.6f}, reduced {test.loglik_reduced:.6f}\n")
    doc = {"lr_stat": test.lr_stat, "df": test.df, "p_value": test.p_value,
           "loglik_full": test.loglik_full, "loglik_reduced": test.loglik_reduced,
           "n_params_full": fits[0].n_params, "n_params_reduced": fits[1].n_params}
    _emit(text, doc, args.out)
    return EXIT_OK


def _fit_from_document(doc):
    if doc.get("format") != FORMAT:
        raise InputError(f"not a bbgp fit report (format {doc.get('format')!r})")
    spec = spec_from_dict(doc["spec"])
    blocks = {c: [] for c in COMPONENTS}
    keys = {DISPLAY[c]: c for c in COMPONENTS}
    for c in doc["coefficients"]:
        blocks[keys[c["component"]]].append(_unnum(c["estimate"]))
    params = ParamVector(**{c: np.array(v) for c, v in blocks.items()})
    expected = spec.parameter_names()
    got = [(keys[c["component"]], c["name"]) for c in doc["coefficients"]]
    if got != expected:
        raise InputError("fit report coefficients do not match its model specification")
    covs, nulls = [], []
    for key in ("beta_binomial", "gamma_poisson"):
        comp = doc["components"][key]
        k = comp["n_params"]
        covs.append(_unmatrix(comp["covariance"], (k, k)))
        nulls.append(_unmatrix(comp["null_space"], (k, -1)) if comp["null_space"] else np.zeros((k, 0)))
    k = sum(c.shape[0] for c in covs)
    cov = np.zeros((k, k))
    null = np.zeros((k, sum(n.shape[1] for n in nulls)))
    r = c = 0
    for cv, nl in zip(covs, nulls):
        cov[r:r + cv.shape[0], r:r + cv.shape[0]] = cv
        null[r:r + nl.shape[0], c:c + nl.shape[1]] = nl
        r += cv.shape[0]
        c += nl.shape[1]
    return spec, params, cov, null


def _row(spec, setting):
    label = " ".join(f"{f}={setting[f]}" for f in spec.factors)
    mats = {c: spec.design_rows(c, [setting])[0] for c in COMPONENTS}
    return DesignRow(label=label, **mats)


def _settings(spec, contrast):
    def check(s):
        s = {str(k): str(v) for k, v in (s or {}).items() if k != "label"}
        unknown = set(s) - set(spec.factors)
        if unknown:
            raise InputError(f"contrast names unknown factors {sorted(unknown)}")
        for f, v in s.items():
            if v not in spec.factors[f].levels:
                raise InputError(f"factor {f!r} has no level {v!r}")
        return s

    if contrast is None or contrast.get("rows") is None:
        rows = [{**g, **c} for g in spec.subgroups() for c in spec.conditions()]
    else:
        rows = [check(s) for s in contrast["rows"]]
    for s in rows:
        missing = set(spec.factors) - set(s)
        if missing:
            raise InputError(f"contrast row {s} does not set {sorted(missing)}")
    if contrast is None or contrast.get("covariance") is None:
        groups = spec.subgroups()
    else:
        groups = [check(s) for s in contrast["covariance"]]
    for g in groups:
        if set(g) != {f.name for f in spec.unit_factors()}:
            raise InputError(f"covariance entry {g} must set exactly the unit-level factors")
    return rows, groups


def _pm(v):
    est, se = v
    return f"{_fmt(est, 8, 3)} ({_fmt(se, 5, 3).strip()})"


def cmd_predict(args):
    doc = read_json(args.fit)
    if not doc.get("converged", False):
        raise ConvergenceError("refusing to summarise an unconverged fit")
    spec, params, cov, null = _fit_from_document(doc)
    contrast = None
    if args.contrast:
        with open(args.contrast, encoding="utf-8") as fh:
            contrast = yaml.safe_load(fh) or {}
        if not isinstance(contrast, dict):
            raise InputError("contrast file must be a mapping with 'rows' and/or 'covariance'")
    settings, groups = _settings(spec, contrast)
    rows = [_row(spec, s) for s in settings]
    summ = predict_summaries(params, rows, cov, null)
    out_doc = {"rows": [], "covariance": []}
    lines = ["Expected success probability and dispersion (estimate (SE))",
             _table(("Setting", "", "mu", "theta", "Var(pi)"),
                    [(r["label"], "", _pm(r["mu"]), _pm(r["theta"]), _pm(r["var_pi"])) for r in summ]),
             "", "Attempt rate",
             _table(("Setting", "", "lambda"), [(r["label"], "", _pm(r["lambda"])) for r in summ]),
             "", "Expected successes and attempts",
             _table(("Setting", "", "E(X)", "E(N)"),
                    [(r["label"], "", _pm(r["e_x"]), _pm(r["e_n"])) for r in summ]), ""]
    for r in summ:
        out_doc["rows"].append({"label": r["label"], **{k: {"estimate": _num(v[0]), "se": _num(v[1])}
                                                       for k, v in r.items() if k != "label"}})
    for g in groups:
        conds = spec.conditions()
        crow = [_row(spec, {**g, **c}) for c in conds]
        est, se = predict_covariance(params, crow, cov, null)
        names = []
        for c in conds:
            tag = "-".join(c.values()) or "c0"
            names += [f"X[{tag}]", f"N[{tag}]"]
        glabel = " ".join(f"{k}={v}" for k, v in g.items()) or "all units"
        body = [(n, "", *(_fmt(v, 8, 2) for v in est[i])) for i, n in enumerate(names)]
        lines += [f"Covariance of (X, N) across conditions: {glabel}",
                  _table(("", "", *names), body), ""]
        out_doc["covariance"].append({"group": g, "variables": names,
                                      "estimate": _matrix(est), "se": _matrix(se)})
    _emit("\n".join(lines), out_doc, args.out)
    return EXIT_OK


def cmd_simulate(args):
    spec = load_spec(args.spec)
    if args.units < 1:
        raise InputError("--units must be at least 1")
    params = spec.coefficient_vector()
    covariates, p, cond_ids = spec.balanced_layout(args.units)
    designs = spec.build_designs(covariates, args.units, p, check_rank=False)
    seed = spec.options.seed if args.seed is None else args.seed
    width = len(str(args.units))
    unit_ids = tuple(f"u{g + 1:0{width}d}" for g in range(args.units))
    data = sample_dataset(SimSpec(params, designs, seed=seed), 0, unit_ids, tuple(cond_ids))
    save_csv(args.out, data, covariates)
    sys.stdout.write(f"wrote {data.M} units x {data.p} conditions to {args.out} (seed {seed})\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="bbgp", description="Beta-binomial/gamma-Poisson regression for repeated count data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log fitting progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def fit_flags(p):
        p.add_argument("--tol", type=float, help="gradient tolerance (max |score|)")
        p.add_argument("--max-iter", type=int, help="Newton iteration cap")
        p.add_argument("--staged", action="store_true",
                       help="warm-start with main effects, then add interactions one at a time")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--out", help="write a JSON report here (and a .txt copy alongside)")

    p = sub.add_parser("fit", help="fit a model specification to a long-format CSV")
    p.add_argument("data")
    p.add_argument("spec")
    fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("lrtest", help="likelihood-ratio test of a reduced against a full model")
    p.add_argument("data")
    p.add_argument("full")
    p.add_argument("reduced")
    fit_flags(p)
    p.set_defaults(func=cmd_lrtest)

    p = sub.add_parser("predict", help="natural-scale summaries from a fit report")
    p.add_argument("fit", help="JSON report written by 'bbgp fit --out'")
    p.add_argument("contrast", nargs="?", help="YAML with 'rows' and 'covariance' settings")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="simulate a dataset from a specification with coefficients")
    p.add_argument("spec")
    p.add_argument("--units", type=int, required=True, help="number of units M")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_simulate)
    return parser


INPUT_ERRORS = (LoadError, SpecError, ConfigurationError, DomainError, UsageError, InputError,
                OSError, yaml.YAMLError, ValueError, KeyError, TypeError, FloatingPointError)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConvergenceError, InitializationError) as exc:
        print(f"bbgp: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except INPUT_ERRORS as exc:
        print(f"bbgp: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
