"""Long-format CSV ingestion/export and atomic report writing."""

from __future__ import annotations

import csv
import json
import os
import tempfile

import numpy as np

from .model import RepeatedCountData

REQUIRED = ("unit_id", "condition_id", "x", "n")


class LoadError(ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = f"{path}:" if path else ""
        where += f"line {line}: " if line is not None else " " if path else ""
        super().__init__(f"{where}{message}".strip())


def _int(text, field, line, path):
    try:
        value = int(text.strip())
    except (ValueError, AttributeError):
        raise LoadError(f"{field}={text!r} is not an integer", line, path) from None
    return value


def load_csv(path, unit_level=()):
    """Read ``unit_id, condition_id, x, n`` plus covariate columns.

    Returns ``(data, covariates)`` where ``covariates`` maps each extra column
    to an array of ``M*p`` strings in unit-major, condition order. Units and
    conditions are ordered by first appearance. Columns listed in
    ``unit_level`` must be constant within each unit.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError("file is empty", None, path) from None
        header = [h.strip() for h in header]
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise LoadError(f"missing required column(s) {', '.join(missing)}", 1, path)
        if len(set(header)) != len(header):
            raise LoadError("duplicate column names in header", 1, path)
        col = {h: i for i, h in enumerate(header)}
        extra = [h for h in header if h not in REQUIRED]
        units, conditions = {}, {}
        records = {}
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise LoadError(f"expected {len(header)} fields, found {len(row)}", line, path)
            uid = row[col["unit_id"]].strip()
            cid = row[col["condition_id"]].strip()
            if not uid or not cid:
                raise LoadError("empty unit_id or condition_id", line, path)
            x = _int(row[col["x"]], "x", line, path)
            n = _int(row[col["n"]], "n", line, path)
            if n < 0 or x < 0:
                raise LoadError(f"negative count (x={x}, n={n})", line, path)
            if x > n:
                raise LoadError(f"successes exceed trials (x={x}, n={n})", line, path)
            units.setdefault(uid, line)
            conditions.setdefault(cid, len(conditions))
            if (uid, cid) in records:
                raise LoadError(f"duplicate record for unit {uid!r}, condition {cid!r}", line, path)
            records[(uid, cid)] = (x, n, [row[col[h]].strip() for h in extra], line)
    if not records:
        raise LoadError("no data rows", None, path)
    cond_ids = list(conditions)
    unit_ids = list(units)
    M, p = len(unit_ids), len(cond_ids)
    xs = np.zeros((M, p), dtype=np.int64)
    ns = np.zeros((M, p), dtype=np.int64)
    cov = {h: np.empty(M * p, dtype=object) for h in extra}
    unit_set = set(unit_level)
    unknown = unit_set - set(extra)
    if unknown:
        raise LoadError(f"unit-level covariate(s) {sorted(unknown)} not in file", 1, path)
    for g, uid in enumerate(unit_ids):
        first = None
        for h, cid in enumerate(cond_ids):
            rec = records.get((uid, cid))
            if rec is None:
                raise LoadError(f"unit {uid!r} has no record for condition {cid!r} "
                                f"(every unit needs all {p} conditions)", units[uid], path)
            x, n, vals, line = rec
            xs[g, h], ns[g, h] = x, n
            for name, v in zip(extra, vals):
                cov[name][g * p + h] = v
            if first is None:
                first = dict(zip(extra, vals))
            else:
                for name in unit_set:
                    if dict(zip(extra, vals))[name] != first[name]:
                        raise LoadError(f"unit-level covariate {name!r} changes within unit {uid!r}",
                                        line, path)
    return RepeatedCountData(xs, ns, tuple(unit_ids), tuple(cond_ids)), cov


def _atomic_write(path, write):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_csv(path, data: RepeatedCountData, covariates=None):
    covariates = covariates or {}
    names = list(covariates)

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(REQUIRED) + names)
        p = data.p
        for g, uid in enumerate(data.unit_ids):
            for h, cid in enumerate(data.condition_ids):
                w.writerow([uid, cid, int(data.x[g, h]), int(data.n[g, h])]
                           + [covariates[c][g * p + h] for c in names])

    _atomic_write(path, write)


def write_text(path, text):
    _atomic_write(path, lambda fh: fh.write(text))


def write_json(path, doc):
    _atomic_write(path, lambda fh: (json.dump(doc, fh, indent=2, allow_nan=True), fh.write("\n")))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
