"""CSV ingestion and export.

Schemas (header row mandatory, UTF-8, ``.`` decimal separator):

- population: ``unit_id,y,x,z,p_true,mu`` (z, mu may be empty)
- B-sample: ``unit_id,y,x[,z]``
- S-sample: ``unit_id,pi[,y][,x][,z][,stratum]``
- margins: ``x,N_x[,Zbar_x]`` or ``t_component,total``

Floats are written with ``repr`` so export followed by ingest is exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ._cells import label_key
from .errors import FrameError, ParseError
from .popgen import NonProbSample, Population, ProbSample


def parse_label(text: str):
    """Labels that look like integers become ints, anything else stays a string."""
    try:
        return int(text)
    except ValueError:
        return text


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(label_key(v))


def _read(path, required, optional=()):
    """Rows as dicts plus their 1-based line numbers; validates the header."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(path, 0, f"cannot open: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "file is empty; a header row is required") from None
        except UnicodeDecodeError:
            raise ParseError(path, 1, "file is not valid UTF-8") from None
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise ParseError(path, 1, f"missing column(s) {missing}; header is {header}")
        unknown = [c for c in header if c not in required and c not in optional]
        if unknown:
            raise ParseError(path, 1, f"unexpected column(s) {unknown}")
        if len(set(header)) != len(header):
            raise ParseError(path, 1, "duplicate column names")
        rows = []
        try:
            for lineno, rec in enumerate(reader, start=2):
                if not rec or all(not f.strip() for f in rec):
                    continue
                if len(rec) != len(header):
                    raise ParseError(path, lineno, f"expected {len(header)} fields, found {len(rec)}")
                rows.append((lineno, dict(zip(header, (f.strip() for f in rec)))))
        except UnicodeDecodeError:
            raise ParseError(path, len(rows) + 2, "file is not valid UTF-8") from None
    return header, rows


def _float(path, lineno, row, col, allow_empty=False):
    text = row[col]
    if text == "":
        if allow_empty:
            return math.nan
        raise ParseError(path, lineno, "empty value", col)
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, lineno, f"not a number: {text!r}", col) from None
    if not math.isfinite(v):
        raise ParseError(path, lineno, f"non-finite value {text!r}", col)
    return v


def _ids(path, rows):
    ids, seen = [], {}
    for lineno, row in rows:
        text = row["unit_id"]
        try:
            uid = int(text)
        except ValueError:
            raise ParseError(path, lineno, f"unit_id must be a non-negative integer, got {text!r}", "unit_id") from None
        if uid < 0:
            raise ParseError(path, lineno, f"unit_id must be non-negative, got {uid}", "unit_id")
        if uid in seen:
            raise ParseError(path, lineno, f"duplicate unit_id {uid} (first on line {seen[uid]})", "unit_id")
        seen[uid] = lineno
        ids.append(uid)
    return np.array(ids, dtype=int)


def _column(path, rows, col, allow_empty=False):
    return np.array([_float(path, ln, r, col, allow_empty) for ln, r in rows], dtype=float)


def _labels(rows, col):
    labels = [parse_label(r[col]) for _, r in rows]
    return np.array(labels) if labels else np.array([], dtype=int)


def _optional(path, header, rows, col):
    """Column values, or None when the column is absent or entirely empty."""
    if col not in header or all(r[col] == "" for _, r in rows):
        return None
    return _column(path, rows, col)


def _write(path, header, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rec in records:
            w.writerow([_fmt(v) for v in rec])


def write_population(pop: Population, path):
    z = [None] * pop.N if pop.z is None else pop.z
    mu = [None] * pop.N if pop.mu is None else pop.mu
    _write(path, ["unit_id", "y", "x", "z", "p_true", "mu"],
           zip(range(pop.N), pop.y, pop.x, z, pop.p_true, mu))


def read_population(path) -> Population:
    header, rows = _read(path, ["unit_id", "y", "x", "p_true"], ["z", "mu"])
    ids = _ids(path, rows)
    if not np.array_equal(np.sort(ids), np.arange(ids.shape[0])):
        raise ParseError(path, 2, "population unit ids must be 0..N-1")
    order = np.argsort(ids)
    p = _column(path, rows, "p_true")
    for (lineno, _), v in zip(rows, p):
        if not 0 <= v <= 1:
            raise ParseError(path, lineno, f"p_true {float(v)!r} outside [0, 1]", "p_true")
    z = _optional(path, header, rows, "z")
    mu = _optional(path, header, rows, "mu")
    return Population(
        y=_column(path, rows, "y")[order],
        x=_labels(rows, "x")[order],
        p_true=p[order],
        z=None if z is None else z[order],
        mu=None if mu is None else mu[order],
    )


def write_b_sample(b: NonProbSample, path):
    if b.z is None:
        _write(path, ["unit_id", "y", "x"], zip(b.members, b.y, b.x))
    else:
        _write(path, ["unit_id", "y", "x", "z"], zip(b.members, b.y, b.x, b.z))


def read_b_sample(path) -> NonProbSample:
    header, rows = _read(path, ["unit_id", "y", "x"], ["z"])
    if not rows:
        raise ParseError(path, 2, "B-sample file has no data rows")
    return NonProbSample(
        members=_ids(path, rows),
        y=_column(path, rows, "y"),
        x=_labels(rows, "x"),
        z=_optional(path, header, rows, "z"),
    )


def write_s_sample(s: ProbSample, path):
    cols = {"unit_id": s.members, "pi": s.pi}
    if s.y is not None:
        cols["y"] = s.y
    cols["x"] = s.x
    if s.z is not None:
        cols["z"] = s.z
    if s.strata is not None and np.unique(s.strata).shape[0] > 1:
        cols["stratum"] = s.strata
    _write(path, list(cols), zip(*cols.values()))


def read_s_sample(path, b: Optional[NonProbSample] = None, design: Optional[str] = None) -> ProbSample:
    """Read an S file; with ``b`` given the S frame is U minus B and overlaps are rejected."""
    header, rows = _read(path, ["unit_id", "pi"], ["y", "x", "z", "stratum"])
    if not rows:
        raise ParseError(path, 2, "S-sample file has no data rows")
    ids = _ids(path, rows)
    pi = _column(path, rows, "pi")
    for (lineno, _), v in zip(rows, pi):
        if not 0 < v <= 1:
            raise ParseError(path, lineno, f"inclusion probability {float(v)!r} outside (0, 1]", "pi")
    if b is not None:
        in_b = np.isin(ids, b.members)
        if in_b.any():
            lineno = rows[int(np.flatnonzero(in_b)[0])][0]
            raise FrameError(
                f"{path}:{lineno}: unit {ids[in_b][0]} is in the B-sample but the S frame is U minus B "
                f"({int(in_b.sum())} overlapping unit(s))"
            )
    x = _labels(rows, "x") if "x" in header else np.zeros(len(rows), dtype=int)
    strata = _labels(rows, "stratum") if "stratum" in header else None
    if design is None:
        design = "stratified" if strata is not None else "srs"
    return ProbSample(
        members=ids, pi=pi, x=x, design=design,
        y=_optional(path, header, rows, "y"),
        z=_optional(path, header, rows, "z"),
        strata=strata,
        excluded=None if b is None else b.members,
    )


@dataclass(frozen=True)
class Margins:
    """Either stratum sizes ``{x: N_x}`` or named calibration totals."""

    sizes: Optional[dict] = None
    names: Optional[list] = None
    totals: Optional[np.ndarray] = None
    zbar: Optional[dict] = None

    @property
    def N(self) -> Optional[int]:
        return None if self.sizes is None else int(sum(self.sizes.values()))


def read_margins(path) -> Margins:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            first = [h.strip() for h in next(csv.reader(fh), [])]
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(path, 1, f"cannot read header: {exc}") from None
    if "t_component" in first:
        _, rows = _read(path, ["t_component", "total"])
        names, seen = [], {}
        for lineno, r in rows:
            if r["t_component"] in seen:
                raise ParseError(path, lineno, f"duplicate component {r['t_component']!r} "
                                                f"(first on line {seen[r['t_component']]})", "t_component")
            seen[r["t_component"]] = lineno
            names.append(r["t_component"])
        return Margins(names=names, totals=_column(path, rows, "total"))
    header, rows = _read(path, ["x", "N_x"], ["Zbar_x"])
    sizes, seen = {}, {}
    for lineno, r in rows:
        lab = parse_label(r["x"])
        if lab in seen:
            raise ParseError(path, lineno, f"duplicate stratum label {lab!r} (first on line {seen[lab]})", "x")
        seen[lab] = lineno
        v = _float(path, lineno, r, "N_x")
        if v != int(v) or v < 0:
            raise ParseError(path, lineno, f"N_x must be a non-negative integer, got {r['N_x']!r}", "N_x")
        sizes[lab] = int(v)
    if not sizes:
        raise ParseError(path, 2, "margins file has no data rows")
    zbar = None
    if "Zbar_x" in header:
        zbar = {parse_label(r["x"]): _float(path, ln, r, "Zbar_x") for ln, r in rows}
    return Margins(sizes=sizes, zbar=zbar)


def write_margins(path, sizes: Optional[dict] = None, names=None, totals=None, zbar: Optional[dict] = None):
    if sizes is not None and zbar is not None:
        _write(path, ["x", "N_x", "Zbar_x"], ((k, v, float(zbar[k])) for k, v in sizes.items()))
    elif sizes is not None:
        _write(path, ["x", "N_x"], sizes.items())
    else:
        _write(path, ["t_component", "total"], zip(names, totals))
