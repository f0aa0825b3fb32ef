"""Empirical checks on the selection mechanism.

None of these checks can certify non-informative selection: every report
that passes says so in its notes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from ._cells import cell_sums, label_key, sizes_arrays
from .errors import ConfigError, DataError, InvalidPropensityError
from .estimators.matching import MatchAssignment
from .popgen import NonProbSample

IDENTITY_RTOL = 1e-8
N_PERMUTATIONS = 999

PASS_CAVEAT = (
    "A pass is not evidence of valid selection: the constant fit p = n_B/N and the "
    "saturated cell fit reproduce these identities whatever the selection mechanism."
)
Z_CAVEAT = (
    "Agreement on z supports non-informative selection for y only if z is correlated "
    "with y; a z good enough to check with is usually better used in the estimator itself."
)


@dataclass(frozen=True)
class NpaReport:
    cov_N: float
    mean_delta: float
    sd_delta: float
    sd_target: float
    cells: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CheckReport:
    residuals: dict
    tolerances: dict
    satisfied: dict
    notes: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def all_satisfied(self) -> bool:
        return all(self.satisfied.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "residual", "tolerance", "satisfied"])
        for name, r in self.residuals.items():
            w.writerow([name, repr(float(r)), repr(float(self.tolerances[name])), str(self.satisfied[name]).lower()])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = []
        for name, r in self.residuals.items():
            mark = "PASS" if self.satisfied[name] else "FAIL"
            lines.append(f"[{mark}] {name}: residual {float(r):.6g} (tolerance {float(self.tolerances[name]):.3g})")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"


def _report(residuals: dict, tolerances: dict, extra_notes=(), details=None) -> CheckReport:
    satisfied = {k: bool(abs(residuals[k]) <= tolerances[k]) for k in residuals}
    notes = list(extra_notes)
    if any(satisfied.values()):
        notes.insert(0, PASS_CAVEAT)
    return CheckReport(residuals, tolerances, satisfied, notes, details or {})


def npa_covariance(delta, v) -> NpaReport:
    """Covariance of the inclusion indicator and ``v`` under point mass 1/N per unit."""
    delta = np.asarray(delta, dtype=float)
    v = np.asarray(v, dtype=float)
    if delta.shape != v.shape or delta.ndim != 1 or delta.shape[0] < 1:
        raise DataError("delta and target must be equal-length vectors")
    md, mv = delta.mean(), v.mean()
    cov = float(np.mean((delta - md) * (v - mv)))
    return NpaReport(cov_N=cov, mean_delta=float(md), sd_delta=float(delta.std()), sd_target=float(v.std()))


def _random_subset_sums(v, k, n_perm, rng, max_cells=2_000_000):
    """Sums of ``v`` over ``n_perm`` uniformly random k-subsets."""
    n = v.shape[0]
    out = np.empty(n_perm)
    step = max(1, max_cells // max(n, 1))
    for start in range(0, n_perm, step):
        m = min(step, n_perm - start)
        keys = rng.random((m, n))
        pick = np.argpartition(keys, k - 1, axis=1)[:, :k] if k < n else np.tile(np.arange(n), (m, 1))
        out[start:start + m] = v[pick].sum(axis=1)
    return out


def _perm_covs(delta, v, n_perm, rng):
    """Covariances of ``v`` with ``n_perm`` random permutations of delta."""
    n = delta.shape[0]
    k = int(delta.sum())
    if k == 0 or k == n:
        return np.zeros(n_perm)
    return _random_subset_sums(v - v.mean(), k, n_perm, rng) / n


def permutation_band(delta, v, level: float = 0.01, n_perm: int = N_PERMUTATIONS, seed: int = 0):
    """Two-sided (level/2, 1 - level/2) quantiles of the covariance with delta permuted."""
    rng = np.random.default_rng(seed)
    covs = _perm_covs(np.asarray(delta, dtype=float), np.asarray(v, dtype=float), n_perm, rng)
    return float(np.quantile(covs, level / 2)), float(np.quantile(covs, 1 - level / 2))


def npa_cellwise(
    cells,
    delta,
    e,
    known_cells=None,
    level: float = 0.05,
    n_perm: int = N_PERMUTATIONS,
    seed: Optional[int] = None,
) -> NpaReport:
    """Per-cell covariance of delta and residual ``e`` over the population.

    Cells with no B-member are flagged as coverage violations. With ``seed``
    given, each cell's |cov| is also compared with a within-cell permutation
    null at ``level``.
    """
    cells = np.asarray(cells)
    delta = np.asarray(delta, dtype=float)
    e = np.asarray(e, dtype=float)
    if not (cells.shape == delta.shape == e.shape):
        raise DataError("cells, delta and residuals must have equal length")
    levels = np.unique(cells)
    if known_cells is not None:
        unknown = set(label_key(v) for v in levels) - set(label_key(v) for v in known_cells)
        if unknown:
            raise DataError(f"unknown cell labels {sorted(unknown)}")
    rng = None if seed is None else np.random.default_rng(seed)
    per_cell, flags = {}, {}
    for lab in levels:
        m = cells == lab
        rep = npa_covariance(delta[m], e[m])
        key = label_key(lab)
        entry = {"cov": rep.cov_N, "mean_delta": rep.mean_delta, "N_t": int(m.sum())}
        cell_flags = []
        if rep.mean_delta == 0:
            cell_flags.append("no B-members: selection negligible in this cell")
        if rng is not None:
            null = np.abs(_perm_covs(delta[m], e[m], n_perm, rng))
            p_value = (1 + np.sum(null >= abs(rep.cov_N) * (1 - 1e-12))) / (n_perm + 1)
            entry["perm_p_value"] = float(p_value)
            if p_value <= level:
                cell_flags.append("covariance outside the permutation null")
        per_cell[key] = entry
        if cell_flags:
            flags[key] = cell_flags
    overall = npa_covariance(delta, e)
    return NpaReport(overall.cov_N, overall.mean_delta, overall.sd_delta, overall.sd_target, per_cell, flags)


def propensity_checks(p_hat, b: NonProbSample, N: int, stratum_sizes: Optional[Mapping] = None,
                      rtol: float = IDENTITY_RTOL) -> CheckReport:
    """Residuals of sum_B 1/p - N and sum_U p - n_B.

    ``p_hat`` is either one value per population unit (indexed by unit id), or
    with ``stratum_sizes`` a mapping from cell label to fitted p_x.
    """
    if stratum_sizes is not None:
        levels, sizes = sizes_arrays(stratum_sizes)
        p_cells = np.array([p_hat[label_key(lab)] for lab in levels], dtype=float)
        _, n_b, _ = cell_sums(b.x, None, levels)
        if np.any((n_b > 0) & ~((p_cells > 0) & (p_cells <= 1))):
            raise InvalidPropensityError("fitted propensity outside (0, 1] for a cell with B-members")
        live = n_b > 0
        r1 = float(np.sum(n_b[live] / p_cells[live]) - N)
        r2 = float(np.sum(sizes * p_cells) - b.n)
    else:
        p = np.asarray(p_hat, dtype=float)
        if p.shape != (N,):
            raise ConfigError(f"p_hat has shape {p.shape}, expected ({N},)")
        p_b = p[b.members]
        if np.any(~((p_b > 0) & (p_b <= 1))):
            raise InvalidPropensityError("fitted propensity outside (0, 1] for a B-member")
        r1 = float(np.sum(1.0 / p_b) - N)
        r2 = float(np.sum(p) - b.n)
    tol = {"inverse_sum_equals_N": rtol * N, "sum_equals_n_B": rtol * max(b.n, 1)}
    return _report({"inverse_sum_equals_N": r1, "sum_equals_n_B": r2}, tol)


def z_checks(
    b: NonProbSample,
    Z: float,
    Zbar: Mapping,
    stratum_sizes: Mapping,
    p_hat: Optional[Mapping] = None,
    rtol: float = IDENTITY_RTOL,
    null_band: Optional[dict] = None,
) -> CheckReport:
    """Observed z-checks: z_B against sum p_x N_x Zbar_x, and Z against sum n_xB zbar_xB / p_x.

    ``p_hat`` defaults to the saturated n_xB / N_x. ``null_band`` (from
    :func:`z_check_null_band`) replaces the identity tolerance with the
    permutation null half-widths.
    """
    if b.z is None:
        raise ConfigError("z is not observed on the B-sample")
    levels, sizes = sizes_arrays(stratum_sizes)
    missing = [label_key(v) for v in levels if label_key(v) not in Zbar]
    if missing:
        raise DataError(f"population z means missing for cells {missing}")
    zbar_pop = np.array([Zbar[label_key(v)] for v in levels], dtype=float)
    _, n_b, zsum = cell_sums(b.x, b.z, levels)
    p = n_b / sizes if p_hat is None else np.array([p_hat[label_key(v)] for v in levels], dtype=float)
    live = n_b > 0
    z_b = float(b.z.sum())
    r1 = z_b - float(np.sum(p * sizes * zbar_pop))
    r2 = float(Z) - float(np.sum(zsum[live] / p[live]))
    per_cell = {
        label_key(v): {"Zbar_x": float(zp), "zbar_xB": float(zs / nb) if nb else float("nan")}
        for v, zp, zs, nb in zip(levels, zbar_pop, zsum, n_b)
    }
    if null_band is None:
        scale_1 = max(abs(z_b), 1.0)
        scale_2 = max(abs(float(Z)), 1.0)
        tol = {"z_B_vs_expected": rtol * scale_1, "Z_vs_inverse_weighted": rtol * scale_2}
    else:
        tol = dict(null_band)
    return _report({"z_B_vs_expected": r1, "Z_vs_inverse_weighted": r2}, tol, [Z_CAVEAT], {"cells": per_cell})


def z_check_null_band(x_pop, z_pop, n_xB: Mapping, level: float = 0.01,
                      n_perm: int = N_PERMUTATIONS, seed: int = 0) -> dict:
    """Half-widths of the z-check residuals when B is replaced by random
    within-cell subsets of the observed cell sizes."""
    x_pop = np.asarray(x_pop)
    z_pop = np.asarray(z_pop, dtype=float)
    rng = np.random.default_rng(seed)
    r1 = np.zeros(n_perm)
    r2 = np.zeros(n_perm)
    for lab in np.unique(x_pop):
        k = int(n_xB.get(label_key(lab), 0))
        if k == 0:
            continue
        zc = z_pop[x_pop == lab]
        N_x, zbar = zc.shape[0], zc.mean()
        zs = _random_subset_sums(zc, k, n_perm, rng)
        r1 += zs - k * zbar
        r2 += N_x * zbar - zs * N_x / k
    q = 1 - level
    return {"z_B_vs_expected": float(np.quantile(np.abs(r1), q)),
            "Z_vs_inverse_weighted": float(np.quantile(np.abs(r2), q))}


def match_quality(match: MatchAssignment) -> dict:
    d = match.distance[np.isfinite(match.distance)]
    if d.size == 0:
        raise DataError("match assignment has no finite distances")
    return {
        "max": float(d.max()),
        "mean": float(d.mean()),
        "p95": float(np.percentile(d, 95)),
        "fraction_exact": float(np.mean(d == 0)),
        "unmatched": int((~np.isfinite(match.distance)).sum()),
    }
