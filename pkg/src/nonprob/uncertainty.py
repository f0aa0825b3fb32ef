"""Variance estimators, the test of ybar_B against the complement mean, and relative efficiency.

The B-sample variances assume independent Bernoulli selection with a common
propensity inside each cell, estimated by n_xB / N_x.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy import stats

from ._cells import cell_sums, label_key, sizes_arrays
from .errors import ConfigError, DataError, DegenerateError, DesignError, EmptyCellError
from .estimators.base import _check_complement, hajek_mean
from .estimators.calibration import CalibrationFit
from .popgen import Design, NonProbSample, Population, ProbSample, draw_s_sample


@dataclass(frozen=True)
class VarianceEstimate:
    value: float
    method: str
    components: Optional[dict] = None

    def __post_init__(self):
        if not self.value >= 0:
            raise DegenerateError(f"negative variance {self.value} from {self.method}")


@dataclass(frozen=True)
class H0TestResult:
    statistic: float
    reject: bool
    level: float
    critical_value: float
    p_value: float
    complement_mean_estimate: float
    complement_variance: float
    diagnostics: dict = field(default_factory=dict)


def _bernoulli_cell_variance(levels, sizes, n_cells, ss_cells, method):
    empty = (n_cells == 0) & (sizes > 0)
    if empty.any():
        raise EmptyCellError([label_key(v) for v in levels[empty]])
    live = sizes > 0
    inv_p = np.zeros_like(sizes)
    inv_p[live] = sizes[live] / n_cells[live]
    comp = (inv_p - 1.0) * inv_p * ss_cells
    comp[~live] = 0.0
    components = {label_key(lab): float(c) for lab, c in zip(levels, comp)}
    return VarianceEstimate(float(comp.sum()), method, components)


def poststrat_variance(b: NonProbSample, stratum_sizes: Mapping, expand_phat: bool = False) -> VarianceEstimate:
    """sum_x (1/p_x - 1)(1/p_x) sum_{B_x} y^2 with p_x = n_xB / N_x.

    ``expand_phat=True`` adds the term from expanding the estimated p_x, which
    amounts to centring y at the cell mean ybar_xB.
    """
    levels, sizes = sizes_arrays(stratum_sizes)
    try:
        _, n_x, sum_x = cell_sums(b.x, b.y, levels)
    except KeyError as exc:
        raise DataError(f"B-sample label {exc.args[0]!r} has no stratum size") from None
    _, _, ss = cell_sums(b.x, b.y**2, levels)
    if expand_phat:
        with np.errstate(invalid="ignore", divide="ignore"):
            ss = ss - np.where(n_x > 0, sum_x**2 / np.maximum(n_x, 1), 0.0)
        ss = np.maximum(ss, 0.0)
    method = "poststrat_bernoulli_expanded" if expand_phat else "poststrat_bernoulli"
    return _bernoulli_cell_variance(levels, sizes, n_x, ss, method)


def calibration_variance(fit: CalibrationFit, b: NonProbSample, stratum_sizes: Mapping) -> VarianceEstimate:
    """sum_t (1/p_t - 1)(1/p_t) sum_{B_t} (y - t' beta)^2 with p_t = n_tB / N_t.

    t-cells are the distinct rows of t(x); N_t adds up N_x over the x-labels
    mapping to the same row.
    """
    if fit.t_map is None:
        raise ConfigError("calibration fit lacks its t_map; cannot form t-cells")
    if fit.residuals.shape[0] != b.n:
        raise ConfigError("calibration fit was produced from a different B-sample")
    levels, sizes = sizes_arrays(stratum_sizes)
    t_pop = np.asarray(fit.t_map(levels), dtype=float)
    rows, inv_pop = np.unique(t_pop, axis=0, return_inverse=True)
    inv_pop = inv_pop.ravel()
    n_cells = rows.shape[0]
    # t is a function of x, so each B-member's t-cell follows from its label
    order = np.argsort(levels, kind="stable")
    idx = order[np.clip(np.searchsorted(levels[order], b.x), 0, len(levels) - 1)]
    bad = levels[idx] != b.x
    if np.any(bad):
        raise DataError(f"B-sample label {label_key(b.x[np.flatnonzero(bad)[0]])!r} has no stratum size")
    inv_b = inv_pop[idx]
    N_t = np.bincount(inv_pop, weights=sizes, minlength=n_cells)
    n_t = np.bincount(inv_b, minlength=n_cells).astype(float)
    ss = np.bincount(inv_b, weights=fit.residuals**2, minlength=n_cells)
    labels = np.array(["(" + ",".join(f"{v:g}" for v in r) + ")" for r in rows])
    return _bernoulli_cell_variance(labels, N_t, n_t, ss, "calibration_bernoulli")


def design_variance_hajek(s: ProbSample) -> VarianceEstimate:
    """Linearised variance of the Hajek mean.

    SRS and stratified SRS use the without-replacement formula per stratum
    with N_h = sum_{S_h} d_i; Poisson uses sum (1 - pi)(r / pi)^2.
    """
    y = s.require_y()
    n_hat = float(np.sum(s.d))
    r = (y - np.sum(s.d * y) / n_hat) / n_hat
    if s.design in ("srs", "stratified"):
        comps = {}
        for lab in np.unique(s.strata):
            m = s.strata == lab
            n_h = int(m.sum())
            N_h = float(np.sum(s.d[m]))
            f_h = n_h / N_h
            if n_h < 2:
                if f_h >= 1 - 1e-12:
                    comps[label_key(lab)] = 0.0
                    continue
                raise DesignError(f"stratum {label_key(lab)} has a single member; variance inestimable")
            s2 = float(np.var(r[m], ddof=1))
            comps[label_key(lab)] = max(N_h**2 * (1 - f_h) * s2 / n_h, 0.0)
        return VarianceEstimate(float(sum(comps.values())), f"hajek_linearised_{s.design}", comps)
    if s.design == "poisson":
        v = float(np.sum((1 - s.pi) * (r / s.pi) ** 2))
        return VarianceEstimate(v, "hajek_linearised_poisson")
    raise DesignError(f"unsupported design {s.design!r}")


def h0_test(b: NonProbSample, s: ProbSample, level: float = 0.05) -> H0TestResult:
    """eta = (ybar_B - ybar_w)^2 / V(ybar_w), referred to chi-square(1)."""
    if not 0 < level < 1:
        raise ConfigError("level must lie in (0, 1)")
    _check_complement(b, s)
    est = hajek_mean(s).value
    var = design_variance_hajek(s).value
    if not var > 0:
        raise DegenerateError("complement-mean variance estimate is zero; test undefined")
    eta = (b.mean - est) ** 2 / var
    crit = float(stats.chi2.ppf(1 - level, df=1))
    return H0TestResult(
        statistic=eta,
        reject=bool(eta > crit),
        level=level,
        critical_value=crit,
        p_value=float(stats.chi2.sf(eta, df=1)),
        complement_mean_estimate=est,
        complement_variance=var,
        diagnostics={"ybar_B": b.mean, "n_B": b.n, "n_S": s.n},
    )


def population_hajek_variance(y: np.ndarray, strata: np.ndarray, design: str, sizes: dict) -> float:
    """Exact design variance of the Hajek mean for fixed per-stratum sizes.

    ``y`` and ``strata`` cover the whole frame; ``sizes`` maps stratum to n_h
    (single stratum 0 for SRS). Poisson designs are not covered.
    """
    if design not in ("srs", "stratified"):
        raise DesignError(f"closed-form variance only for SRS-type designs, not {design!r}")
    N_f = y.shape[0]
    v = 0.0
    for lab, n_h in sizes.items():
        m = strata == lab
        N_h = int(m.sum())
        if n_h > N_h:
            raise DesignError(f"stratum {lab}: size {n_h} exceeds frame size {N_h}")
        if n_h == 0 or N_h < 2:
            continue
        S2 = float(np.var(y[m], ddof=1))
        v += (N_h / N_f) ** 2 * (1 - n_h / N_h) * S2 / n_h
    return v


def relative_efficiency(
    pop: Population,
    b: NonProbSample,
    design: Design,
    method: str = "formula",
    reps: int = 2000,
    seed: int = 0,
) -> float:
    """(1 - W_B)^2 V(ybar_w on U minus B) / V(ybar' on U), same design and sizes."""
    if design.kind == "poisson":
        raise DesignError("relative efficiency is implemented for SRS-type designs")
    w_b = b.n / pop.N
    keep = ~b.indicator(pop.N)
    if design.kind == "srs":
        sizes = {0: design.n}
        strata_u = np.zeros(pop.N, dtype=int)
    else:
        # fixed per-stratum sizes as realised on the U minus B frame
        levels, counts = np.unique(pop.x[keep], return_counts=True)
        sizes = {}
        for lab, c in zip(levels, counts):
            lab = label_key(lab)
            sizes[lab] = int(round(design.fractions[lab] * c)) if design.fractions else int(design.sizes.get(lab, 0))
        strata_u = pop.x
    if method == "formula":
        v_w = population_hajek_variance(pop.y[keep], strata_u[keep], design.kind, sizes)
        v_full = population_hajek_variance(pop.y, strata_u, design.kind, sizes)
    elif method == "mc":
        fixed = Design(kind="stratified", sizes=sizes, observe_y=True) if design.kind == "stratified" else Design(
            kind="srs", n=design.n, observe_y=True
        )
        ss = np.random.SeedSequence(seed)
        est_w, est_full = np.empty(reps), np.empty(reps)
        for r, child in enumerate(ss.spawn(reps)):
            s1, s2 = child.generate_state(2)
            est_w[r] = hajek_mean(draw_s_sample(pop, fixed, exclude=b, seed=int(s1))).value
            est_full[r] = hajek_mean(draw_s_sample(pop, fixed, seed=int(s2))).value
        v_w, v_full = float(np.var(est_w, ddof=1)), float(np.var(est_full, ddof=1))
    else:
        raise ConfigError(f"unknown method {method!r}")
    if not v_full > 0:
        raise DegenerateError("variance of the full-population design is zero; RE undefined")
    return (1 - w_b) ** 2 * v_w / v_full
