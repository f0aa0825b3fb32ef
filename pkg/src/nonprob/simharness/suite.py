"""Estimators available to the Monte Carlo engine, all reported on the mean scale."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .._cells import label_key
from ..diagnostics import npa_covariance
from ..estimators import (
    CalibrationSpec,
    PropensityFit,
    calibrate,
    calibration_estimate,
    composite,
    default_epsilon,
    default_metric,
    dummies,
    expansion,
    fit_propensity,
    intercept,
    ipw,
    linear_in_label,
    nn_match,
    post_stratified,
    reference_ipw,
    sm_domain_means,
    sm_estimate,
    split_population,
    totals_from_sample,
    two_phase_sm,
)
from ..errors import ConfigError
from ..popgen import NonProbSample, Population, ProbSample
from ..uncertainty import calibration_variance, h0_test, poststrat_variance


@dataclass
class Replicate:
    pop: Population
    b: NonProbSample
    s: Optional[ProbSample]
    settings: dict

    @property
    def N(self) -> int:
        return self.pop.N

    @cached_property
    def sizes(self) -> dict:
        return self.pop.stratum_sizes()


@dataclass(frozen=True)
class Output:
    name: str
    value: float
    truth: float
    variance: Optional[float] = None


@dataclass(frozen=True)
class SuiteEntry:
    run: Callable  # Replicate -> (list[Output], dict of per-replicate diagnostics)
    needs_s: bool = False
    s_needs_y: bool = False
    outputs: Optional[Callable] = None  # (settings, pop) -> output names, when not just the entry name


T_MAPS = {"linear": linear_in_label, "intercept": intercept}


def _t_map(settings, pop):
    kind = settings.get("t_map", "linear")
    if kind == "dummies":
        return dummies(sorted(pop.stratum_sizes()))
    if kind not in T_MAPS:
        raise ConfigError(f"unknown t_map {kind!r}")
    return T_MAPS[kind]


def _expansion(r: Replicate):
    return [Output("expansion", expansion(r.b, r.N).value / r.N, r.pop.mean)], {}


def _post_stratified(r: Replicate):
    est = post_stratified(r.b, r.sizes)
    var = poststrat_variance(r.b, r.sizes, expand_phat=r.settings.get("expand_phat", True)).value
    return [Output("post_stratified", est.value / r.N, r.pop.mean, var / r.N**2)], {}


def _calibration(r: Replicate):
    t_map = _t_map(r.settings, r.pop)
    if r.settings.get("totals", "census") == "census":
        totals = np.asarray(t_map(r.pop.x), dtype=float).sum(axis=0)
    else:
        totals, _ = totals_from_sample(r.s, t_map)
    fit = calibrate(r.b, CalibrationSpec(t_map=t_map, totals=totals, N=r.N))
    value = calibration_estimate(fit, r.b).value / r.N
    var = calibration_variance(fit, r.b, r.sizes).value / r.N**2
    return [Output("calibration", value, r.pop.mean, var)], {"min_weight_negative": float(fit.weights.min() < 0)}


def _ipw_model(model):
    def run(r: Replicate):
        mode = r.settings.get("propensity_mode", "census")
        kw = {"stratum_sizes": r.sizes} if mode == "census" else {"s": r.s}
        fit = fit_propensity(r.b, mode=mode, model=model, t_map=_t_map(r.settings, r.pop), **kw)
        est = ipw(r.b, fit, N=r.N)
        return [Output(f"ipw_{model}", est.value / r.N, r.pop.mean)], {"clamped": float(est.diagnostics["clamped"])}

    return run


def _ipw_known(r: Replicate):
    sizes = r.sizes
    probs = {}
    for lab in sizes:
        probs[lab] = float(r.pop.p_true[r.pop.x == lab].mean())
    est = ipw(r.b, PropensityFit.from_cell_probabilities(probs), N=r.N)
    return [Output("ipw_known", est.value / r.N, r.pop.mean)], {}


def _reference_ipw(r: Replicate):
    est = reference_ipw(r.b, r.s, r.N, model=r.settings.get("reference_model", "saturated"),
                        t_map=_t_map(r.settings, r.pop))
    return [Output("reference_ipw", est.value / r.N, r.pop.mean)], {"overlap": float(est.diagnostics["overlap"])}


def _metric(r: Replicate):
    pop_sd = None if r.pop.z is None else r.pop.z.std()
    return default_metric(r.s, r.b, pop_sd=pop_sd)


def _sample_matching(r: Replicate):
    match = nn_match(r.s, r.b, _metric(r))
    out = [Output("sample_matching", sm_estimate(r.s, match, N=r.N).value / r.N, r.pop.mean)]
    if r.settings.get("domains"):
        for lab, v in sm_domain_means(r.s, match, r.s.x).items():
            truth = float(r.pop.y[r.pop.x == lab].mean())
            out.append(Output(f"sample_matching[x={lab}]", v, truth))
    return out, {"max_match_distance": match.diagnostics["max_distance"]}


def _sm_outputs(settings, pop):
    names = ["sample_matching"]
    if settings.get("domains"):
        names += [f"sample_matching[x={label_key(lab)}]" for lab in np.unique(pop.x)]
    return names


def _two_phase(r: Replicate):
    metric = _metric(r)
    eps = r.settings.get("epsilon")
    if eps is None:
        eps = r.settings.get("epsilon_scale", 1.0) * default_epsilon(r.b, metric)
    est = two_phase_sm(r.s, r.b, epsilon=eps, metric=metric, N=r.N)
    diag = {
        "S0_hat_share": est.diagnostics["S0_hat_share"],
        "S0_true_share": float(np.mean(r.pop.p_true[r.s.members] == 0)),
    }
    diag["S0_share_abs_error"] = abs(diag["S0_hat_share"] - diag["S0_true_share"])
    return [Output("two_phase_sm", est.value / r.N, r.pop.mean)], diag


def _split(r: Replicate):
    est = split_population(r.b, r.s, r.N)
    return [Output("split_population", est.value, r.pop.mean)], {}


def _composite(r: Replicate):
    est = composite(r.b, r.s, r.N, gamma="auto")
    return [Output("composite_auto", est.value, r.pop.mean)], {"gamma_hat": est.diagnostics["gamma"]}


def _h0(r: Replicate):
    res = h0_test(r.b, r.s, level=r.settings.get("h0_level", 0.05))
    return [], {"h0_reject": float(res.reject), "h0_statistic": res.statistic}


def _npa(r: Replicate):
    rep = npa_covariance(r.b.indicator(r.N).astype(float), r.pop.y)
    return [], {"npa_cov_y": rep.cov_N}


SUITE = {
    "expansion": SuiteEntry(_expansion),
    "post_stratified": SuiteEntry(_post_stratified),
    "calibration": SuiteEntry(_calibration),
    "ipw_logistic": SuiteEntry(_ipw_model("logistic")),
    "ipw_saturated": SuiteEntry(_ipw_model("saturated")),
    "ipw_known": SuiteEntry(_ipw_known),
    "reference_ipw": SuiteEntry(_reference_ipw, needs_s=True),
    "sample_matching": SuiteEntry(_sample_matching, needs_s=True, outputs=_sm_outputs),
    "two_phase_sm": SuiteEntry(_two_phase, needs_s=True),
    "split_population": SuiteEntry(_split, needs_s=True, s_needs_y=True),
    "composite_auto": SuiteEntry(_composite, needs_s=True, s_needs_y=True),
    "h0_test": SuiteEntry(_h0, needs_s=True, s_needs_y=True, outputs=lambda settings, pop: []),
    "npa_covariance": SuiteEntry(_npa, outputs=lambda settings, pop: []),
}


def output_names(name: str, settings: dict, pop: Population) -> list:
    entry = SUITE[name]
    return [name] if entry.outputs is None else entry.outputs(settings, pop)
