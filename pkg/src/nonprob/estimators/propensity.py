"""Propensity models for B-membership and the inverse propensity weighting estimators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
from scipy.special import expit

from .._cells import cell_sums, label_key, sizes_arrays
from ..errors import (
    ConfigError,
    DataError,
    EmptyCellError,
    InvalidPropensityError,
    PropensityFitError,
)
from ..popgen import NonProbSample, ProbSample
from .base import Estimate

CLAMP = 1e-6
SCORE_TOL = 1e-10
MAX_ITER = 100

_SOURCE = {
    "census": "census",
    "pseudo-population": "pseudo-population-S",
    "unweighted-S": "unweighted-S",
}


@dataclass(frozen=True)
class PropensityFit:
    """Fitted B-inclusion propensities.

    For cell-level models (``saturated``, ``known``) ``params`` holds one
    probability per entry of ``levels``; for ``logistic`` it holds the
    coefficients on ``t_map(x)``.
    """

    model: str
    params: np.ndarray
    source: str
    levels: Optional[np.ndarray] = None
    t_map: Optional[Callable] = None
    N: Optional[float] = None
    iterations: int = 0
    score_norm: float = 0.0
    assumptions: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_cell_probabilities(cls, probs: Mapping, source="oracle"):
        levels, p = sizes_arrays(probs)
        return cls(model="known", params=p, source=source, levels=levels)

    def predict_raw(self, x) -> np.ndarray:
        x = np.asarray(x)
        if self.model == "logistic":
            return expit(np.asarray(self.t_map(x), dtype=float) @ self.params)
        order = np.argsort(self.levels, kind="stable")
        pos = np.clip(np.searchsorted(self.levels[order], x), 0, len(self.levels) - 1)
        idx = order[pos]
        bad = self.levels[idx] != x
        if np.any(bad):
            raise DataError(f"label {label_key(x[np.flatnonzero(bad)[0]])!r} not covered by the propensity fit")
        return self.params[idx]

    def predict(self, x) -> np.ndarray:
        """Fitted propensities; logistic values are clamped to [1e-6, 1 - 1e-6]."""
        p = self.predict_raw(x)
        if self.model == "logistic":
            p = np.clip(p, CLAMP, 1 - CLAMP)
        return p

    def clamped(self, x) -> bool:
        if self.model != "logistic":
            return False
        p = self.predict_raw(x)
        return bool(np.any((p < CLAMP) | (p > 1 - CLAMP)))


def _loglik(success, weight, eta_c):
    # log p = -log(1 + e^-eta), log(1 - p) = -log(1 + e^eta)
    return -float(np.sum(success * np.logaddexp(0, -eta_c) + (weight - success) * np.logaddexp(0, eta_c)))


def logistic_newton(T, success, weight, max_iter=MAX_ITER, tol=SCORE_TOL):
    """Solve T^T (success - weight * expit(T eta)) = 0 by damped Newton.

    Rows of ``T`` are covariate cells, ``weight`` the (design-)weighted cell
    counts and ``success`` the weighted B-member counts. The stopping rule is
    on the score scaled by the total weight.
    """
    T = np.asarray(T, dtype=float)
    total = float(weight.sum())
    eta = np.zeros(T.shape[1])
    trace = []
    ll = _loglik(success, weight, T @ eta)
    for it in range(1, max_iter + 1):
        p = expit(T @ eta)
        score = T.T @ (success - weight * p)
        norm = float(np.max(np.abs(score))) / total
        trace.append(norm)
        if norm <= tol:
            return eta, it - 1, norm, trace
        info = (T * (weight * p * (1 - p))[:, None]).T @ T
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise PropensityFitError("singular information matrix (collinear or separated cells)", trace) from None
        for _ in range(60):
            cand = eta + step
            ll_cand = _loglik(success, weight, T @ cand)
            if ll_cand >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        else:
            raise PropensityFitError("step-halving failed to improve the likelihood", trace)
        eta, ll = cand, ll_cand
    p = expit(T @ eta)
    norm = float(np.max(np.abs(T.T @ (success - weight * p)))) / total
    trace.append(norm)
    if norm <= tol:
        return eta, max_iter, norm, trace
    raise PropensityFitError(
        f"no convergence after {max_iter} iterations (score norm {norm:.3g}); possible separation", trace
    )


def _cell_data(b, mode, x_pop, stratum_sizes, s):
    """Cell labels, weighted totals and weighted B-member counts for one estimating equation."""
    if mode == "census":
        if stratum_sizes is None:
            if x_pop is None:
                raise ConfigError("census fitting needs x for the population or the stratum sizes")
            levels, sizes, _ = cell_sums(x_pop)
            sizes = sizes.astype(float)
        else:
            levels, sizes = sizes_arrays(stratum_sizes)
        try:
            _, n_b, _ = cell_sums(b.x, None, levels)
        except KeyError as exc:
            raise DataError(f"B-sample label {exc.args[0]!r} absent from the population cells") from None
        return levels, n_b.astype(float), sizes
    if mode not in _SOURCE:
        raise ConfigError(f"unknown fitting mode {mode!r}")
    if s is None:
        raise ConfigError(f"mode {mode!r} needs a probability sample with x")
    delta = np.isin(s.members, b.members).astype(float)
    w = s.d if mode == "pseudo-population" else np.ones(s.n)
    levels, _, weight = cell_sums(s.x, w)
    _, _, success = cell_sums(s.x, w * delta, levels)
    return levels, success, weight


def fit_propensity(
    b: NonProbSample,
    *,
    mode: str = "census",
    model: str = "saturated",
    x_pop=None,
    stratum_sizes: Optional[Mapping] = None,
    s: Optional[ProbSample] = None,
    t_map: Optional[Callable] = None,
    max_iter: int = MAX_ITER,
) -> PropensityFit:
    """Fit p(x) from the census, pseudo-population or unweighted-S estimating equation."""
    levels, success, weight = _cell_data(b, mode, x_pop, stratum_sizes, s)
    live = weight > 0
    assumptions = () if mode == "census" else ("S-sampling non-informative for B-membership given x",)
    N_hat = float(weight.sum())
    if model == "saturated":
        empty = live & (success == 0)
        if empty.any():
            raise EmptyCellError([label_key(v) for v in levels[empty]])
        p = np.where(live, success / np.where(live, weight, 1.0), 0.0)
        return PropensityFit(
            model="saturated", params=p, source=_SOURCE.get(mode, mode), levels=levels,
            N=N_hat, assumptions=assumptions,
        )
    if model != "logistic":
        raise ConfigError(f"unknown propensity model {model!r}")
    if t_map is None:
        raise ConfigError("logistic model needs t_map")
    T = np.asarray(t_map(levels[live]), dtype=float)
    eta, iters, norm, trace = logistic_newton(T, success[live], weight[live], max_iter=max_iter)
    return PropensityFit(
        model="logistic", params=eta, source=_SOURCE.get(mode, mode), t_map=t_map,
        N=N_hat, iterations=iters, score_norm=norm, assumptions=assumptions,
        diagnostics={"score_trace": trace},
    )


def ipw(b: NonProbSample, fit: PropensityFit, N: Optional[int] = None) -> Estimate:
    p = fit.predict(b.x)
    if np.any(~(p > 0)):
        raise InvalidPropensityError("non-positive fitted propensity for a B-member")
    value = float(np.sum(b.y / p))
    if N is None and fit.source == "census" and fit.N:
        N = int(round(fit.N))
    diag = {"model": fit.model, "source": fit.source, "clamped": fit.clamped(b.x)}
    if fit.assumptions:
        diag["assumes"] = list(fit.assumptions)
    return Estimate(value, f"ipw_{fit.model}", N=N, diagnostics=diag)


def normalise_propensities(p: np.ndarray, N: float) -> np.ndarray:
    """Rescale p by the constant that makes sum(1 / p) equal N."""
    return p * (np.sum(1.0 / p) / N)


def reference_propensities(
    b: NonProbSample,
    s: ProbSample,
    N: int,
    model: str = "saturated",
    t_map: Optional[Callable] = None,
):
    """Propensities of the B-members from pooled B and S membership.

    p_i is proportional to Pr(S = 1 | x) times the pooled membership odds
    q(x) / (1 - q(x)); Pr(S = 1 | x) is taken as n_Sx / sum_{S_x} d. The
    constant is fixed by sum_B 1 / p = N.
    """
    levels, _, _ = cell_sums(np.concatenate([b.x, s.x]))
    _, n_b, _ = cell_sums(b.x, None, levels)
    _, n_s, d_s = cell_sums(s.x, s.d, levels)
    if model == "saturated":
        lonely = (n_b == 0) | (n_s == 0)
        if lonely.any():
            raise EmptyCellError(
                [label_key(v) for v in levels[lonely]],
                f"only one membership class in pooled cell(s) {[label_key(v) for v in levels[lonely]]}; ratio inestimable",
            )
        q = n_b / (n_b + n_s)
    elif model == "logistic":
        if t_map is None:
            raise ConfigError("logistic model needs t_map")
        missing = (n_b > 0) & (n_s == 0)
        if missing.any():
            raise EmptyCellError(
                [label_key(v) for v in levels[missing]],
                f"no S-members in cell(s) {[label_key(v) for v in levels[missing]]}; Pr(S=1|x) inestimable",
            )
        eta, *_ = logistic_newton(np.asarray(t_map(levels), dtype=float), n_b.astype(float), (n_b + n_s).astype(float))
        q = expit(np.asarray(t_map(levels), dtype=float) @ eta)
    else:
        raise ConfigError(f"unknown propensity model {model!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        pi_x = np.where(n_s > 0, n_s / d_s, np.nan)
        ratio = pi_x * q / (1 - q)
    fit = PropensityFit(model="known", params=ratio, source="reference-pooled", levels=levels)
    p = normalise_propensities(fit.predict(b.x), N)
    return p


def reference_ipw(
    b: NonProbSample,
    s: ProbSample,
    N: int,
    model: str = "saturated",
    t_map: Optional[Callable] = None,
) -> Estimate:
    overlap = int(np.intersect1d(b.members, s.members).size)
    p = reference_propensities(b, s, N, model=model, t_map=t_map)
    if np.any(~(p > 0)):
        raise InvalidPropensityError("non-positive reference propensity for a B-member")
    value = float(np.sum(b.y / p))
    return Estimate(
        value, "reference_ipw", N=N,
        diagnostics={"model": model, "overlap": overlap, "duplicates_kept_per_role": overlap > 0},
    )
