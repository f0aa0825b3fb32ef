"""Linear (least-squares distance) calibration of B-sample weights."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .._cells import label_key
from ..errors import ConfigError, DataError, EmptyCellError, RankDeficiencyError
from ..popgen import NonProbSample, ProbSample
from .base import Estimate

CONSTRAINT_RTOL = 1e-8


def dummies(levels: Sequence) -> Callable:
    """t(x) = one-hot indicator of the post-stratum, in the order of ``levels``."""
    levels = list(levels)
    lev = np.asarray(levels)
    order = np.argsort(lev, kind="stable")

    def t_map(x):
        x = np.asarray(x)
        pos = np.clip(np.searchsorted(lev[order], x), 0, len(levels) - 1)
        cols = order[pos]
        bad = lev[cols] != x
        if np.any(bad):
            raise DataError(f"label {label_key(x[np.flatnonzero(bad)[0]])!r} outside the calibration cells")
        out = np.zeros((x.shape[0], len(levels)))
        out[np.arange(x.shape[0]), cols] = 1.0
        return out

    t_map.names = [f"x={lab}" for lab in levels]
    return t_map


def intercept(x) -> np.ndarray:
    return np.ones((np.asarray(x).shape[0], 1))


intercept.names = ["1"]


def linear_in_label(x) -> np.ndarray:
    """t(x) = (1, x) for numerically coded labels."""
    x = np.asarray(x, dtype=float)
    return np.column_stack([np.ones_like(x), x])


linear_in_label.names = ["1", "x"]


@dataclass(frozen=True)
class CalibrationSpec:
    """What to calibrate to.

    ``initial``: ``uniform`` (N / n_B, needs ``N``), ``inverse_propensity``
    (``a`` holds p_i per B-member) or ``explicit`` (``a`` holds the weights).
    """

    t_map: Callable
    totals: np.ndarray
    initial: str = "uniform"
    N: Optional[int] = None
    a: Optional[np.ndarray] = None
    totals_cov: Optional[np.ndarray] = None

    def __post_init__(self):
        totals = np.atleast_1d(np.asarray(self.totals, dtype=float))
        if totals.ndim != 1 or totals.shape[0] < 1:
            raise ConfigError("calibration totals must be a non-empty vector")
        object.__setattr__(self, "totals", totals)
        if self.initial not in ("uniform", "inverse_propensity", "explicit"):
            raise ConfigError(f"unknown initial weight rule {self.initial!r}")
        if self.initial == "uniform" and not self.N:
            raise ConfigError("uniform initial weights need the population size N")
        if self.initial != "uniform" and self.a is None:
            raise ConfigError(f"initial rule {self.initial!r} needs the array a")

    @property
    def K(self) -> int:
        return self.totals.shape[0]

    @property
    def names(self):
        return list(getattr(self.t_map, "names", [f"t{k}" for k in range(self.K)]))

    def initial_weights(self, n: int) -> np.ndarray:
        if self.initial == "uniform":
            return np.full(n, self.N / n)
        a = np.asarray(self.a, dtype=float)
        if a.shape != (n,):
            raise ConfigError(f"initial array has shape {a.shape}, expected ({n},)")
        if self.initial == "inverse_propensity":
            if np.any(~(a > 0)):
                raise DataError("inverse-propensity initial weights need p_i > 0")
            return 1.0 / a
        return a.copy()


@dataclass(frozen=True)
class CalibrationFit:
    weights: np.ndarray
    beta_hat: np.ndarray
    residuals: np.ndarray
    t: np.ndarray
    N: Optional[int] = None
    t_map: Optional[Callable] = None
    diagnostics: dict = field(default_factory=dict)


def totals_from_sample(s: ProbSample, t_map: Callable):
    """Horvitz-Thompson totals sum_S d_i t_i and a with-replacement covariance."""
    t = np.asarray(t_map(s.x), dtype=float)
    dt = s.d[:, None] * t
    totals = dt.sum(axis=0)
    n = s.n
    if n > 1:
        dev = dt - dt.mean(axis=0)
        cov = n / (n - 1) * dev.T @ dev
    else:
        cov = np.full((t.shape[1], t.shape[1]), np.nan)
    return totals, cov


def _dependent_columns(gram: np.ndarray, tol: float = 1e-10):
    """Greedy scan: indices of columns that add nothing to the rank."""
    scale = max(float(np.max(np.abs(np.diag(gram)))), 1e-300)
    kept, dependent = [], []
    for k in range(gram.shape[0]):
        trial = kept + [k]
        sub = gram[np.ix_(trial, trial)]
        eig = np.linalg.eigvalsh(sub)
        if eig.min() <= tol * scale:
            dependent.append(k)
        else:
            kept.append(k)
    return dependent


def min_distance_weights(a: np.ndarray, C: np.ndarray, totals: np.ndarray, names=None):
    """Minimise sum (w_i - a_i)^2 subject to C^T w = totals.

    Stationarity gives w = a + C lam with (C^T C) lam = totals - C^T a, a
    K x K system.
    """
    gram = C.T @ C
    dependent = _dependent_columns(gram)
    if dependent:
        labels = [names[k] if names else k for k in dependent]
        raise RankDeficiencyError(labels)
    lam = np.linalg.solve(gram, totals - C.T @ a)
    w = a + C @ lam
    scale = max(float(np.max(np.abs(totals))), 1e-300)
    resid = float(np.max(np.abs(C.T @ w - totals))) / scale
    return w, lam, resid


def calibrate(b: NonProbSample, spec: CalibrationSpec) -> CalibrationFit:
    t = np.asarray(spec.t_map(b.x), dtype=float)
    if t.ndim != 2 or t.shape != (b.n, spec.K):
        raise ConfigError(f"t_map gives shape {t.shape}, expected ({b.n}, {spec.K})")
    names = spec.names
    zero = np.flatnonzero(~np.any(t != 0, axis=0))
    if zero.size:
        raise EmptyCellError([names[k] for k in zero], f"B-sample total of t is zero for {[names[k] for k in zero]}")

    a = spec.initial_weights(b.n)
    w, lam, resid = min_distance_weights(a, t, spec.totals, names)
    if resid > CONSTRAINT_RTOL:
        raise RankDeficiencyError([], f"calibration constraints not met (relative residual {resid:.3g})")

    wt = w[:, None] * t
    gram_w = wt.T @ t
    if np.linalg.cond(gram_w) > 1e12:
        raise RankDeficiencyError([], "weighted t^T t is singular; beta not identified")
    beta = np.linalg.solve(gram_w, wt.T @ b.y)
    residuals = b.y - t @ beta
    return CalibrationFit(
        weights=w,
        beta_hat=beta,
        residuals=residuals,
        t=t,
        N=spec.N,
        t_map=spec.t_map,
        diagnostics={"constraint_residual": resid, "min_weight": float(w.min()), "K": spec.K},
    )


def calibration_estimate(fit: CalibrationFit, b: NonProbSample) -> Estimate:
    if fit.weights.shape[0] != b.n:
        raise ConfigError("calibration fit was produced from a different B-sample")
    value = float(np.dot(fit.weights, b.y))
    return Estimate(value, "calibration", N=fit.N, diagnostics=dict(fit.diagnostics))
