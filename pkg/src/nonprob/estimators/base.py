"""Estimate record and the closed-form estimators of a total or mean."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .._cells import cell_sums, label_key, sizes_arrays
from ..errors import ConfigError, DataError, DegenerateError, EmptyCellError, FrameError
from ..popgen import NonProbSample, ProbSample


@dataclass(frozen=True)
class Estimate:
    value: float
    estimator_id: str
    target: str = "total"
    variance: Optional[float] = None
    N: Optional[int] = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.target not in ("total", "mean"):
            raise ConfigError(f"unknown target {self.target!r}")
        if self.variance is not None and not self.variance >= 0:
            raise DegenerateError(f"negative variance {self.variance} for {self.estimator_id}")

    def as_mean(self) -> "Estimate":
        if self.target == "mean":
            return self
        if not self.N:
            raise ConfigError("population size unknown; cannot convert total to mean")
        var = None if self.variance is None else self.variance / self.N**2
        return replace(self, value=self.value / self.N, variance=var, target="mean")

    def as_total(self) -> "Estimate":
        if self.target == "total":
            return self
        if not self.N:
            raise ConfigError("population size unknown; cannot convert mean to total")
        var = None if self.variance is None else self.variance * self.N**2
        return replace(self, value=self.value * self.N, variance=var, target="total")

    def to_record(self) -> str:
        var = "" if self.variance is None else repr(float(self.variance))
        diag = ";".join(f"{k}={_fmt(v)}" for k, v in sorted(self.diagnostics.items()))
        return f"{self.estimator_id},{self.target},{float(self.value)!r},{var},{diag}"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return "|".join(str(label_key(u)) for u in v)
    return str(label_key(v))


def expansion(b: NonProbSample, N: int) -> Estimate:
    if N < b.n:
        raise DataError(f"population size {N} is smaller than the B-sample size {b.n}")
    return Estimate(N * b.mean, "expansion", N=N, diagnostics={"n_B": b.n})


def _cell_means(b: NonProbSample, stratum_sizes: Mapping):
    levels, sizes = sizes_arrays(stratum_sizes)
    try:
        _, n_x, sum_x = cell_sums(b.x, b.y, levels)
    except KeyError as exc:
        raise DataError(f"B-sample label {exc.args[0]!r} has no stratum size") from None
    empty = (n_x == 0) & (sizes > 0)
    if empty.any():
        raise EmptyCellError([label_key(lab) for lab in levels[empty]])
    if np.any(n_x > sizes):
        bad = [label_key(lab) for lab in levels[n_x > sizes]]
        raise DataError(f"B-sample cell count exceeds the stratum size in {bad}")
    return levels, sizes, n_x, sum_x


def post_stratified(b: NonProbSample, stratum_sizes: Mapping) -> Estimate:
    levels, sizes, n_x, sum_x = _cell_means(b, stratum_sizes)
    live = sizes > 0
    value = float(np.sum(sizes[live] * sum_x[live] / n_x[live]))
    N = int(sizes.sum())
    return Estimate(value, "post_stratified", N=N, diagnostics={"cells": int(live.sum()), "n_B": b.n})


def collapse_cells(b: NonProbSample, stratum_sizes: Mapping, groups: Mapping):
    """Relabel cells through ``groups`` (old label -> new label), merging sizes.

    Labels missing from ``groups`` are kept as they are.
    """
    merged = {}
    for lab, size in stratum_sizes.items():
        new = groups.get(lab, lab)
        merged[new] = merged.get(new, 0) + size
    x = np.asarray([groups.get(label_key(lab), label_key(lab)) for lab in b.x])
    return replace(b, x=x), merged


def hajek_mean(s: ProbSample) -> Estimate:
    y = s.require_y()
    value = float(np.sum(s.d * y) / np.sum(s.d))
    return Estimate(value, "hajek_mean", target="mean", diagnostics={"n_S": s.n})


def _check_complement(b: NonProbSample, s: ProbSample):
    overlap = np.intersect1d(b.members, s.members)
    if overlap.size:
        raise FrameError(f"S-sample overlaps the B-sample in {overlap.size} unit(s), e.g. {overlap[:5].tolist()}")


def split_population(b: NonProbSample, s: ProbSample, N: int) -> Estimate:
    _check_complement(b, s)
    if N < b.n:
        raise DataError(f"population size {N} is smaller than the B-sample size {b.n}")
    w_b = b.n / N
    ybar_w = hajek_mean(s).value
    value = w_b * b.mean + (1 - w_b) * ybar_w
    return Estimate(
        value, "split_population", target="mean", N=N,
        diagnostics={"W_B": w_b, "ybar_B": b.mean, "ybar_w": ybar_w},
    )


def optimal_gamma(V_w: float, W_B: float, delta: float) -> float:
    """Composition weight with minimum MSE for bias ``delta`` of the B-mean."""
    if V_w < 0:
        raise ConfigError("V_w must be non-negative")
    if not 0 <= W_B <= 1:
        raise ConfigError("W_B must lie in [0, 1]")
    d2 = delta * delta
    if V_w == 0 and d2 == 0:
        raise DegenerateError("composition weight indeterminate when V_w = delta = 0")
    return (V_w + W_B * d2) / (V_w + d2)


def composite(
    b: NonProbSample,
    s: ProbSample,
    N: int,
    gamma="auto",
    var_w: Optional[float] = None,
) -> Estimate:
    """gamma * ybar_B + (1 - gamma) * ybar_w.

    ``gamma="auto"`` uses the plug-in weight
    min(W_B + (1 - W_B) V(ybar_w) / (ybar_B - ybar_w)^2, 1); ``var_w`` defaults
    to the linearised design variance of the Hajek mean.
    """
    _check_complement(b, s)
    w_b = b.n / N
    ybar_b = b.mean
    ybar_w = hajek_mean(s).value
    if gamma == "auto":
        if var_w is None:
            from ..uncertainty import design_variance_hajek

            var_w = design_variance_hajek(s).value
        diff2 = (ybar_b - ybar_w) ** 2
        g = 1.0 if diff2 == 0 else min(w_b + (1 - w_b) * var_w / diff2, 1.0)
        label = "composite_auto"
    else:
        g = float(gamma)
        if not (w_b - 1e-15 <= g <= 1 + 1e-15) or math.isnan(g):
            raise ConfigError(f"gamma={g} outside [W_B, 1] = [{w_b}, 1]")
        label = "composite"
    value = g * ybar_b + (1 - g) * ybar_w
    diag = {"gamma": g, "W_B": w_b}
    if var_w is not None:
        diag["var_w"] = var_w
    return Estimate(value, label, target="mean", N=N, diagnostics=diag)
