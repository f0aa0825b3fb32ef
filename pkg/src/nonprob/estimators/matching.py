"""Nearest-neighbour sample matching and the two-phase variant with support screening."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .._cells import label_key
from ..errors import ConfigError, DataError, NoDonorError
from ..popgen import NonProbSample, ProbSample
from .base import Estimate
from .calibration import min_distance_weights

TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Metric:
    """Distance between units.

    ``numeric``: Euclidean distance on ``z / scale``. ``exact_cells``: units
    in different x-cells are infinitely far apart. With both off every pair is
    at distance 0 (donor = smallest index).
    """

    numeric: bool = True
    exact_cells: bool = False
    scale: Optional[np.ndarray] = None

    def describe(self) -> str:
        parts = []
        if self.numeric:
            parts.append("euclidean(z/sd)")
        if self.exact_cells:
            parts.append("exact(x)")
        return "+".join(parts) or "constant"


def default_metric(s: ProbSample, b: NonProbSample, pop_sd=None) -> Metric:
    """Standardised Euclidean on z when both samples carry it, else exact x-cells.

    The scale is the population SD of z when given, else the pooled-sample SD.
    """
    if s.z is not None and b.z is not None:
        if pop_sd is None:
            pooled = np.concatenate([_coords(s.z), _coords(b.z)])
            pop_sd = pooled.std(axis=0)
        scale = np.where(np.asarray(pop_sd, dtype=float) > 0, pop_sd, 1.0)
        return Metric(numeric=True, exact_cells=False, scale=np.atleast_1d(scale))
    return Metric(numeric=False, exact_cells=True)


def _coords(z):
    z = np.asarray(z, dtype=float)
    return z[:, None] if z.ndim == 1 else z


@dataclass(frozen=True)
class MatchAssignment:
    donor: np.ndarray  # position in the B-sample arrays, -1 when no donor exists
    donor_id: np.ndarray
    distance: np.ndarray
    y_hat: np.ndarray
    metric: Metric
    diagnostics: dict = field(default_factory=dict)

    @property
    def covered(self) -> np.ndarray:
        return self.donor >= 0


def _nearest(query, donors, donor_pos):
    """Nearest donor per query row, ties to the smallest donor position."""
    uniq, first = np.unique(donors, axis=0, return_index=True)
    pos = donor_pos[first]
    tree = cKDTree(uniq)
    k = min(2, uniq.shape[0])
    dist, idx = tree.query(query, k=k)
    if k == 1:
        return dist, pos[idx]
    d1, d2 = dist[:, 0], dist[:, 1]
    best = pos[idx[:, 0]]
    ties = np.flatnonzero(d2 <= d1 * (1 + TIE_RTOL))
    for r in ties:
        cand = tree.query_ball_point(query[r], d1[r] * (1 + TIE_RTOL) + 1e-300)
        best[r] = pos[cand].min()
    return d1, best


def nn_match(s: ProbSample, b: NonProbSample, metric: Optional[Metric] = None) -> MatchAssignment:
    if b.n < 1:
        raise NoDonorError("B-sample has no donors")
    metric = metric or default_metric(s, b)
    n = s.n
    donor = np.full(n, -1, dtype=int)
    dist = np.full(n, np.inf)

    if metric.numeric:
        if s.z is None or b.z is None:
            raise ConfigError("numeric metric needs z on both samples")
        scale = np.ones(1) if metric.scale is None else np.asarray(metric.scale, dtype=float)
        qs, qb = _coords(s.z) / scale, _coords(b.z) / scale

    if metric.exact_cells:
        groups = []
        b_levels = np.unique(b.x)
        for lab in np.unique(s.x):
            rows = np.flatnonzero(s.x == lab)
            if lab in b_levels:
                groups.append((rows, np.flatnonzero(b.x == lab)))
    else:
        groups = [(np.arange(n), np.arange(b.n))]

    for rows, cand in groups:
        if metric.numeric:
            d, best = _nearest(qs[rows], qb[cand], cand)
        else:
            d, best = np.zeros(rows.shape[0]), np.full(rows.shape[0], cand.min())
        dist[rows] = d
        donor[rows] = best

    ok = donor >= 0
    y_hat = np.full(n, np.nan)
    y_hat[ok] = b.y[donor[ok]]
    donor_id = np.where(ok, b.members[np.where(ok, donor, 0)], -1)
    finite = dist[np.isfinite(dist)]
    diag = {
        "max_distance": float(finite.max()) if finite.size else float("inf"),
        "mean_distance": float(finite.mean()) if finite.size else float("inf"),
        "unmatched": int((~ok).sum()),
    }
    return MatchAssignment(donor=donor, donor_id=donor_id, distance=dist, y_hat=y_hat, metric=metric, diagnostics=diag)


def _check_coverage(s: ProbSample, match: MatchAssignment):
    if match.donor.shape[0] != s.n:
        raise DataError("match assignment does not cover the S-sample")
    if not match.covered.all():
        raise NoDonorError(f"{int((~match.covered).sum())} S-member(s) have no donor under the declared metric")


def sm_estimate(s: ProbSample, match: MatchAssignment, N: Optional[int] = None) -> Estimate:
    _check_coverage(s, match)
    value = float(np.sum(s.d * match.y_hat))
    return Estimate(value, "sample_matching", N=N, diagnostics=dict(match.diagnostics))


def sm_domain_means(s: ProbSample, match: MatchAssignment, domains) -> dict:
    """Hajek means of the imputed values within each domain of S."""
    _check_coverage(s, match)
    domains = np.asarray(domains)
    out = {}
    for lab in np.unique(domains):
        m = domains == lab
        out[label_key(lab)] = float(np.sum(s.d[m] * match.y_hat[m]) / np.sum(s.d[m]))
    return out


def within_b_nn_distances(b: NonProbSample, metric: Metric) -> np.ndarray:
    """Distance from each B-member to its nearest other B-member."""
    if b.n < 2:
        return np.array([np.inf])
    if not metric.numeric:
        if not metric.exact_cells:
            return np.zeros(b.n)
        _, inv, counts = np.unique(b.x, return_inverse=True, return_counts=True)
        return np.where(counts[inv.ravel()] > 1, 0.0, np.inf)
    scale = np.ones(1) if metric.scale is None else np.asarray(metric.scale, dtype=float)
    coords = _coords(b.z) / scale
    out = np.full(b.n, np.inf)
    groups = [np.flatnonzero(b.x == lab) for lab in np.unique(b.x)] if metric.exact_cells else [np.arange(b.n)]
    for g in groups:
        if g.shape[0] < 2:
            continue
        d, _ = cKDTree(coords[g]).query(coords[g], k=2)
        out[g] = d[:, 1]
    return out


def default_epsilon(b: NonProbSample, metric: Metric, q: float = 95.0) -> float:
    d = within_b_nn_distances(b, metric)
    d = d[np.isfinite(d)]
    eps = float(np.percentile(d, q)) if d.size else 0.0
    return eps if eps > 0 else 1e-12


def support_calibration_columns(s: ProbSample) -> np.ndarray:
    """Default second-phase calibration variables: intercept plus z when observed."""
    if s.z is None:
        return np.ones((s.n, 1))
    return np.column_stack([np.ones(s.n), _coords(s.z)])


def two_phase_sm(
    s: ProbSample,
    b: NonProbSample,
    epsilon: Optional[float] = None,
    calib: Optional[Callable] = None,
    metric: Optional[Metric] = None,
    N: Optional[int] = None,
) -> Estimate:
    """Matching restricted to the B-supported part of S, reweighted to the full-S totals.

    S-members whose nearest donor lies at distance >= epsilon form the
    estimated unsupported part; the supported part gets second-phase weights
    w2 closest to 1 with sum d w2 t = sum_S d t.
    """
    metric = metric or default_metric(s, b)
    if epsilon is None:
        epsilon = default_epsilon(b, metric)
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive")
    match = nn_match(s, b, metric)
    support = match.distance < epsilon
    if not support.any():
        raise NoDonorError(f"no S-member lies within epsilon={epsilon:g} of the B-sample")

    t = np.asarray((calib or support_calibration_columns)(s), dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    totals = (s.d[:, None] * t).sum(axis=0)
    C = s.d[support, None] * t[support]
    w2, _, resid = min_distance_weights(np.ones(int(support.sum())), C, totals)
    value = float(np.sum(s.d[support] * w2 * match.y_hat[support]))
    n0 = int((~support).sum())
    return Estimate(
        value, "two_phase_sm", N=N,
        diagnostics={
            "epsilon": float(epsilon),
            "n_S0_hat": n0,
            "S0_hat_share": n0 / s.n,
            "constraint_residual": resid,
            "max_distance_supported": float(match.distance[support].max()),
        },
    )
