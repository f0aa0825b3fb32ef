"""Synthetic finite populations and the two kinds of samples drawn from them.

A population carries the realised outcomes together with the unit-level
B-inclusion propensities. The propensities are the simulation oracle and never
reach an estimator directly.

Stratum labels ``x`` are categorical (post-strata). The optional real column
``z`` is the numeric covariate used for nearest-neighbour matching and for
linear mean structures.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DesignError, FrameError, ImpossibleSampleError

log = logging.getLogger(__name__)

MAX_B_ATTEMPTS = 100
Z_KINDS = ("none", "uniform", "stratum_uniform", "stratum_grid")


def _as_float(a, name, n=None):
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 1:
        raise ConfigError(f"{name} must be one-dimensional")
    if n is not None and arr.shape[0] != n:
        raise ConfigError(f"{name} has length {arr.shape[0]}, expected {n}")
    return arr


@dataclass(frozen=True)
class Population:
    y: np.ndarray
    x: np.ndarray
    p_true: np.ndarray
    z: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None

    def __post_init__(self):
        y = _as_float(self.y, "y")
        n = y.shape[0]
        if n < 1:
            raise ConfigError("population must contain at least one unit")
        x = np.asarray(self.x)
        if x.shape != (n,):
            raise ConfigError(f"x has shape {x.shape}, expected ({n},)")
        p = _as_float(self.p_true, "p_true", n)
        if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
            raise ConfigError("p_true must lie in [0, 1]")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p_true", p)
        if self.z is not None:
            object.__setattr__(self, "z", _as_float(self.z, "z", n))
        if self.mu is not None:
            object.__setattr__(self, "mu", _as_float(self.mu, "mu", n))

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def total(self) -> float:
        return float(self.y.sum())

    @property
    def mean(self) -> float:
        return float(self.y.mean())

    def stratum_sizes(self) -> dict:
        levels, counts = np.unique(self.x, return_counts=True)
        return {lab.item() if hasattr(lab, "item") else lab: int(c) for lab, c in zip(levels, counts)}

    def nonprob_sample(self, members) -> "NonProbSample":
        idx = np.unique(np.asarray(members, dtype=int))
        if idx.size and (idx[0] < 0 or idx[-1] >= self.N):
            raise ConfigError("sample members outside the population")
        return NonProbSample(
            members=idx,
            y=self.y[idx],
            x=self.x[idx],
            z=None if self.z is None else self.z[idx],
        )


@dataclass(frozen=True)
class NonProbSample:
    """Realised B-sample: unit ids (sorted ascending) and observed columns."""

    members: np.ndarray
    y: np.ndarray
    x: np.ndarray
    z: Optional[np.ndarray] = None

    def __post_init__(self):
        members = np.asarray(self.members, dtype=int)
        n = members.shape[0]
        if n < 1:
            raise ImpossibleSampleError("a non-probability sample needs at least one member")
        if np.unique(members).shape[0] != n:
            raise ConfigError("duplicate unit ids in B-sample")
        order = np.argsort(members, kind="stable")
        object.__setattr__(self, "members", members[order])
        object.__setattr__(self, "y", _as_float(self.y, "y", n)[order])
        x = np.asarray(self.x)
        if x.shape != (n,):
            raise ConfigError("x must have one label per member")
        object.__setattr__(self, "x", x[order])
        if self.z is not None:
            object.__setattr__(self, "z", _as_float(self.z, "z", n)[order])

    @property
    def n(self) -> int:
        return self.members.shape[0]

    @property
    def mean(self) -> float:
        return float(self.y.mean())

    def indicator(self, N: int) -> np.ndarray:
        delta = np.zeros(N, dtype=bool)
        delta[self.members] = True
        return delta


@dataclass(frozen=True)
class ProbSample:
    """Realised probability sample with its design information.

    ``strata`` holds the design stratum of each member and ``frame_sizes`` the
    number of frame units per design stratum; single-stratum designs use the
    stratum label 0.
    """

    members: np.ndarray
    pi: np.ndarray
    x: np.ndarray
    design: str = "srs"
    d: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    strata: Optional[np.ndarray] = None
    frame_sizes: Optional[dict] = None
    excluded: Optional[np.ndarray] = None

    def __post_init__(self):
        members = np.asarray(self.members, dtype=int)
        n = members.shape[0]
        if np.unique(members).shape[0] != n:
            raise ConfigError("duplicate unit ids in S-sample")
        pi = _as_float(self.pi, "pi", n)
        if np.any(~(pi > 0) | (pi > 1)):
            raise ConfigError("inclusion probabilities must lie in (0, 1]")
        d = 1.0 / pi if self.d is None else _as_float(self.d, "d", n)
        if np.any(d <= 0):
            raise ConfigError("design weights must be positive")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", np.asarray(self.x))
        if self.y is not None:
            object.__setattr__(self, "y", _as_float(self.y, "y", n))
        if self.z is not None:
            object.__setattr__(self, "z", _as_float(self.z, "z", n))
        strata = np.zeros(n, dtype=int) if self.strata is None else np.asarray(self.strata)
        object.__setattr__(self, "strata", strata)
        if self.excluded is not None:
            excl = np.asarray(self.excluded, dtype=int)
            if np.intersect1d(excl, members).size:
                raise FrameError("S-sample contains units from its exclusion set")
            object.__setattr__(self, "excluded", excl)

    @property
    def n(self) -> int:
        return self.members.shape[0]

    def require_y(self):
        if self.y is None:
            raise ConfigError("outcome y is not observed on this S-sample")
        return self.y


@dataclass(frozen=True)
class Design:
    """Sampling design descriptor.

    kind: ``srs`` (needs ``n``), ``stratified`` (needs ``fractions`` or
    ``sizes`` keyed by stratum label, strata taken from ``x``) or ``poisson``
    (``pi`` scalar or keyed by stratum label).
    """

    kind: str = "srs"
    n: Optional[int] = None
    fractions: Optional[dict] = None
    sizes: Optional[dict] = None
    pi: object = None
    observe_y: bool = False

    def __post_init__(self):
        if self.kind not in ("srs", "stratified", "poisson"):
            raise ConfigError(f"unsupported design kind {self.kind!r}")
        if self.kind == "srs" and (self.n is None or self.n < 1):
            raise ConfigError("SRS design needs a sample size n >= 1")
        if self.kind == "stratified" and (self.fractions is None) == (self.sizes is None):
            raise ConfigError("stratified design needs exactly one of fractions / sizes")
        if self.kind == "poisson" and self.pi is None:
            raise ConfigError("Poisson design needs pi")


@dataclass(frozen=True)
class DgpSpec:
    """Data-generating process for one synthetic population.

    ``p_het`` is a relative amplitude: within each stratum half the units get
    p(x)(1 + p_het) and half p(x)(1 - p_het). ``mu_het`` is an absolute
    amplitude on the unit means. ``informative`` (-1, 0, +1) decides which
    half of each stratum gets the raised propensity: 0 picks at random, +1
    the units with the largest outcome residual y - mu, -1 the smallest.
    """

    N: int
    proportions: Sequence[float] = (1.0,)
    mu: Sequence[float] = (0.0,)
    p: Sequence[float] = (0.5,)
    mu_het: float = 0.0
    p_het: float = 0.0
    noise_sd: float = 1.0
    informative: int = 0
    undercoverage: float = 0.0
    undercoverage_strata: Optional[Sequence[int]] = None
    undercoverage_rule: str = "top_y"
    z: str = "none"
    z_slope: float = 0.0

    def __post_init__(self):
        for name in ("proportions", "mu", "p"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.undercoverage_strata is not None:
            object.__setattr__(self, "undercoverage_strata", tuple(int(v) for v in self.undercoverage_strata))
        self.validate()

    @property
    def K(self) -> int:
        return len(self.proportions)

    def validate(self):
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError("N must be a positive integer")
        props = np.asarray(self.proportions)
        if np.any(props <= 0) or abs(props.sum() - 1.0) > 1e-9:
            raise ConfigError("stratum proportions must be positive and sum to 1")
        if len(self.mu) != self.K or len(self.p) != self.K:
            raise ConfigError("mu and p need one entry per stratum")
        if self.noise_sd < 0 or self.mu_het < 0:
            raise ConfigError("noise scale and mean heterogeneity must be non-negative")
        if not 0 <= self.p_het <= 1:
            raise ConfigError("p_het must lie in [0, 1]")
        p = np.asarray(self.p)
        if np.any(p < 0) or np.any(p * (1 + self.p_het) > 1 + 1e-12):
            raise ConfigError("propensities p(x)(1 +/- p_het) must stay within [0, 1]")
        if not 0 <= self.undercoverage < 1:
            raise ConfigError("under-coverage fraction must lie in [0, 1)")
        if self.informative not in (-1, 0, 1):
            raise ConfigError("informative must be -1, 0 or 1")
        if self.undercoverage_rule not in ("top_y", "random"):
            raise ConfigError("undercoverage_rule must be 'top_y' or 'random'")
        if self.z not in Z_KINDS:
            raise ConfigError(f"z must be one of {Z_KINDS}")
        if self.z_slope and self.z == "none":
            raise ConfigError("z_slope needs a z covariate")

    def stratum_counts(self) -> np.ndarray:
        """Largest-remainder rounding of N * proportions."""
        raw = np.asarray(self.proportions) * self.N
        counts = np.floor(raw).astype(int)
        short = self.N - counts.sum()
        if short:
            counts[np.argsort(-(raw - counts), kind="stable")[:short]] += 1
        if np.any(counts == 0):
            raise ConfigError("N too small: some stratum would be empty")
        return counts

    def with_(self, **changes) -> "DgpSpec":
        return replace(self, **changes)


def _two_point_signs(x, counts, key):
    """-1 / 0 / +1 per unit; within each stratum the lowest half by ``key``
    get -1 and the highest half +1 (middle unit 0 when the count is odd)."""
    order = np.lexsort((key, x))
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    rank = np.empty(x.shape[0], dtype=int)
    rank[order] = np.arange(x.shape[0]) - np.repeat(starts, counts)
    n_x = counts[x]
    half = n_x // 2
    signs = np.zeros(x.shape[0])
    signs[rank < half] = -1.0
    signs[rank >= n_x - half] = 1.0
    return signs


def generate_population(spec: DgpSpec, seed: int) -> Population:
    spec.validate()
    rng = np.random.default_rng(seed)
    counts = spec.stratum_counts()
    N, K = spec.N, spec.K
    x = np.repeat(np.arange(K), counts)

    z = None
    if spec.z == "uniform":
        z = rng.random(N)
    elif spec.z == "stratum_uniform":
        z = (x + rng.random(N)) / K
    elif spec.z == "stratum_grid":
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        within = np.arange(N) - np.repeat(starts, counts)
        z = (x + (within + 0.5) / counts[x]) / K

    mu = np.asarray(spec.mu)[x].copy()
    if z is not None and spec.z_slope:
        zbar = np.bincount(x, weights=z, minlength=K) / counts
        mu += spec.z_slope * (z - zbar[x])
    if spec.mu_het:
        mu += spec.mu_het * _two_point_signs(x, counts, rng.random(N))

    y = mu + spec.noise_sd * rng.standard_normal(N)

    p = np.asarray(spec.p)[x].copy()
    if spec.p_het:
        key = rng.random(N) if spec.informative == 0 else spec.informative * (y - mu)
        p = p * (1.0 + spec.p_het * _two_point_signs(x, counts, key))
    np.clip(p, 0.0, 1.0, out=p)

    n0 = int(round(spec.undercoverage * N))
    if n0:
        if spec.undercoverage_strata is None:
            cand = np.arange(N)
        else:
            cand = np.flatnonzero(np.isin(x, spec.undercoverage_strata))
        if n0 > cand.shape[0]:
            raise ConfigError("under-coverage fraction exceeds the designated strata")
        if spec.undercoverage_rule == "top_y":
            chosen = cand[np.argsort(-y[cand], kind="stable")[:n0]]
        else:
            chosen = rng.choice(cand, size=n0, replace=False)
        p[chosen] = 0.0

    return Population(y=y, x=x, p_true=p, z=z, mu=mu)


def resample_outcomes(pop: Population, noise_sd: float, seed: int) -> Population:
    """Redraw y = mu + noise keeping the population structure fixed."""
    if pop.mu is None:
        raise ConfigError("population has no unit means to resample around")
    rng = np.random.default_rng(seed)
    y = pop.mu + noise_sd * rng.standard_normal(pop.N)
    return replace(pop, y=y)


def draw_b_sample(pop: Population, seed: int) -> NonProbSample:
    """Independent Bernoulli(p_true) selection; empty draws are redrawn."""
    if not np.any(pop.p_true > 0):
        raise ImpossibleSampleError("every unit has zero inclusion propensity")
    rng = np.random.default_rng(seed)
    for attempt in range(MAX_B_ATTEMPTS):
        delta = rng.random(pop.N) < pop.p_true
        if delta.any():
            if attempt:
                log.info("B-sample redrawn %d time(s) after empty draws", attempt)
            return pop.nonprob_sample(np.flatnonzero(delta))
    raise ImpossibleSampleError(f"B-sample empty after {MAX_B_ATTEMPTS} attempts")


def draw_s_sample(
    pop: Population,
    design: Design,
    exclude: Optional[NonProbSample] = None,
    seed: int = 0,
) -> ProbSample:
    """Draw a probability sample from U, or from U minus B when ``exclude`` is given."""
    rng = np.random.default_rng(seed)
    if exclude is None:
        frame = np.arange(pop.N)
        excluded = None
    else:
        keep = np.ones(pop.N, dtype=bool)
        keep[exclude.members] = False
        frame = np.flatnonzero(keep)
        excluded = exclude.members

    if design.kind == "srs":
        if design.n > frame.shape[0]:
            raise DesignError(f"SRS size {design.n} exceeds frame size {frame.shape[0]}")
        members = np.sort(rng.choice(frame, size=design.n, replace=False))
        pi = np.full(design.n, design.n / frame.shape[0])
        strata = np.zeros(design.n, dtype=int)
        frame_sizes = {0: int(frame.shape[0])}
    elif design.kind == "stratified":
        fx = pop.x[frame]
        levels, sizes = np.unique(fx, return_counts=True)
        chosen, pis, labs = [], [], []
        frame_sizes = {}
        for lab, size in zip(levels, sizes):
            lab = lab.item()
            frame_sizes[lab] = int(size)
            if design.fractions is not None:
                n_h = int(round(design.fractions.get(lab, 0.0) * size))
            else:
                n_h = int(design.sizes.get(lab, 0))
            if n_h > size:
                raise DesignError(f"stratum {lab}: sample size {n_h} exceeds frame size {size}")
            if n_h == 0:
                continue
            pool = frame[fx == lab]
            chosen.append(np.sort(rng.choice(pool, size=n_h, replace=False)))
            pis.append(np.full(n_h, n_h / size))
            labs.append(np.full(n_h, lab))
        if not chosen:
            raise DesignError("stratified design selects no units")
        members = np.concatenate(chosen)
        pi = np.concatenate(pis)
        strata = np.concatenate(labs)
        order = np.argsort(members, kind="stable")
        members, pi, strata = members[order], pi[order], strata[order]
    else:
        if isinstance(design.pi, dict):
            pi_frame = np.array([design.pi[lab.item()] for lab in pop.x[frame]], dtype=float)
        else:
            pi_frame = np.full(frame.shape[0], float(design.pi))
        if np.any(~(pi_frame > 0) | (pi_frame > 1)):
            raise DesignError("Poisson inclusion probabilities must lie in (0, 1]")
        take = rng.random(frame.shape[0]) < pi_frame
        members, pi = frame[take], pi_frame[take]
        strata = np.zeros(members.shape[0], dtype=int)
        frame_sizes = {0: int(frame.shape[0])}

    return ProbSample(
        members=members,
        pi=pi,
        x=pop.x[members],
        design=design.kind,
        y=pop.y[members] if design.observe_y else None,
        z=None if pop.z is None else pop.z[members],
        strata=strata,
        frame_sizes=frame_sizes,
        excluded=excluded,
    )
