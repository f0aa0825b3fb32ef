"""Seeded Monte Carlo replication.

Each replicate draws its seeds from ``SeedSequence(root_seed, spawn_key=(g, r))``
for grid point ``g`` and replicate ``r``, so results do not depend on how the
replicates are scheduled across worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from ..errors import ConfigError, EstimationError
from ..popgen import Design, DgpSpec, Population, draw_b_sample, draw_s_sample, generate_population, resample_outcomes
from .suite import SUITE, Replicate, output_names

SUMMARY_FIELDS = ("scenario", "estimator", "N", "R", "bias", "mc_se", "rmse", "var_hat_mean", "coverage", "fail_rate")
S_FRAMES = ("U", "U_minus_B")


@dataclass(frozen=True)
class ScenarioConfig:
    """One Monte Carlo scenario.

    ``n_grid`` lists population sizes (empty means ``dgp.N`` only).
    ``resample_outcomes`` redraws y around the unit means in every replicate,
    which makes the outcome model the source of randomness alongside the
    B-selection; otherwise the population is fixed per grid point.
    """

    name: str
    dgp: DgpSpec
    estimators: tuple
    R: int = 200
    root_seed: int = 0
    n_grid: tuple = ()
    s_design: Optional[Design] = None
    s_frame: str = "U"
    resample_outcomes: bool = False
    settings: dict = field(default_factory=dict)
    level: float = 0.95
    expected: str = ""

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        self.validate()

    @property
    def grid(self) -> tuple:
        return self.n_grid or (self.dgp.N,)

    def validate(self):
        if int(self.R) != self.R or self.R < 1:
            raise ConfigError("R must be a positive integer")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ConfigError("n_grid must be strictly increasing")
        if not self.estimators:
            raise ConfigError("scenario has no estimators")
        unknown = [e for e in self.estimators if e not in SUITE]
        if unknown:
            raise ConfigError(f"unknown estimators {unknown}; known: {sorted(SUITE)}")
        if self.s_frame not in S_FRAMES:
            raise ConfigError(f"s_frame must be one of {S_FRAMES}")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        for e in self.estimators:
            entry = SUITE[e]
            if entry.needs_s and self.s_design is None:
                raise ConfigError(f"estimator {e!r} needs a probability sample design")
            if entry.s_needs_y and not self.s_design.observe_y:
                raise ConfigError(f"estimator {e!r} needs y observed on the probability sample")

    def with_(self, **changes) -> "ScenarioConfig":
        """Copy with changes; ``dgp`` may be given as a dict of DgpSpec field changes."""
        if isinstance(changes.get("dgp"), dict):
            changes["dgp"] = self.dgp.with_(**changes["dgp"])
        if isinstance(changes.get("s_design"), dict):
            changes["s_design"] = dataclasses.replace(self.s_design, **changes["s_design"])
        if isinstance(changes.get("settings"), dict):
            changes["settings"] = {**self.settings, **changes["settings"]}
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["estimators"] = list(self.estimators)
        out["n_grid"] = list(self.n_grid)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown scenario fields {sorted(extra)}")
        try:
            d["dgp"] = DgpSpec(**d["dgp"])
            if d.get("s_design") is not None:
                sd = dict(d["s_design"])
                for key in ("fractions", "sizes", "pi"):
                    if isinstance(sd.get(key), dict):
                        sd[key] = {_label(k): v for k, v in sd[key].items()}
                d["s_design"] = Design(**sd)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"malformed scenario config: {exc}") from None
        return cls(**d)


def _label(k):
    """JSON object keys are strings; stratum labels in this package are ints."""
    try:
        return int(k)
    except (TypeError, ValueError):
        return k


@dataclass(frozen=True)
class EstimatorSummary:
    scenario: str
    estimator: str
    N: int
    R: int
    bias: float
    mc_se: float
    rmse: float
    var_hat_mean: float
    coverage: float
    fail_rate: float
    emp_var: float
    errors: dict = field(default_factory=dict)

    def csv_row(self) -> list:
        return [self.scenario, self.estimator, str(self.N), str(self.R)] + [
            _num(getattr(self, k)) for k in SUMMARY_FIELDS[4:]
        ]


def _num(v) -> str:
    v = float(v)
    return "NA" if math.isnan(v) else repr(v)


@dataclass
class McSummary:
    scenario: str
    rows: list
    diagnostics: dict  # (N, name) -> mean over successful replicates
    replicates: dict  # (N, estimator) -> dict of per-replicate arrays
    config: ScenarioConfig

    def row(self, estimator: str, N: Optional[int] = None) -> EstimatorSummary:
        N = self.config.grid[-1] if N is None else N
        for r in self.rows:
            if r.estimator == estimator and r.N == N:
                return r
        raise KeyError((estimator, N))

    def errors_of(self, N: int, estimator: str) -> np.ndarray:
        rep = self.replicates[(N, estimator)]
        return rep["estimate"] - rep["truth"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in self.rows:
            w.writerow(r.csv_row())
        return buf.getvalue()

    def to_long_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "estimator", "N", "metric", "value"])
        for r in self.rows:
            for k in SUMMARY_FIELDS[4:]:
                w.writerow([r.scenario, r.estimator, r.N, k, _num(getattr(r, k))])
        return buf.getvalue()

    def diagnostics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "N", "diagnostic", "value"])
        for (N, name), v in self.diagnostics.items():
            w.writerow([self.scenario, N, name, _num(v)])
        for r in self.rows:
            for etype, count in sorted(r.errors.items()):
                w.writerow([self.scenario, r.N, f"error_rate:{r.estimator}:{etype}", _num(count / r.R)])
        return buf.getvalue()


def _int_seed(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def population_for(cfg: ScenarioConfig, g: int) -> Population:
    seq = np.random.SeedSequence(cfg.root_seed, spawn_key=(g,))
    return generate_population(cfg.dgp.with_(N=cfg.grid[g]), _int_seed(seq))


def run_replicate(cfg: ScenarioConfig, pop: Population, g: int, rep: int):
    """One replicate: ({output: (estimate, truth, variance)}, {estimator: error type}, diagnostics)."""
    seq = np.random.SeedSequence(cfg.root_seed, spawn_key=(g, rep))
    y_seed, b_seed, s_seed = (int(v) for v in seq.generate_state(3, dtype=np.uint64))
    if cfg.resample_outcomes:
        pop = resample_outcomes(pop, cfg.dgp.noise_sd, y_seed)
    try:
        b = draw_b_sample(pop, b_seed)
    except EstimationError as exc:
        return {}, {e: type(exc).__name__ for e in cfg.estimators}, {}
    s = None
    if cfg.s_design is not None:
        exclude = b if cfg.s_frame == "U_minus_B" else None
        s = draw_s_sample(pop, cfg.s_design, exclude=exclude, seed=s_seed)
    ctx = Replicate(pop, b, s, cfg.settings)
    values, failures, diag = {}, {}, {}
    for name in cfg.estimators:
        try:
            outputs, d = SUITE[name].run(ctx)
        except EstimationError as exc:
            failures[name] = type(exc).__name__
            continue
        for o in outputs:
            values[o.name] = (o.value, o.truth, np.nan if o.variance is None else o.variance)
        diag.update(d)
    return values, failures, diag


def _run_chunk(cfg, pop, g, reps):
    return [run_replicate(cfg, pop, g, r) for r in reps]


def _chunks(R: int, workers: int):
    size = max(1, math.ceil(R / (4 * workers)))
    return [range(a, min(a + size, R)) for a in range(0, R, size)]


def _summarise(cfg, N, name, est, truth, var, failed, errors) -> EstimatorSummary:
    R = cfg.R
    ok = ~failed
    err = est[ok] - truth[ok]
    n_ok = int(ok.sum())
    if n_ok:
        bias = float(err.mean())
        emp_var = float(np.mean((err - bias) ** 2))
        rmse = math.sqrt(float(np.mean(err**2)))
        mc_se = float(err.std(ddof=1)) / math.sqrt(n_ok) if n_ok > 1 else math.nan
    else:
        bias = emp_var = rmse = mc_se = math.nan
    v = var[ok]
    if n_ok and np.all(np.isfinite(v)):
        zq = stats.norm.ppf(0.5 + cfg.level / 2)
        half = zq * np.sqrt(v)
        coverage = float(np.mean(np.abs(err) <= half))
        var_hat_mean = float(v.mean())
    else:
        coverage = var_hat_mean = math.nan
    return EstimatorSummary(
        scenario=cfg.name, estimator=name, N=N, R=R, bias=bias, mc_se=mc_se, rmse=rmse,
        var_hat_mean=var_hat_mean, coverage=coverage, fail_rate=1 - n_ok / R, emp_var=emp_var, errors=errors,
    )


def run_scenario(cfg: ScenarioConfig, workers: int = 1) -> McSummary:
    """Run ``cfg.R`` replicates at every grid point.

    Estimator failures are recorded per replicate and excluded from the
    moments; an estimator that fails in every replicate at some grid point
    raises its error.
    """
    cfg.validate()
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    rows, diagnostics, replicates = [], {}, {}
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for g, N in enumerate(cfg.grid):
            pop = population_for(cfg, g)
            chunks = _chunks(cfg.R, workers)
            if pool is None:
                results = [res for c in chunks for res in _run_chunk(cfg, pop, g, c)]
            else:
                futures = [pool.submit(_run_chunk, cfg, pop, g, c) for c in chunks]
                results = [res for f in futures for res in f.result()]
            _reduce(cfg, pop, g, N, results, rows, diagnostics, replicates)
    finally:
        if pool is not None:
            pool.shutdown()
    return McSummary(cfg.name, rows, diagnostics, replicates, cfg)


def _reduce(cfg, pop, g, N, results, rows, diagnostics, replicates):
    R = cfg.R
    for name in cfg.estimators:
        etypes = [f.get(name) for _, f, _ in results]
        errors = {}
        for t in etypes:
            if t is not None:
                errors[t] = errors.get(t, 0) + 1
        if errors and sum(errors.values()) == R:
            raise EstimationError(f"estimator {name!r} failed in every replicate at N={N}: {errors}")
        for out in output_names(name, cfg.settings, pop):
            est, truth, var = np.full(R, np.nan), np.full(R, np.nan), np.full(R, np.nan)
            failed = np.zeros(R, dtype=bool)
            for r, (values, _, _) in enumerate(results):
                if out in values:
                    est[r], truth[r], var[r] = values[out]
                else:
                    failed[r] = True
            replicates[(N, out)] = {"estimate": est, "truth": truth, "variance": var, "failed": failed}
            rows.append(_summarise(cfg, N, out, est, truth, var, failed, errors))
    keys = sorted({k for _, _, d in results for k in d})
    for k in keys:
        vals = np.array([d[k] for _, _, d in results if k in d], dtype=float)
        diagnostics[(N, k)] = float(vals.mean())
