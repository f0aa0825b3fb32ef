"""Named scenarios, each with the qualitative outcome it is built to show."""

from __future__ import annotations

from ..errors import ConfigError
from ..popgen import Design, DgpSpec
from .engine import ScenarioConfig

GRID = (1_000, 10_000, 100_000)
# two-point propensity amplitude giving a B-mean shift of about 0.5 SD for
# unit-variance normal residuals: h * E|e| = h * sqrt(2/pi) = 0.5
HALF_SD_SHIFT = 0.5 / 0.7978845608028654


def _sp_flat():
    return ScenarioConfig(
        name="sp_flat",
        dgp=DgpSpec(N=GRID[0], proportions=(0.3, 0.3, 0.4), mu=(1.0, 1.0, 1.0), p=(0.05, 0.1, 0.2)),
        estimators=("expansion", "post_stratified"),
        R=2000, n_grid=GRID, resample_outcomes=True,
        expected="Common mean across strata: expansion and post-stratification are unbiased even though "
                 "propensities differ by stratum; |bias| shrinks with N.",
    )


def _qr_flat():
    return ScenarioConfig(
        name="qr_flat",
        dgp=DgpSpec(N=GRID[0], proportions=(0.3, 0.3, 0.4), mu=(0.0, 1.0, 2.0), p=(0.1, 0.1, 0.1)),
        estimators=("expansion", "post_stratified"),
        R=2000, n_grid=GRID,
        expected="Constant propensity on a fixed population: expansion and post-stratification are "
                 "unbiased although the stratum means differ.",
    )


def _calib_linear():
    return ScenarioConfig(
        name="calib_linear",
        dgp=DgpSpec(N=GRID[0], proportions=(0.25,) * 4, mu=(0.0, 0.5, 1.0, 1.5), p=(0.3, 0.1, 0.25, 0.05)),
        estimators=("calibration",),
        R=2000, n_grid=GRID, resample_outcomes=True, settings={"t_map": "linear", "totals": "census"},
        expected="Mean linear in x with propensities unrelated to y given x: calibration on (1, x) "
                 "is unbiased.",
    )


def _ipw_logistic():
    return ScenarioConfig(
        name="ipw_logistic",
        dgp=DgpSpec(N=GRID[0], proportions=(0.2,) * 5, mu=(0.0, 0.5, 1.0, 2.0, 3.0),
                    p=(0.1192029220221175, 0.18242552380635635, 0.2689414213699951,
                       0.3775406687981454, 0.5)),
        estimators=("ipw_logistic",),
        R=2000, n_grid=GRID, settings={"t_map": "linear", "propensity_mode": "census"},
        expected="Propensity exactly logistic in x: IPW with the fitted logistic model is consistent.",
    )


def _ref_ipw():
    return ScenarioConfig(
        name="ref_ipw",
        dgp=DgpSpec(N=GRID[0], proportions=(0.3, 0.3, 0.4), mu=(0.0, 1.0, 2.0), p=(0.05, 0.1, 0.2)),
        estimators=("reference_ipw",),
        R=2000, n_grid=GRID, s_design=Design(kind="poisson", pi=0.05),
        expected="Propensity from pooled B and reference-sample membership: consistent as N grows.",
    )


def _sm_basic():
    return ScenarioConfig(
        name="sm_basic",
        dgp=DgpSpec(N=GRID[0], proportions=(0.5, 0.5), mu=(0.5, 1.5), p=(0.05, 0.2),
                    z="stratum_uniform", z_slope=2.0),
        estimators=("sample_matching",),
        R=2000, n_grid=GRID, s_design=Design(kind="stratified", fractions={0: 0.02, 1: 0.02}),
        resample_outcomes=True,
        expected="Mean smooth in z and selection non-informative given z: nearest-neighbour matching is "
                 "consistent as the matching distance shrinks (S is a fixed 2% fraction of U).",
    )


def _sec2_5_counterexample():
    return ScenarioConfig(
        name="sec2_5_counterexample",
        dgp=DgpSpec(N=2000, proportions=(0.5, 0.5), mu=(0.0, 1.0), p=(0.2, 0.2), z="uniform"),
        estimators=("sample_matching",),
        R=2000, s_design=Design(kind="stratified", fractions={0: 0.5, 1: 0.1}), resample_outcomes=True,
        settings={"domains": True},
        expected="Matching variable unrelated to y and to the design strata: the overall matched mean is "
                 "unbiased, but matched stratum means are pulled to the overall mean and miss the true "
                 "stratum means of 0 and 1.",
    )


def _undercoverage_kimrao():
    slope = 4.0
    return ScenarioConfig(
        name="undercoverage_kimrao",
        dgp=DgpSpec(N=5_000, proportions=(0.2,) * 5, mu=tuple(slope * (k + 0.5) / 5 for k in range(5)),
                    p=(0.25,) * 5, undercoverage=0.2, undercoverage_strata=(4,), z="stratum_grid",
                    z_slope=slope),
        estimators=("sample_matching", "two_phase_sm"),
        R=500, n_grid=(5_000, 50_000), s_design=Design(kind="srs", n=500), resample_outcomes=True,
        settings={"epsilon_scale": 3.0},
        expected="Top z-stratum (20% of U) has zero propensity and the mean is linear in z: naive matching "
                 "imputes its units from the edge of B and is biased, two-phase matching calibrated on "
                 "(1, z) removes most of the bias, and the flagged unsupported share approaches 0.2 as n_B grows.",
    )


def _hetero_mu():
    return ScenarioConfig(
        name="hetero_mu",
        dgp=DgpSpec(N=10_000, proportions=(0.5, 0.5), mu=(0.0, 1.0), p=(0.1, 0.3), mu_het=1.0),
        estimators=("post_stratified",),
        R=2000,
        expected="Unit means vary within strata but propensity is constant there: post-stratification "
                 "stays unbiased.",
    )


def _hetero_p():
    return ScenarioConfig(
        name="hetero_p",
        dgp=DgpSpec(N=10_000, proportions=(0.5, 0.5), mu=(0.0, 1.0), p=(0.2, 0.4), p_het=0.5, informative=1),
        estimators=("ipw_known",),
        R=2000,
        expected="Propensity varies within strata with y: IPW using the correct stratum-average propensity "
                 "is biased upwards.",
    )


def _split_composite():
    return ScenarioConfig(
        name="split_composite",
        dgp=DgpSpec(N=10_000, proportions=(1.0,), mu=(0.0,), p=(0.5,), p_het=HALF_SD_SHIFT, informative=1),
        estimators=("split_population", "composite_auto", "h0_test", "expansion"),
        R=2000, s_design=Design(kind="srs", n=100, observe_y=True), s_frame="U_minus_B",
        expected="B-mean shifted by about half an SD: the test of ybar_B against the complement mean "
                 "rejects, the split-population estimator is unbiased and the composite estimator "
                 "falls back close to it.",
    )


PRESETS = {
    "sp_flat": _sp_flat,
    "qr_flat": _qr_flat,
    "calib_linear": _calib_linear,
    "ipw_logistic": _ipw_logistic,
    "ref_ipw": _ref_ipw,
    "sm_basic": _sm_basic,
    "sec2_5_counterexample": _sec2_5_counterexample,
    "undercoverage_kimrao": _undercoverage_kimrao,
    "hetero_mu": _hetero_mu,
    "hetero_p": _hetero_p,
    "split_composite": _split_composite,
}


def preset(name: str, **overrides) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[name]()
    return cfg.with_(**overrides) if overrides else cfg
