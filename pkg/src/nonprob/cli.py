"""``nonprob`` command-line front end.

Exit codes: 0 success, 2 config error, 3 data error, 4 estimation error,
5 internal error. Every run writes ``manifest.json`` under ``--out`` listing
the artifacts and the resolved configuration; a failed run removes what it
wrote.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from . import diagnostics as diag
from . import io as nio
from .errors import ConfigError, DataError, NonProbError
from .estimators import (
    CalibrationSpec,
    calibrate,
    calibration_estimate,
    composite,
    dummies,
    expansion,
    fit_propensity,
    hajek_mean,
    ipw,
    linear_in_label,
    nn_match,
    post_stratified,
    reference_ipw,
    sm_estimate,
    split_population,
    two_phase_sm,
)
from .uncertainty import calibration_variance, design_variance_hajek, h0_test, poststrat_variance

METHODS = (
    "expansion", "post_stratified", "calibration", "ipw_saturated", "ipw_logistic", "reference_ipw",
    "sample_matching", "two_phase_sm", "hajek_mean", "split_population", "composite",
)
CHECKS = ("propensity", "z", "h0", "match")
DEFAULTS = {
    "out": "nonprob_out", "seed": None, "level": 0.95, "epsilon": None, "tolerance": diag.IDENTITY_RTOL,
    "method": None, "checks": None, "b": None, "s": None, "margins": None, "N": None, "s_frame": "U",
    "p_hat": "saturated", "preset": None, "replicates": None, "workers": 1, "n_grid": None, "plots": True,
    "scenario": None, "overrides": None,
}


class RunContext:
    """Tracks files written so a failed run can remove them."""

    def __init__(self, out: Path):
        self.out = out
        self.created_dir = not out.exists()
        self.artifacts = []

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.artifacts.append(p)
        return p

    def write_text(self, name: str, text: str):
        self.path(name).write_text(text, encoding="utf-8")

    def cleanup(self):
        for p in self.artifacts:
            if p.exists():
                p.unlink()
        if self.created_dir and self.out.exists() and not any(self.out.iterdir()):
            self.out.rmdir()


def _split_list(value):
    if value is None or isinstance(value, list):
        return value
    return [v.strip() for v in str(value).split(",") if v.strip()]


def resolve_config(args) -> dict:
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        if loaded.get("command", args.command) != args.command:
            raise ConfigError(f"config is for command {loaded['command']!r}, not {args.command!r}")
        loaded.pop("command", None)
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        cfg.update(loaded)
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "no_plots", False):
        cfg["plots"] = False
    cfg["method"] = _split_list(cfg["method"])
    cfg["checks"] = _split_list(cfg["checks"])
    if isinstance(cfg["n_grid"], str):
        try:
            cfg["n_grid"] = [int(v) for v in _split_list(cfg["n_grid"])]
        except ValueError:
            raise ConfigError(f"--n-grid must be a comma-separated list of integers, got {cfg['n_grid']!r}") from None
    if not 0 < cfg["level"] < 1:
        raise ConfigError("--level must lie in (0, 1)")
    if cfg["epsilon"] is not None and not cfg["epsilon"] > 0:
        raise ConfigError("--epsilon must be positive")
    if not cfg["tolerance"] > 0:
        raise ConfigError("--tolerance must be positive")
    for key in ("b", "s", "margins"):
        if cfg[key] is not None and not Path(cfg[key]).is_file():
            raise ConfigError(f"--{key} file not found: {cfg[key]}")
    cfg["command"] = args.command
    return cfg


def ingest(b_path, s_path=None, margins_path=None, s_frame="U"):
    b = nio.read_b_sample(b_path)
    s = None
    if s_path:
        s = nio.read_s_sample(s_path, b=b if s_frame == "U_minus_B" else None)
    margins = nio.read_margins(margins_path) if margins_path else None
    return b, s, margins


def _need(value, what, method):
    if value is None:
        raise ConfigError(f"method {method!r} needs {what}")
    return value


def _population_size(cfg, margins):
    if cfg["N"] is not None:
        N = int(cfg["N"])
        if margins is not None and margins.N is not None and margins.N != N:
            raise DataError(f"--N {N} disagrees with the margins total {margins.N}")
        return N
    return None if margins is None else margins.N


def _calibration_target(margins, method):
    """(t_map, totals) from either stratum sizes or named totals."""
    margins = _need(margins, "a margins file", method)
    if margins.sizes is not None:
        levels = list(margins.sizes)
        return dummies(levels), np.array([margins.sizes[k] for k in levels], dtype=float)
    if margins.names == ["1", "x"]:
        return linear_in_label, margins.totals
    if all(n.startswith("x=") for n in margins.names):
        levels = [nio.parse_label(n[2:]) for n in margins.names]
        return dummies(levels), margins.totals
    raise ConfigError(f"cannot build t(x) for components {margins.names}; use '1,x' or 'x=<label>' names")


def run_estimators(cfg, b, s, margins) -> list:
    methods = cfg["method"] or ["expansion"]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown method(s) {unknown}; choose from {list(METHODS)}")
    N = _population_size(cfg, margins)
    sizes = None if margins is None else margins.sizes
    out = []
    for m in methods:
        if m == "expansion":
            est = expansion(b, _need(N, "--N or stratum margins", m))
        elif m == "post_stratified":
            sizes_m = _need(sizes, "stratum margins (x,N_x)", m)
            est = post_stratified(b, sizes_m)
            est = _with_var(est, poststrat_variance(b, sizes_m, expand_phat=True).value)
        elif m == "calibration":
            t_map, totals = _calibration_target(margins, m)
            fit = calibrate(b, CalibrationSpec(t_map=t_map, totals=totals, N=N, initial="uniform" if N else "explicit",
                                               a=None if N else np.ones(b.n)))
            est = calibration_estimate(fit, b)
            if sizes is not None:
                est = _with_var(est, calibration_variance(fit, b, sizes).value)
        elif m in ("ipw_saturated", "ipw_logistic"):
            model = m.split("_", 1)[1]
            fit = fit_propensity(b, mode="census", model=model, stratum_sizes=_need(sizes, "stratum margins", m),
                                 t_map=linear_in_label)
            est = ipw(b, fit, N=N)
        elif m == "reference_ipw":
            est = reference_ipw(b, _need(s, "--s", m), _need(N, "--N or stratum margins", m))
        elif m == "sample_matching":
            s_m = _need(s, "--s", m)
            est = sm_estimate(s_m, nn_match(s_m, b), N=N)
        elif m == "two_phase_sm":
            est = two_phase_sm(_need(s, "--s", m), b, epsilon=cfg["epsilon"], N=N)
        elif m == "hajek_mean":
            s_m = _need(s, "--s", m)
            est = _with_var(hajek_mean(s_m), design_variance_hajek(s_m).value)
        elif m == "split_population":
            est = split_population(b, _need(s, "--s", m), _need(N, "--N or stratum margins", m))
        else:
            est = composite(b, _need(s, "--s", m), _need(N, "--N or stratum margins", m))
        out.append(est)
    return out


def _with_var(est, var):
    return replace(est, variance=var)


def write_estimates(ctx: RunContext, estimates, level: float):
    zq = stats.norm.ppf(0.5 + level / 2)
    with open(ctx.path("estimates.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "target", "value", "variance", "ci_lower", "ci_upper", "diagnostics"])
        for e in estimates:
            rec = e.to_record().split(",", 4)
            if e.variance is None:
                lo = hi = ""
            else:
                half = zq * math.sqrt(e.variance)
                lo, hi = repr(float(e.value - half)), repr(float(e.value + half))
            w.writerow(rec[:4] + [lo, hi, rec[4]])


def cmd_estimate(cfg, ctx: RunContext):
    b, s, margins = ingest(_need(cfg["b"], "--b", "estimate"), cfg["s"], cfg["margins"], cfg["s_frame"])
    write_estimates(ctx, run_estimators(cfg, b, s, margins), cfg["level"])


def _cell_p_hat(kind, b, sizes):
    N = sum(sizes.values())
    if kind == "constant":
        return {lab: b.n / N for lab in sizes}
    if kind == "saturated":
        counts = {lab: 0 for lab in sizes}
        for lab in b.x.tolist():
            if lab not in counts:
                raise DataError(f"B-sample label {lab!r} missing from the margins")
            counts[lab] += 1
        return {lab: counts[lab] / sizes[lab] for lab in sizes}
    raise ConfigError(f"--p-hat must be 'constant' or 'saturated', not {kind!r}")


def cmd_diagnose(cfg, ctx: RunContext):
    b, s, margins = ingest(_need(cfg["b"], "--b", "diagnose"), cfg["s"], cfg["margins"], cfg["s_frame"])
    checks = cfg["checks"] or ["propensity"]
    unknown = [c for c in checks if c not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown check(s) {unknown}; choose from {list(CHECKS)}")
    csv_parts, text_parts = [], []

    def add(title, report):
        body = report.to_csv().splitlines()
        csv_parts.extend(body[1:] if csv_parts else body)
        text_parts.append(f"== {title} ==\n{report.to_text()}")

    sizes = None if margins is None else margins.sizes
    for check in checks:
        if check == "propensity":
            sizes_c = _need(sizes, "stratum margins (x,N_x)", check)
            p_hat = _cell_p_hat(cfg["p_hat"], b, sizes_c)
            add(f"propensity identities ({cfg['p_hat']} fit)",
                diag.propensity_checks(p_hat, b, margins.N, stratum_sizes=sizes_c, rtol=cfg["tolerance"]))
        elif check == "z":
            sizes_c = _need(sizes, "stratum margins (x,N_x)", check)
            zbar = _need(margins.zbar, "a Zbar_x column in the margins file", check)
            Z = sum(sizes_c[k] * zbar[k] for k in sizes_c)
            p_hat = _cell_p_hat(cfg["p_hat"], b, sizes_c)
            add("z-checks", diag.z_checks(b, Z, zbar, sizes_c, p_hat=p_hat, rtol=cfg["tolerance"]))
        elif check == "h0":
            res = h0_test(b, _need(s, "--s with y from U minus B", check), level=1 - cfg["level"])
            ctx.write_text("h0_test.json", json.dumps({
                "statistic": res.statistic, "reject": res.reject, "level": res.level,
                "critical_value": res.critical_value, "p_value": res.p_value,
                "complement_mean_estimate": res.complement_mean_estimate,
                "complement_variance": res.complement_variance,
            }, indent=2) + "\n")
            verdict = "reject" if res.reject else "do not reject"
            text_parts.append(f"== test of ybar_B against the complement mean ==\n"
                              f"eta = {res.statistic:.6g}, critical value {res.critical_value:.4g} "
                              f"at level {res.level:g}: {verdict} (p = {res.p_value:.4g})\n")
        else:
            q = diag.match_quality(nn_match(_need(s, "--s", check), b))
            ctx.write_text("match_quality.json", json.dumps(q, indent=2) + "\n")
            text_parts.append("== match quality ==\n" + "".join(f"{k}: {v}\n" for k, v in q.items()))
    if csv_parts:
        ctx.write_text("checks.csv", "\n".join(csv_parts) + "\n")
    ctx.write_text("report.txt", "\n".join(text_parts))


def scenario_from_cfg(cfg):
    from .simharness import ScenarioConfig, preset

    if cfg["scenario"] is not None:
        scen = ScenarioConfig.from_dict(cfg["scenario"])
    elif cfg["preset"] is not None:
        scen = preset(cfg["preset"])
    else:
        raise ConfigError("simulate needs --preset or a scenario in --config")
    changes = dict(cfg["overrides"] or {})
    if cfg["seed"] is not None:
        changes["root_seed"] = int(cfg["seed"])
    if cfg["replicates"] is not None:
        changes["R"] = int(cfg["replicates"])
    if cfg["n_grid"] is not None:
        changes["n_grid"] = tuple(cfg["n_grid"])
    changes.setdefault("level", cfg["level"])
    try:
        return scen.with_(**changes) if changes else scen
    except TypeError as exc:
        raise ConfigError(f"bad scenario override: {exc}") from None


def cmd_simulate(cfg, ctx: RunContext):
    from .simharness import run_scenario

    scen = scenario_from_cfg(cfg)
    cfg["resolved_scenario"] = scen.to_dict()
    summary = run_scenario(scen, workers=int(cfg["workers"]))
    ctx.write_text("summary.csv", summary.to_csv())
    ctx.write_text("summary_long.csv", summary.to_long_csv())
    ctx.write_text("diagnostics.csv", summary.diagnostics_csv())
    if cfg["plots"]:
        from .plotting import plot_bias, plot_coverage, plot_rmse

        plot_bias(summary, ctx.path("bias.png"))
        plot_rmse(summary, ctx.path("rmse.png"))
        cov_path = ctx.out / "coverage.png"
        if plot_coverage(summary, cov_path) is not None:
            ctx.artifacts.append(cov_path)


def cmd_presets(cfg, ctx):
    from .simharness import PRESETS, preset

    lines = []
    for name in PRESETS:
        p = preset(name)
        lines.append(f"{name}: {p.expected}")
    print("\n".join(lines))
    if ctx is not None:
        ctx.write_text("presets.json", json.dumps({n: preset(n).to_dict() for n in PRESETS}, indent=2) + "\n")


COMMANDS = {"estimate": cmd_estimate, "diagnose": cmd_diagnose, "simulate": cmd_simulate, "presets": cmd_presets}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nonprob", description="Estimation from non-probability samples.")
    parser.add_argument("--version", action="version", version=f"nonprob {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with run settings; flags override it")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--level", type=float,
                       help="confidence level for intervals (default 0.95); tests run at 1 - level")
        p.add_argument("--tolerance", type=float, help="relative tolerance for identity checks")

    def data(p):
        p.add_argument("--b", help="B-sample CSV: unit_id,y,x[,z]")
        p.add_argument("--s", help="S-sample CSV: unit_id,pi[,y][,x][,z]")
        p.add_argument("--margins", help="margins CSV: x,N_x[,Zbar_x] or t_component,total")
        p.add_argument("--N", type=int, help="population size")
        p.add_argument("--s-frame", dest="s_frame", choices=("U", "U_minus_B"),
                       help="frame of the S-sample; U_minus_B rejects units also in B")

    p = sub.add_parser("estimate", help="estimate a total or mean from sample files")
    common(p)
    data(p)
    p.add_argument("--method", help=f"comma-separated list from {','.join(METHODS)}")
    p.add_argument("--epsilon", type=float, help="support radius for two_phase_sm")

    p = sub.add_parser("diagnose", help="run validity checks on sample files")
    common(p)
    data(p)
    p.add_argument("--checks", help=f"comma-separated list from {','.join(CHECKS)}")
    p.add_argument("--p-hat", dest="p_hat", choices=("constant", "saturated"), help="propensity fit to check")
    p.add_argument("--method", help=argparse.SUPPRESS)
    p.add_argument("--epsilon", type=float, help=argparse.SUPPRESS)

    p = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    common(p)
    p.add_argument("--preset")
    p.add_argument("--replicates", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--n-grid", dest="n_grid", help="comma-separated increasing population sizes")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    p.add_argument("--method", help=argparse.SUPPRESS)
    p.add_argument("--epsilon", type=float, help=argparse.SUPPRESS)

    p = sub.add_parser("presets", help="list scenario presets and their expected outcomes")
    common(p)
    return parser


def _json_safe(v):
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    return v


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    ctx = None
    try:
        cfg = resolve_config(args)
        if args.command != "presets" or args.out:
            ctx = RunContext(Path(cfg["out"]))
        COMMANDS[args.command](cfg, ctx)
        if ctx is not None:
            names = [p.name for p in ctx.artifacts]
            manifest = {"version": __version__, "command": args.command, "artifacts": names + ["manifest.json"],
                        "config": _json_safe(cfg)}
            ctx.write_text("manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return 0
    except NonProbError as exc:
        return _fail(ctx, exc.category, exc.exit_code, exc)
    except Exception as exc:  # anything unexpected is an internal error
        return _fail(ctx, "internal", 5, exc)


def _fail(ctx, category, code, exc) -> int:
    if ctx is not None:
        ctx.cleanup()
    print(json.dumps({"error": {"category": category, "type": type(exc).__name__, "message": str(exc)}}),
          file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
