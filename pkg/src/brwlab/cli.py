"""Command-line front end.

Every subcommand writes its outputs into the output directory (``--out``,
else ``$BRWLAB_OUT``, else ``./brwlab-output``).  Exit status: 0 when every
verdict passes, 1 when some verdict fails, 2 on usage errors, 3 on runtime
errors such as too few surviving replicates.

Config files are flat ``key = value`` lines; ``#`` starts a comment.  Keys are
the long flag names without dashes (``n-grid`` and ``n_grid`` are the same).
Command-line flags override file values and unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from .brw_engine import SiteConfiguration, horizon_for, profile_ks_distance, run_to_horizon
from .exact_probs import QuadratureNotConverged, kac_transition_prob, rw_dp_transition_prob
from .experiments import ExperimentReport, Verdict, default_config, load_tolerances, run_experiment
from .gw_core import (
    InsufficientSurvivors,
    PopulationOverflow,
    law_by_name,
    survival_curve,
    yaglom_diagnostic,
)
from .rng import rng_meta, stream
from .rw_core import WalkParams
from .scaling_limits import extinction_probability, feller_exact_marginal
from .serialize import canonical_json, csv_text, write_snapshots, write_text
from .stats import MCEstimate, mean_estimate, proportion_estimate
from .validate import run_validation

SUBCOMMANDS = (
    "simulate-brw",
    "exact-prob",
    "gw-stats",
    "feller",
    "max-displacement",
    "profile",
    "total-mass",
    "survival-curve",
    "validate",
)
EXPERIMENT_COMMANDS = {
    "max-displacement": "max_displacement",
    "profile": "profile",
    "total-mass": "total_mass",
    "survival-curve": "survival_curve",
}
DEFAULT_SEED = 20240607


class UsageError(Exception):
    pass


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


# key -> converter; the same keys are valid in config files and as --flags.
KEYS = {
    "beta": float,
    "n": int,
    "alpha": float,
    "t": float,
    "y": float,
    "delta": _float_list,
    "law": str,
    "replicates": int,
    "seed": int,
    "workers": int,
    "out": str,
    "n_grid": _int_list,
    "start": int,
    "m": int,
    "horizon": int,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brwlab", description="Branching random walk with drift toward a reflecting origin.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--beta", type=float)
    parser.add_argument("--n", type=int)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--t", type=float)
    parser.add_argument("--y", type=float)
    parser.add_argument("--delta", type=_float_list, help="one value or a comma list")
    parser.add_argument("--law", choices=("binary", "geom", "poisson1"))
    parser.add_argument("--replicates", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--out")
    parser.add_argument("--n-grid", dest="n_grid", type=_int_list, help="comma list, e.g. 50,100,200")
    parser.add_argument("--start", type=int, help="exact-prob: starting site")
    parser.add_argument("--m", type=int, help="exact-prob / gw-stats: number of steps")
    parser.add_argument("--horizon", type=int, help="survival-curve: generation of the spatial check")
    return parser


def read_config(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = KEYS[key](raw)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def resolve(args: argparse.Namespace) -> dict:
    values = read_config(args.config) if args.config else {}
    for key in KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if values.get("workers", 1) < 1:
        raise UsageError("--workers must be positive")
    return values


def output_dir(values: dict) -> Path:
    return Path(values.get("out") or os.environ.get("BRWLAB_OUT") or "brwlab-output")


def _law(values: dict, default: str = "geometric_half"):
    return law_by_name(values.get("law", default))


def _seed(values: dict) -> int:
    return int(values.get("seed", DEFAULT_SEED))


def _summary_report(out: Path, config: dict, estimates: dict, theory: dict, verdicts: dict[str, Verdict]) -> bool:
    report = {
        "config": config,
        "cells": [
            {
                "n": config.get("n"),
                "estimates": {k: v.as_dict() for k, v in estimates.items()},
                "theory": theory,
                "verdicts": {k: v.as_dict() for k, v in verdicts.items()},
            }
        ],
        "meta": {"seed": config.get("seed"), "rng": rng_meta()},
    }
    write_text(out / "report.json", canonical_json(report))
    return all(v.passed for v in verdicts.values())


def _print_verdicts(verdicts: dict[str, Verdict]) -> None:
    for name, v in verdicts.items():
        print(f"{'PASS' if v.passed else 'FAIL'}  {name}  ({v.tolerance})")


# -- subcommands -----------------------------------------------------------------


def cmd_exact_prob(values: dict) -> int:
    params = WalkParams(values.get("beta", 0.5), values.get("n", 100))
    start, m = values.get("start", 0), values.get("m", 10)
    if start < 0 or m < 0:
        raise UsageError("--start and --m must be nonnegative")
    row = rw_dp_transition_prob(params, start, m)
    tol = load_tolerances()["oracle"]["abs"]
    rows, worst = [], 0.0
    for k in range(start + m + 1):
        dp = row[k]
        if m >= 1 and k >= 1:
            dec = kac_transition_prob(params, start, m, k)
            kac, main, rem = dec.total, dec.main_term, dec.remainder
            worst = max(worst, abs(kac - dp))
        else:
            kac = main = rem = math.nan
        rows.append((k, dp, kac, main, rem))
    out = output_dir(values)
    write_text(out / "exact_prob.csv", csv_text(("site", "probability", "kac", "main_term", "remainder"), rows))
    verdicts = {"kac_matches_dp": Verdict(worst < tol, f"max |kac - dp| < {tol}")}
    config = {"subcommand": "exact-prob", "beta": params.beta, "n": params.n, "start": start, "m": m}
    ok = _summary_report(out, config, {}, {"max_abs_difference": worst}, verdicts)
    sys.stdout.write(csv_text(("site", "probability"), [(r[0], r[1]) for r in rows]))
    return 0 if ok else 1


def cmd_gw_stats(values: dict) -> int:
    law = _law(values)
    m = values.get("m", 500)
    replicates = values.get("replicates", 10**6)
    seed = _seed(values)
    tol = load_tolerances()
    res = yaglom_diagnostic(law, m, replicates, stream(seed, "gw-stats", m))
    rho = survival_curve(law, m)
    out = output_dir(values)
    write_text(
        out / "curves" / "survival.csv",
        csv_text(("m", "rho_m", "kolmogorov_ratio"), [(k, rho[k], k * rho[k] * law.variance / 2) for k in range(1, m + 1)]),
    )
    estimates = {
        "yaglom_ks": MCEstimate(res.ks_distance, math.nan, res.survivors),
        "conditional_mean": MCEstimate(res.conditional_mean, res.conditional_mean_stderr, res.survivors),
        "survival_frequency": proportion_estimate(res.survivors, res.replicates),
    }
    theory = {"limit_mean": res.limit_mean, "rho_m": float(rho[m])}
    ks_max, rel = tol["yaglom"]["ks_max"], tol["yaglom"]["mean_rel"]
    verdicts = {
        "yaglom_ks": Verdict(res.ks_distance < ks_max, f"KS < {ks_max}"),
        "conditional_mean": Verdict(abs(res.conditional_mean / res.limit_mean - 1) < rel, f"relative error < {rel}"),
        "survival_frequency": Verdict(estimates["survival_frequency"].within(float(rho[m])), "3 se of exact rho_m"),
    }
    config = {"subcommand": "gw-stats", "law": law.name, "m": m, "replicates": replicates, "seed": seed}
    ok = _summary_report(out, config, estimates, theory, verdicts)
    _print_verdicts(verdicts)
    return 0 if ok else 1


def cmd_feller(values: dict) -> int:
    law = _law(values)
    y, t = values.get("y", 1.0), values.get("t", 1.0)
    size = values.get("replicates", 10**5)
    seed = _seed(values)
    samples = feller_exact_marginal(y, law.variance, t, stream(seed, "feller-cli"), size)
    out = output_dir(values)
    write_text(out / "feller.csv", csv_text(("sample", "mass"), enumerate(samples.tolist())))
    zero = proportion_estimate(int(np.count_nonzero(samples == 0)), size)
    mean = mean_estimate(samples)
    p0 = extinction_probability(y, law.variance, t)
    verdicts = {
        "extinction_probability": Verdict(zero.within(p0), "3 se of exp(-2y/(t sigma^2))"),
        "mean": Verdict(mean.within(y), "3 se of y"),
    }
    config = {"subcommand": "feller", "y": y, "t": t, "sigma2": law.variance, "replicates": size, "seed": seed}
    ok = _summary_report(out, config, {"extinction": zero, "mean": mean}, {"extinction": p0, "mean": y}, verdicts)
    _print_verdicts(verdicts)
    return 0 if ok else 1


def cmd_simulate_brw(values: dict) -> int:
    law = _law(values)
    params = WalkParams(values.get("beta", 0.5), values.get("n", 100))
    alpha, t, y = values.get("alpha", 1.2), values.get("t", 1.0), values.get("y", 1.0)
    seed = _seed(values)
    z0 = int(math.ceil(y * params.n**alpha))
    horizon = horizon_for(params.n, alpha, t)
    times = sorted({0, horizon // 4, horizon // 2, (3 * horizon) // 4, horizon})
    rec = run_to_horizon(SiteConfiguration.at_origin(z0), params, law, horizon, stream(seed, "simulate-brw"), times)
    out = output_dir(values)
    write_snapshots(out / "snapshots.csv", [rec.snapshots[k] for k in times])
    summary = {
        "config": {"subcommand": "simulate-brw", "beta": params.beta, "n": params.n, "law": law.name,
                   "alpha": alpha, "t": t, "y": y, "seed": seed},
        "run": {
            "initial_particles": z0,
            "horizon": horizon,
            "survived": rec.survived,
            "rightmost_at_horizon": rec.rightmost_at_horizon,
            "final_total": rec.final.total,
            "profile_ks": profile_ks_distance(rec.final, math.sqrt(params.n), params.beta) if rec.survived and params.beta > 0 else None,
            "snapshot_totals": {str(k): rec.snapshots[k].total for k in times},
        },
        "meta": {"seed": seed, "rng": rng_meta()},
    }
    write_text(out / "report.json", canonical_json(summary))
    print(f"survived={rec.survived} total={rec.final.total} rightmost={rec.rightmost_at_horizon}")
    return 0


def cmd_experiment(name: str, values: dict) -> int:
    overrides = {}
    for key in ("beta", "alpha", "t", "y", "replicates", "horizon"):
        if key in values:
            overrides[key] = values[key]
    if "law" in values:
        overrides["law"] = values["law"]
    if "delta" in values:
        overrides["deltas"] = values["delta"]
    if "seed" in values:
        overrides["master_seed"] = values["seed"]
    if "n_grid" in values:
        overrides["n_grid"] = values["n_grid"]
    elif "n" in values:
        overrides["n_grid"] = (values["n"],)
    try:
        config = default_config(name, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report: ExperimentReport = run_experiment(config, workers=values.get("workers", 1))
    path = report.write(output_dir(values))
    _print_verdicts(report.all_verdicts())
    print(f"report: {path}")
    return 0 if report.passed else 1


def cmd_validate(values: dict) -> int:
    verdicts = run_validation(_seed(values))
    out = output_dir(values)
    ok = _summary_report(out, {"subcommand": "validate", "seed": _seed(values)}, {}, {}, verdicts)
    _print_verdicts(verdicts)
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        values = resolve(args)
        cmd = args.subcommand
        if cmd in EXPERIMENT_COMMANDS:
            return cmd_experiment(EXPERIMENT_COMMANDS[cmd], values)
        handler = {
            "exact-prob": cmd_exact_prob,
            "gw-stats": cmd_gw_stats,
            "feller": cmd_feller,
            "simulate-brw": cmd_simulate_brw,
            "validate": cmd_validate,
        }[cmd]
        return handler(values)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"brwlab: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        parser.print_usage(sys.stderr)
        print(f"brwlab: error: {exc}", file=sys.stderr)
        return 2
    except (InsufficientSurvivors, PopulationOverflow, QuadratureNotConverged) as exc:
        print(f"brwlab: runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
