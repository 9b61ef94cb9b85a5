"""Desk-scale statistical experiments on the branching random walk.

Four experiments, each producing an :class:`ExperimentReport`:

``max_displacement``
    rightmost particle at ``[n^alpha]`` given survival, rescaled by
    ``sqrt(n) log n``, against ``(alpha - 1) / (4 beta)``.
``profile``
    KS distance between the mass-normalized rescaled configuration at
    ``[n^alpha t]`` and the exponential law of rate ``4 beta``.
``total_mass``
    ``P(Z > delta n^alpha)`` at ``[n^alpha t]`` against the Feller diffusion.
``survival_curve``
    exact Galton-Watson survival probabilities against the Kolmogorov
    asymptotic and against the spatial process.

Replicates are simulated in fixed blocks, each with its own random stream
derived from the master seed, the experiment, ``n`` and the block index.  The
block layout does not depend on the worker count and results are reduced in
block order, so reports are identical for any ``workers``.

For the conditioned experiments ``replicates`` is the target number of
survivors; the number of attempted runs is ``ceil(1.3 * replicates / p)``
with ``p`` the exact survival probability.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .brw_engine import SiteConfiguration, horizon_for, terminal_statistics
from .gw_core import (
    MIN_SURVIVORS,
    InsufficientSurvivors,
    law_by_name,
    survival_curve,
    survival_probability,
)
from .rng import blocks, rng_meta, stream
from .rw_core import WalkParams
from .scaling_limits import ExponentialProfile, extinction_probability, feller_exact_marginal
from .serialize import canonical_json, csv_text, write_text
from .stats import MCEstimate, combined_stderr, mean_estimate, median_with_stderr, proportion_estimate

EXPERIMENTS = ("max_displacement", "profile", "total_mass", "survival_curve")
BUDGET_FACTOR = 1.3
FELLER_SAMPLES = 10**6
BOOTSTRAP_RESAMPLES = 400
KOLMOGOROV_M = 10**5
RAW_HEADER = ("replicate", "n", "survived", "statistic_name", "value")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    beta: float = 0.5
    law: str = "geometric_half"
    alpha: float = 1.5
    t: float = 1.0
    y: float = 1.0
    deltas: tuple[float, ...] = (0.0, 0.5, 1.0)
    replicates: int = 1000
    master_seed: int = 20240607
    n_grid: tuple[int, ...] = (50, 100, 200)
    horizon: int = 1000
    min_survivors: int = MIN_SURVIVORS

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        object.__setattr__(self, "law", law_by_name(self.law).name)
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("n_grid must be nonempty and strictly increasing")
        for n in self.n_grid:
            WalkParams(self.beta, n)
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if not (self.t > 0 and self.y > 0):
            raise ValueError("t and y must be positive")
        if not self.deltas or any(d < 0 for d in self.deltas):
            raise ValueError("deltas must be nonnegative")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.horizon < 0 or self.min_survivors < 1:
            raise ValueError("horizon must be >= 0 and min_survivors >= 1")

    def params(self, n: int) -> WalkParams:
        return WalkParams(self.beta, n)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["deltas"] = list(self.deltas)
        d["n_grid"] = list(self.n_grid)
        return d


DEFAULTS = {
    "max_displacement": dict(alpha=1.5, replicates=2000, n_grid=(50, 100, 200)),
    "profile": dict(alpha=1.2, t=1.0, y=1.0, replicates=1000, n_grid=(50, 100, 200)),
    "total_mass": dict(alpha=1.2, t=1.0, y=1.0, replicates=20000, n_grid=(100,)),
    "survival_curve": dict(replicates=100000, n_grid=(100,), horizon=1000),
}


def default_config(experiment: str, **overrides) -> ExperimentConfig:
    values = dict(DEFAULTS[experiment])
    values.update(overrides)
    return ExperimentConfig(experiment=experiment, **values)


@dataclass(frozen=True)
class Verdict:
    passed: bool
    tolerance: str

    def as_dict(self) -> dict:
        return {"pass": bool(self.passed), "tolerance": self.tolerance}


@dataclass
class Cell:
    n: int
    estimates: dict[str, MCEstimate] = field(default_factory=dict)
    theory: dict[str, float] = field(default_factory=dict)
    verdicts: dict[str, Verdict] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "estimates": {k: v.as_dict() for k, v in self.estimates.items()},
            "theory": dict(self.theory),
            "verdicts": {k: v.as_dict() for k, v in self.verdicts.items()},
        }


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    cells: list[Cell]
    verdicts: dict[str, Verdict] = field(default_factory=dict)
    events: dict[str, int] = field(default_factory=dict)
    raw: list[tuple] = field(default_factory=list)
    curves: dict[str, tuple[tuple[str, ...], list[tuple]]] = field(default_factory=dict)
    wallclock_s: float = 0.0

    def all_verdicts(self) -> dict[str, Verdict]:
        out = {f"n={c.n}:{k}": v for c in self.cells for k, v in c.verdicts.items()}
        out.update(self.verdicts)
        return out

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.all_verdicts().values())

    def cell(self, n: int) -> Cell:
        for c in self.cells:
            if c.n == n:
                return c
        raise KeyError(n)

    def as_dict(self) -> dict:
        return {
            "config": self.config.as_dict(),
            "cells": [c.as_dict() for c in self.cells],
            "verdicts": {k: v.as_dict() for k, v in self.verdicts.items()},
            "meta": {
                "seed": self.config.master_seed,
                "version": __version__,
                "rng": rng_meta(),
                "events": dict(self.events),
            },
        }

    def to_json(self) -> str:
        return canonical_json(self.as_dict())

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        write_text(out / "report.json", self.to_json())
        write_text(out / "raw.csv", csv_text(RAW_HEADER, self.raw))
        for name, (header, rows) in self.curves.items():
            write_text(out / "curves" / f"{name}.csv", csv_text(header, rows))
        # Wall-clock lives apart from the report so reports stay byte-identical.
        write_text(out / "timing.json", canonical_json({"wallclock_s": self.wallclock_s}))
        return out / "report.json"


def max_displacement_constant(alpha: float, beta: float) -> float:
    """Limit ``(alpha - 1) / (4 beta)`` of the rescaled rightmost particle."""
    if not alpha > 1 or not beta > 0:
        raise ValueError("need alpha > 1 and beta > 0")
    return (alpha - 1) / (4 * beta)


# -- tolerances ----------------------------------------------------------------


def load_tolerances(path=None) -> dict:
    if path is None:
        text = resources.files("brwlab").joinpath("data/tolerances.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return json.loads(text)


def displacement_band(tolerances: dict, alpha: float, beta: float, law: str, n: int) -> tuple[float, float, str]:
    """Band for the median of ``R / (sqrt(n) log n)``: a calibrated cell if present, else the default."""
    section = tolerances["max_displacement"]
    for cell in section["cells"]:
        if (cell["alpha"], cell["beta"], cell["law"], cell["n"]) == (alpha, beta, law, n):
            lo, hi = cell["band"]
            return lo, hi, f"pilot band [{lo:.4g}, {hi:.4g}] (tolerance file v{tolerances['version']})"
    theta = max_displacement_constant(alpha, beta)
    f_lo, f_hi = section["default_band_factors"]
    return f_lo * theta, f_hi * theta, f"default band [{f_lo}, {f_hi}] x theory"


# -- block fan-out -------------------------------------------------------------


def _terminal_block(task):
    seed, label, n, block, size, beta, law_name, z0, horizon, profile_beta = task
    rng = stream(seed, label, n, block)
    return terminal_statistics(
        SiteConfiguration.at_origin(z0),
        WalkParams(beta, n),
        law_by_name(law_name),
        horizon,
        size,
        rng,
        profile_beta=profile_beta,
    )


def _run_blocks(tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [_terminal_block(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_terminal_block, tasks))


def _terminal_runs(config, label, n, z0, horizon, total, workers, profile_beta=None):
    tasks = [
        (config.master_seed, label, n, b, size, config.beta, config.law, z0, horizon, profile_beta)
        for b, size in blocks(total)
    ]
    parts = _run_blocks(tasks, workers)
    if not parts:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def _budget(target: int, p_survive: float) -> int:
    return int(math.ceil(BUDGET_FACTOR * target / p_survive))


def _require(survivors: int, config: ExperimentConfig, n: int) -> None:
    if survivors < config.min_survivors:
        raise InsufficientSurvivors(survivors, config.min_survivors, f"{config.experiment}, n={n}")


def _within(est: MCEstimate, target: float, n_se: float = 3.0, slack: float = 0.0) -> Verdict:
    return Verdict(est.within(target, n_se, slack), f"|est - {target:.6g}| <= {n_se} se + {slack}")


# -- experiments ---------------------------------------------------------------


def run_max_displacement(config: ExperimentConfig, workers: int = 1, tolerances: dict | None = None) -> ExperimentReport:
    """Conditioned rightmost particle at ``[n^alpha]`` for each ``n`` in the grid."""
    if config.experiment != "max_displacement":
        raise ValueError("config is not a max_displacement experiment")
    tol = tolerances or load_tolerances()
    start = time.perf_counter()
    law = law_by_name(config.law)
    theta = max_displacement_constant(config.alpha, config.beta)
    cells, raw, curve = [], [], []
    attempts = survivors_total = 0
    for n in config.n_grid:
        horizon = horizon_for(n, config.alpha)
        rho = survival_probability(law, horizon)
        budget = _budget(config.replicates, rho)
        _, rightmost, _ = _terminal_runs(config, "max_displacement", n, 1, horizon, budget, workers)
        alive = np.flatnonzero(rightmost >= 0)
        _require(alive.size, config, n)
        scaled = rightmost[alive] / (math.sqrt(n) * math.log(n))
        boot = stream(config.master_seed, "bootstrap", n)
        med = median_with_stderr(scaled, boot, BOOTSTRAP_RESAMPLES)
        q25, q75 = np.quantile(scaled, [0.25, 0.75])
        cell = Cell(n)
        cell.estimates["median_scaled_rightmost"] = med
        cell.estimates["iqr_scaled_rightmost"] = MCEstimate(float(q75 - q25), math.nan, int(alive.size))
        cell.estimates["signed_distance_to_theory"] = MCEstimate(med.value - theta, med.stderr, med.count)
        cell.estimates["survival_frequency"] = proportion_estimate(int(alive.size), budget)
        cell.theory["max_displacement_constant"] = theta
        cell.theory["survival_probability"] = rho
        cell.theory["horizon"] = horizon
        lo, hi, desc = displacement_band(tol, config.alpha, config.beta, config.law, n)
        cell.verdicts["median_in_band"] = Verdict(lo <= med.value <= hi, desc)
        cell.verdicts["survival_frequency"] = _within(cell.estimates["survival_frequency"], rho)
        cells.append(cell)
        raw.append((-1, n, int(alive.size), "attempts", budget))
        raw.extend((int(i), n, 1, "rightmost_scaled", float(v)) for i, v in zip(alive, scaled))
        curve.append((n, med.value, med.stderr, float(q25), float(q75), theta))
        attempts += budget
        survivors_total += int(alive.size)
    gaps = [abs(c.estimates["median_scaled_rightmost"].value - theta) for c in cells]
    report = ExperimentReport(config, cells)
    report.verdicts["trend_nonincreasing"] = Verdict(
        all(b <= a for a, b in zip(gaps, gaps[1:])), "|median - theory| nonincreasing in n"
    )
    report.events = {"runs": attempts, "survivors": survivors_total}
    report.raw = raw
    report.curves["max_displacement"] = (("n", "median", "median_stderr", "q25", "q75", "theory"), curve)
    report.wallclock_s = time.perf_counter() - start
    return report


def run_profile(config: ExperimentConfig, workers: int = 1, tolerances: dict | None = None) -> ExperimentReport:
    """Spatial profile at ``[n^alpha t]`` from ``ceil(y n^alpha)`` particles at the origin."""
    if config.experiment != "profile":
        raise ValueError("config is not a profile experiment")
    tol = tolerances or load_tolerances()
    ks_max = tol["profile"]["mean_ks_max"]
    start = time.perf_counter()
    law = law_by_name(config.law)
    profile = ExponentialProfile(config.beta)
    cells, raw, curve = [], [], []
    attempts = survivors_total = 0
    for n in config.n_grid:
        scale = n**config.alpha
        z0 = int(math.ceil(config.y * scale))
        horizon = horizon_for(n, config.alpha, config.t)
        p_survive = -math.expm1(z0 * math.log1p(-survival_probability(law, horizon)))
        budget = _budget(config.replicates, p_survive)
        totals, rightmost, ks = _terminal_runs(config, "profile", n, z0, horizon, budget, workers, config.beta)
        alive = np.flatnonzero(totals > 0)
        _require(alive.size, config, n)
        cell = Cell(n)
        cell.estimates["mean_ks"] = mean_estimate(ks[alive])
        cell.estimates["median_ks"] = median_with_stderr(ks[alive], stream(config.master_seed, "bootstrap", n))
        cell.estimates["survival_frequency"] = proportion_estimate(int(alive.size), budget)
        cell.theory["survival_probability"] = p_survive
        cell.theory["horizon"] = horizon
        cell.theory["initial_particles"] = z0
        cell.verdicts["mean_ks"] = Verdict(cell.estimates["mean_ks"].value < ks_max, f"mean KS < {ks_max}")
        cell.verdicts["survival_frequency"] = _within(cell.estimates["survival_frequency"], p_survive)
        cells.append(cell)
        raw.append((-1, n, int(alive.size), "attempts", budget))
        for i in alive:
            raw.append((int(i), n, 1, "ks", float(ks[i])))
            raw.append((int(i), n, 1, "total", int(totals[i])))
        edges = (np.arange(int(rightmost.max()) + 2) + 1) / math.sqrt(n)
        curve.extend((n, float(a), float(profile.cdf(a))) for a in edges)
        attempts += budget
        survivors_total += int(alive.size)
    report = ExperimentReport(config, cells)
    if len(cells) > 1:
        first, last = cells[0].estimates["mean_ks"].value, cells[-1].estimates["mean_ks"].value
        report.verdicts["ks_decreasing"] = Verdict(
            last < first, f"mean KS at n={cells[-1].n} below n={cells[0].n}"
        )
    report.events = {"runs": attempts, "survivors": survivors_total}
    report.raw = raw
    report.curves["profile_theory"] = (("n", "a", "exponential_cdf"), curve)
    report.curves["profile_ks"] = (
        ("n", "mean_ks", "stderr", "median_ks"),
        [(c.n, c.estimates["mean_ks"].value, c.estimates["mean_ks"].stderr, c.estimates["median_ks"].value) for c in cells],
    )
    report.wallclock_s = time.perf_counter() - start
    return report


def _delta_key(delta: float) -> str:
    return f"exceed_{delta:g}"


def run_total_mass(config: ExperimentConfig, workers: int = 1, tolerances: dict | None = None) -> ExperimentReport:
    """``P(Z_{[n^alpha t]} > delta n^alpha)`` against the Feller limit ``P(Y_t > delta)``."""
    if config.experiment != "total_mass":
        raise ValueError("config is not a total_mass experiment")
    tol = tolerances or load_tolerances()
    slack, n_se = tol["total_mass"]["slack"], tol["total_mass"]["n_se"]
    start = time.perf_counter()
    law = law_by_name(config.law)
    sigma2 = law.variance
    cells, raw, curve = [], [], []
    for n in config.n_grid:
        scale = n**config.alpha
        z0 = int(math.ceil(config.y * scale))
        horizon = horizon_for(n, config.alpha, config.t)
        totals, _, _ = _terminal_runs(config, "total_mass", n, z0, horizon, config.replicates, workers)
        feller = feller_exact_marginal(config.y, sigma2, config.t, stream(config.master_seed, "feller", n), FELLER_SAMPLES)
        cell = Cell(n)
        cell.theory["extinction_limit"] = extinction_probability(config.y, sigma2, config.t)
        cell.theory["survival_limit"] = 1.0 - cell.theory["extinction_limit"]
        cell.theory["survival_exact_finite_n"] = -math.expm1(z0 * math.log1p(-survival_probability(law, horizon)))
        for delta in config.deltas:
            key = _delta_key(delta)
            emp = proportion_estimate(int(np.count_nonzero(totals > delta * scale)), totals.size)
            cell.estimates[key] = emp
            if delta == 0:
                target, ref_se = cell.theory["survival_limit"], 0.0
                label = "closed form"
            else:
                ref = proportion_estimate(int(np.count_nonzero(feller > delta)), feller.size)
                cell.estimates[f"feller_{key}"] = ref
                target, ref_se = ref.value, ref.stderr
                label = "exact Feller marginal (MC)"
            se = combined_stderr(emp.stderr, ref_se)
            cell.verdicts[key] = Verdict(
                abs(emp.value - target) <= n_se * se + slack,
                f"|emp - {label}| <= {n_se} combined se + {slack}",
            )
            curve.append((n, delta, emp.value, emp.stderr, target, ref_se))
        cells.append(cell)
        raw.extend((r, n, int(z > 0), "total_scaled", float(z / scale)) for r, z in enumerate(totals))
    report = ExperimentReport(config, cells)
    report.events = {"runs": config.replicates * len(config.n_grid), "feller_samples": FELLER_SAMPLES * len(config.n_grid)}
    report.raw = raw
    report.curves["total_mass"] = (("n", "delta", "empirical", "stderr", "reference", "reference_stderr"), curve)
    report.wallclock_s = time.perf_counter() - start
    return report


def exact_geometric_check(m_max: int) -> bool:
    """Whether exact pgf iteration for ``geometric_half`` gives ``1/(m+1)`` for every ``m <= m_max``."""
    law = law_by_name("geometric_half")
    s = Fraction(0)
    for m in range(1, m_max + 1):
        s = law.pgf(s)
        if 1 - s != Fraction(1, m + 1):
            return False
    return True


def _curve_grid(m_max: int) -> list[int]:
    grid = {1, m_max}
    k = 1
    while k <= m_max:
        grid.update(x * k for x in (1, 2, 5) if x * k <= m_max)
        k *= 10
    return sorted(grid)


def run_survival_curve(config: ExperimentConfig, workers: int = 1, tolerances: dict | None = None) -> ExperimentReport:
    """Exact survival probabilities against the Kolmogorov asymptotic and the spatial process."""
    if config.experiment != "survival_curve":
        raise ValueError("config is not a survival_curve experiment")
    tol = tolerances or load_tolerances()
    kol_tol = tol["kolmogorov"]["abs"]
    start = time.perf_counter()
    law = law_by_name(config.law)
    rho = survival_curve(law, max(KOLMOGOROV_M, config.horizon))
    kolmogorov = KOLMOGOROV_M * rho[KOLMOGOROV_M] * law.variance / 2
    cells, raw = [], []
    for n in config.n_grid:
        totals, _, _ = _terminal_runs(config, "survival_curve", n, 1, config.horizon, config.replicates, workers)
        alive = np.flatnonzero(totals > 0)
        cell = Cell(n)
        cell.estimates["brw_survival"] = proportion_estimate(int(alive.size), totals.size)
        cell.theory["rho_horizon"] = float(rho[config.horizon])
        cell.theory["kolmogorov_ratio_1e5"] = float(kolmogorov)
        cell.verdicts["brw_survival"] = _within(cell.estimates["brw_survival"], float(rho[config.horizon]))
        cells.append(cell)
        raw.append((-1, n, int(alive.size), "attempts", int(totals.size)))
        raw.extend((int(i), n, 1, "total", int(totals[i])) for i in alive)
    report = ExperimentReport(config, cells)
    report.verdicts["kolmogorov"] = Verdict(
        abs(kolmogorov - 1) < kol_tol, f"|m rho_m sigma^2/2 - 1| < {kol_tol} at m={KOLMOGOROV_M}"
    )
    if config.law == "geometric_half":
        report.verdicts["geometric_closed_form"] = Verdict(
            exact_geometric_check(KOLMOGOROV_M), f"rho_m == 1/(m+1) exactly for m <= {KOLMOGOROV_M}"
        )
    grid = _curve_grid(max(KOLMOGOROV_M, config.horizon))
    report.curves["survival_curve"] = (
        ("m", "rho_m", "kolmogorov_ratio"),
        [(m, float(rho[m]), float(m * rho[m] * law.variance / 2)) for m in grid],
    )
    report.events = {"runs": config.replicates * len(config.n_grid)}
    report.raw = raw
    report.wallclock_s = time.perf_counter() - start
    return report


RUNNERS = {
    "max_displacement": run_max_displacement,
    "profile": run_profile,
    "total_mass": run_total_mass,
    "survival_curve": run_survival_curve,
}


def run_experiment(config: ExperimentConfig, workers: int = 1, tolerances: dict | None = None) -> ExperimentReport:
    return RUNNERS[config.experiment](config, workers=workers, tolerances=tolerances)


# -- pilot calibration ---------------------------------------------------------

PILOT_SEED = 777001
PILOT_SURVIVORS = 4000
PILOT_N_SE = 5.0


def pilot_displacement_bands(
    alpha: float = 1.5,
    beta: float = 0.5,
    law: str = "geometric_half",
    n_grid=(50, 100, 200),
    survivors: int = PILOT_SURVIVORS,
    seed: int = PILOT_SEED,
    n_se: float = PILOT_N_SE,
    factors=(0.4, 2.5),
    workers: int = 1,
) -> list[dict]:
    """Calibrate median bands from an independent pilot run.

    Each band is the pilot median plus or minus the larger of ``n_se``
    bootstrap standard errors and two lattice steps, clipped to ``factors``
    times the theory constant.  The rightmost site has fixed parity, so the
    rescaled median moves in steps of ``2 / (sqrt(n) log n)`` and its bootstrap
    error can be zero.
    """
    config = ExperimentConfig(
        "max_displacement", beta=beta, law=law, alpha=alpha, replicates=survivors, master_seed=seed, n_grid=tuple(n_grid)
    )
    tol = {"version": 0, "max_displacement": {"cells": [], "default_band_factors": list(factors)}}
    report = run_max_displacement(config, workers=workers, tolerances=tol)
    theta = max_displacement_constant(alpha, beta)
    out = []
    for cell in report.cells:
        med = cell.estimates["median_scaled_rightmost"]
        step = 2.0 / (math.sqrt(cell.n) * math.log(cell.n))
        half = max(n_se * med.stderr, 2 * step)
        lo = max(med.value - half, factors[0] * theta)
        hi = min(med.value + half, factors[1] * theta)
        out.append(
            {
                "alpha": alpha,
                "beta": beta,
                "law": config.law,
                "n": cell.n,
                "band": [lo, hi],
                "pilot_median": med.value,
                "pilot_stderr": med.stderr,
                "pilot_survivors": med.count,
                "lattice_step": step,
            }
        )
    return out

