"""Fast invariant checks: couplings, spectral-vs-DP agreement, pgf identities."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .brw_engine import SiteConfiguration, step_configuration
from .exact_probs import kac_transition_table, rw_dp_transition_rows
from .gw_core import BUILTIN_LAWS, law_by_name, survival_curve
from .rng import stream
from .rw_core import WalkParams, coupled_biased_vs_reflected, coupled_monotone_pair
from .scaling_limits import ExponentialProfile, profile_mass


def oracle_max_difference(params: WalkParams, start: int, m_max: int) -> float:
    """Largest ``|spectral - DP|`` over ``m = 1..m_max`` and sites ``k >= 1``."""
    main, rem = kac_transition_table(params, start, m_max)
    dp = rw_dp_transition_rows(params, start, m_max)
    width = main.shape[1]
    diff = np.abs(main[:, 1:] + rem[:, 1:] - dp[1:, 1:width])
    return float(diff.max())


def coupling_violations(params: WalkParams, start: int, m: int, replicates: int, rng) -> tuple[int, int]:
    """Counts of dominance and monotone-pair violations over ``replicates`` coupled runs."""
    dom = mono = 0
    for _ in range(replicates):
        low, high = coupled_biased_vs_reflected(params, start, m, rng)
        dom += int(np.any(low.positions > high.positions))
        a, b = coupled_monotone_pair(params, start, start + 2, m, rng)
        gap = b.positions - a.positions
        merged = np.flatnonzero(gap == 0)
        mono += int(np.any(gap < 0) or (merged.size and np.any(gap[merged[0]:] != 0)))
    return dom, mono


def run_validation(seed: int) -> dict:
    from .experiments import Verdict

    out = {}
    worst = max(
        oracle_max_difference(WalkParams(beta, 16), start, 40)
        for beta in (0.0, 0.5, 1.0)
        for start in (0, 3)
    )
    out["spectral_vs_dp"] = Verdict(worst < 1e-10, f"max |diff| = {worst:.2e} < 1e-10")

    rng = stream(seed, "validate", 0)
    dom, mono = coupling_violations(WalkParams(0.5, 100), 3, 200, 500, rng)
    out["coupling_dominance"] = Verdict(dom == 0, "no path of the biased walk above the simple walk")
    out["coupling_monotone"] = Verdict(mono == 0, "paired walks never cross and stay merged")

    s = Fraction(0)
    pgf = law_by_name("geometric_half").pgf
    exact = True
    for m in range(1, 2001):
        s = pgf(s)
        exact &= 1 - s == Fraction(1, m + 1)
    out["geometric_closed_form"] = Verdict(exact, "rho_m == 1/(m+1) for m <= 2000")
    ratios = []
    for name, factory in BUILTIN_LAWS.items():
        law = factory()
        law.check()
        ratios.append(abs(10**4 * survival_curve(law, 10**4)[-1] * law.variance / 2 - 1))
    out["kolmogorov"] = Verdict(max(ratios) < 0.01, "|m rho_m sigma^2/2 - 1| < 0.01 at m=1e4")

    one = law_by_name("geometric_half")
    moved = step_configuration(SiteConfiguration.at_origin(50), WalkParams(0.5, 100), one, rng)
    out["reflection"] = Verdict(set(moved.as_dict()) <= {1}, "children of origin particles land on 1")

    prof = ExponentialProfile(0.5)
    add = abs(profile_mass(prof, 0, 1) - profile_mass(prof, 0, 0.3) - profile_mass(prof, 0.3, 1))
    out["profile_mass"] = Verdict(profile_mass(prof, 0, float("inf")) == 1.0 and add < 1e-15, "normalized and additive")
    return out
