from fractions import Fraction

import numpy as np
import pytest

from brwlab.gw_core import (
    AGGREGATION_THRESHOLD,
    BUILTIN_LAWS,
    InsufficientSurvivors,
    PopulationOverflow,
    binary,
    conditional_mean_given_survival,
    custom,
    generation_pmf,
    geometric_half,
    gw_terminal_populations,
    law_by_name,
    offspring_total,
    one_child,
    poisson1,
    simulate_gw,
    survival_curve,
    survival_probability,
    yaglom_diagnostic,
)
from brwlab.stats import chi2_gof_pvalue, mean_estimate, proportion_estimate, variance_estimate

LAWS = [binary, geometric_half, poisson1]


@pytest.mark.parametrize("factory", LAWS)
def test_builtin_laws_are_critical(factory):
    law = factory()
    law.check()
    k = np.arange(len(law.pmf))
    assert abs(law.pmf @ k - 1.0) < 1e-12
    assert law.pmf @ (k - 1.0) ** 2 == pytest.approx(law.variance, abs=1e-10)
    assert law.pgf(1.0) == pytest.approx(1.0, abs=1e-15)


def test_variances():
    assert binary().variance == 1.0
    assert geometric_half().variance == 2.0
    assert poisson1().variance == 1.0


def test_law_aliases():
    assert law_by_name("geom").name == "geometric_half"
    assert law_by_name("binary").name == "binary"
    with pytest.raises(ValueError):
        law_by_name("cauchy")


def test_custom_law_validation():
    with pytest.raises(ValueError):
        custom([0.2, 0.2])  # does not sum to one
    with pytest.raises(ValueError):
        custom([0.5, 0.0, 0.0, 0.5])  # mean 1.5
    with pytest.raises(ValueError):
        custom([0.0, 1.0])  # degenerate without the fixture flag
    fixture = one_child()
    assert not fixture.critical_variance
    law = custom([0.25, 0.5, 0.25], name="lazy_binary")
    assert law.variance == pytest.approx(0.5)


def test_custom_law_exact_pgf():
    law = custom([0.25, 0.5, 0.25])
    assert survival_probability(law, 2, exact=True) == 1 - law.pgf(law.pgf(Fraction(0)))


def test_poisson_has_no_rational_pgf():
    with pytest.raises(TypeError):
        survival_probability(poisson1(), 3, exact=True)


def test_survival_small_cases():
    assert survival_probability(binary(), 0) == 1.0
    assert survival_probability(binary(), 1) == 0.5
    assert survival_probability(binary(), 1, exact=True) == Fraction(1, 2)


def test_geometric_closed_form_exact():
    law = geometric_half()
    s = Fraction(0)
    for m in range(1, 3001):
        s = law.pgf(s)
        assert 1 - s == Fraction(1, m + 1)
    rho = survival_curve(law, 10**5)
    m = np.arange(10**5 + 1)
    assert np.max(np.abs(rho * (m + 1) - 1)) < 1e-9


def test_kolmogorov_geometric_precision():
    law = geometric_half()
    m = 10**5
    assert abs(m * survival_probability(law, m) * law.variance / 2 - 1) < 1e-4


@pytest.mark.parametrize("factory", LAWS)
def test_kolmogorov_all_laws(factory):
    law = factory()
    rho = survival_curve(law, 10**5)
    assert np.all(np.diff(rho) < 0)
    assert abs(10**5 * rho[-1] * law.variance / 2 - 1) < 0.01


def test_conditional_mean_examples():
    assert conditional_mean_given_survival(binary(), 0) == 1.0
    assert conditional_mean_given_survival(geometric_half(), 99) == pytest.approx(100.0, rel=1e-12)
    assert conditional_mean_given_survival(binary(), 1) == 2.0


def test_zero_population_stays_zero(rng):
    snaps = simulate_gw(geometric_half(), 0, 10, rng)
    assert all(s.population == 0 for s in snaps)


def test_trajectory_stops_at_extinction(rng):
    for _ in range(50):
        snaps = simulate_gw(binary(), 1, 200, rng)
        pops = [s.population for s in snaps]
        assert pops[0] == 1
        if 0 in pops:
            assert pops.index(0) == len(pops) - 1


def test_mean_is_conserved(rng):
    z = gw_terminal_populations(geometric_half(), 1, 50, 100_000, rng)
    assert mean_estimate(z).within(1.0)


def test_variance_identity(rng):
    z = gw_terminal_populations(geometric_half(), 1, 50, 10**6, rng)
    assert variance_estimate(z).within(100.0)


@pytest.mark.parametrize("factory", LAWS)
def test_extinction_duality(factory, rng):
    law = factory()
    z = gw_terminal_populations(law, 1, 40, 100_000, rng)
    assert proportion_estimate(int(np.count_nonzero(z == 0)), z.size).within(1 - survival_probability(law, 40))


@pytest.mark.parametrize("factory", LAWS)
@pytest.mark.parametrize("m", [1, 4, 10])
def test_simulated_generation_law_matches_pgf(factory, m, rng):
    law = factory()
    reps = 100_000
    z = gw_terminal_populations(law, 1, m, reps, rng)
    exact = generation_pmf(law, m, 400)
    counts = np.bincount(z, minlength=exact.size)[: exact.size]
    assert counts.sum() >= reps - 5  # mass beyond size 400 is negligible
    freq = counts / reps
    tv = 0.5 * np.abs(freq - exact).sum()
    noise = 0.5 * np.sqrt(exact * (1 - exact) / reps).sum()
    assert tv < 3 * noise


@pytest.mark.parametrize("factory", LAWS + [lambda: custom([0.3, 0.45, 0.2, 0.05])])
@pytest.mark.parametrize("parents", [1, 10, AGGREGATION_THRESHOLD + 1, 100])
def test_offspring_total_law(factory, parents, rng):
    law = factory()
    draws = np.array([offspring_total(law.code, law.cdf, parents, rng) for _ in range(20_000)])
    exact = np.array([1.0])
    for _ in range(parents):
        exact = np.convolve(exact, law.pmf)
    top = min(exact.size, draws.max() + 200)
    observed = np.bincount(draws, minlength=top)[:top]
    assert chi2_gof_pvalue(observed, exact[:top]) > 1e-3


def test_overflow_is_signalled(rng):
    with pytest.raises(PopulationOverflow):
        for _ in range(200):
            gw_terminal_populations(geometric_half(), 1000, 500, 10, rng, cap=2000)


def test_yaglom_needs_survivors(rng):
    with pytest.raises(InsufficientSurvivors):
        yaglom_diagnostic(geometric_half(), 500, 1000, rng)


def test_yaglom_small_run(rng):
    res = yaglom_diagnostic(geometric_half(), 100, 100_000, rng)
    assert res.survivors > 600
    assert res.ks_distance < 0.08
    assert abs(res.conditional_mean / res.limit_mean - 1) < 0.1


def test_generation_pmf_sums_to_one():
    for name in BUILTIN_LAWS:
        law = law_by_name(name)
        assert generation_pmf(law, 5, 300).sum() == pytest.approx(1.0, abs=1e-10)
