"""Critical Galton-Watson machinery.

Offspring laws carry three views of the same distribution: a pmf table for
sampling, a pgf for composition, and a numerically stable survival map
``rho -> 1 - f(1 - rho)`` so that ``rho_m = 1 - f^{(m)}(0)`` can be iterated
without cancellation when ``rho_m`` is tiny.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from numba import njit

from .stats import ks_exponential, mean_estimate

# Offspring sampler codes understood by the numba kernels.
LAW_BINARY = 0
LAW_GEOMETRIC = 1
LAW_POISSON = 2
LAW_TABLE = 3

POPULATION_CAP = 2**53
# Offspring totals of more than this many parents use the law's exact
# aggregate sampler; smaller groups are sampled parent by parent.
AGGREGATION_THRESHOLD = 16
MIN_SURVIVORS = 200


class PopulationOverflow(RuntimeError):
    """Population exceeded the configured ceiling."""

    def __init__(self, cap: int, generation: int | None = None):
        where = f" at generation {generation}" if generation is not None else ""
        super().__init__(f"population exceeded cap {cap}{where}")
        self.cap = cap
        self.generation = generation


class InsufficientSurvivors(RuntimeError):
    """Too few replicates survived for a conditional statistic."""

    def __init__(self, survivors: int, required: int, context: str = ""):
        msg = f"only {survivors} surviving replicates, need {required}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)
        self.survivors = survivors
        self.required = required
        self.context = context


@dataclass(frozen=True)
class OffspringLaw:
    """Mean-one offspring distribution with finite variance."""

    name: str
    pmf: np.ndarray
    mean: float
    variance: float
    pgf: Callable = field(repr=False, compare=False)
    survival_map: Callable[[float], float] = field(repr=False, compare=False)
    code: int = LAW_TABLE
    critical_variance: bool = True

    @property
    def sigma2(self) -> float:
        return self.variance

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.pmf)
        c[-1] = 1.0
        return c

    def check(self) -> None:
        if abs(self.mean - 1.0) > 1e-12:
            raise ValueError(f"{self.name}: mean {self.mean} is not 1")
        if self.critical_variance and not (math.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"{self.name}: variance must be finite and positive")
        if abs(self.pgf(1.0) - 1.0) > 1e-12:
            raise ValueError(f"{self.name}: pgf(1) != 1")
        k = np.arange(len(self.pmf))
        for s in (0.0, 0.5, 1.0):
            series = float(np.sum(self.pmf * s**k))
            if abs(series - self.pgf(s)) > 1e-10:
                raise ValueError(f"{self.name}: pgf({s}) disagrees with the pmf")


def _table_survival_map(pmf: np.ndarray) -> Callable[[float], float]:
    ks = np.arange(len(pmf), dtype=np.float64)

    def g(rho: float) -> float:
        # 1 - (1-rho)^k computed as -expm1(k log1p(-rho)).
        return float(np.sum(pmf * -np.expm1(ks * math.log1p(-rho)))) if rho < 1.0 else float(1.0 - pmf[0])

    return g


def _table_pgf(pmf: np.ndarray) -> Callable:
    coeffs = [Fraction(float(x)) for x in pmf]

    def f(s):
        if isinstance(s, Fraction):
            acc = Fraction(0)
            for c in reversed(coeffs):
                acc = acc * s + c
            return acc
        return float(np.polynomial.polynomial.polyval(s, pmf))

    return f


def binary() -> OffspringLaw:
    """0 or 2 offspring with probability 1/2 each (variance 1)."""
    pmf = np.array([0.5, 0.0, 0.5])
    law = OffspringLaw(
        "binary",
        pmf,
        1.0,
        1.0,
        pgf=lambda s: (1 + s * s) / 2,
        survival_map=lambda r: r - 0.5 * r * r,
        code=LAW_BINARY,
    )
    law.check()
    return law


def _truncated_pmf(logpmf: Callable[[np.ndarray], np.ndarray], tail_tol: float = 1e-18) -> np.ndarray:
    k = 1
    while True:
        k *= 2
        p = np.exp(logpmf(np.arange(k)))
        if p[-1] < tail_tol and 1.0 - p.sum() < tail_tol * 10:
            break
    return np.trim_zeros(p, "b")


def geometric_half() -> OffspringLaw:
    """``P(k) = 2^{-(k+1)}``, pgf ``1/(2-s)`` (variance 2); ``rho_m = 1/(m+1)``."""
    pmf = _truncated_pmf(lambda k: -(k + 1) * math.log(2.0))
    law = OffspringLaw(
        "geometric_half",
        pmf,
        1.0,
        2.0,
        pgf=lambda s: 1 / (2 - s),
        survival_map=lambda r: r / (1 + r),
        code=LAW_GEOMETRIC,
    )
    law.check()
    return law


def poisson1() -> OffspringLaw:
    """Poisson with mean 1 (variance 1), pgf ``exp(s-1)``."""
    from scipy.special import gammaln

    pmf = _truncated_pmf(lambda k: -1.0 - gammaln(k + 1.0))

    def pgf(s):
        if isinstance(s, Fraction):
            raise TypeError("poisson1 has no rational pgf")
        return math.exp(s - 1.0)

    law = OffspringLaw(
        "poisson1",
        pmf,
        1.0,
        1.0,
        pgf=pgf,
        survival_map=lambda r: -math.expm1(-r),
        code=LAW_POISSON,
    )
    law.check()
    return law


def custom(pmf, name: str = "custom", allow_degenerate: bool = False) -> OffspringLaw:
    """Law given by a finite pmf over ``0..len(pmf)-1``; must have mean 1.

    ``allow_degenerate`` admits the zero-variance law (exactly one child) as a
    test fixture; it is flagged with ``critical_variance=False``.
    """
    p = np.asarray(pmf, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("pmf must be a nonnegative vector summing to 1")
    k = np.arange(p.size)
    mean = float(p @ k)
    var = float(p @ (k - mean) ** 2)
    degenerate = var == 0.0
    if degenerate and not allow_degenerate:
        raise ValueError("zero-variance offspring law is only allowed as a fixture")
    law = OffspringLaw(
        name,
        p,
        mean,
        var,
        pgf=_table_pgf(p),
        survival_map=_table_survival_map(p),
        code=LAW_TABLE,
        critical_variance=not degenerate,
    )
    law.check()
    return law


def one_child() -> OffspringLaw:
    """Every particle has exactly one child.  Test fixture, not a critical law."""
    return custom([0.0, 1.0], name="one_child", allow_degenerate=True)


BUILTIN_LAWS = {"binary": binary, "geometric_half": geometric_half, "poisson1": poisson1}
LAW_ALIASES = {"binary": "binary", "geom": "geometric_half", "geometric_half": "geometric_half", "poisson1": "poisson1"}


def law_by_name(name: str) -> OffspringLaw:
    try:
        return BUILTIN_LAWS[LAW_ALIASES[name]]()
    except KeyError:
        raise ValueError(f"unknown offspring law {name!r}; choose from {sorted(LAW_ALIASES)}") from None


# -- exact survival ----------------------------------------------------------


def survival_curve(law: OffspringLaw, m_max: int) -> np.ndarray:
    """``rho_0..rho_{m_max}`` by iterating the survival map from ``rho_0 = 1``."""
    if m_max < 0:
        raise ValueError("m_max must be nonnegative")
    out = np.empty(m_max + 1)
    rho = 1.0
    g = law.survival_map
    out[0] = rho
    for m in range(1, m_max + 1):
        rho = g(rho)
        out[m] = rho
    return out


def survival_probability(law: OffspringLaw, m: int, exact: bool = False):
    """``rho_m = P(Z_m > 0 | Z_0 = 1) = 1 - f^{(m)}(0)``.

    With ``exact=True`` the pgf is iterated in rational arithmetic and a
    :class:`~fractions.Fraction` is returned; only laws whose pgf is rational
    support this, and it is only practical when the iterates stay small (as
    for ``geometric_half``).
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    if exact:
        s = Fraction(0)
        for _ in range(m):
            s = law.pgf(s)
        return 1 - s
    return float(survival_curve(law, m)[-1])


def conditional_mean_given_survival(law: OffspringLaw, m: int) -> float:
    """``E(Z_m | Z_m > 0) = 1/rho_m`` exactly, since ``E Z_m = 1``."""
    return 1.0 / survival_probability(law, m)


def generation_pmf(law: OffspringLaw, m: int, max_size: int) -> np.ndarray:
    """Law of ``Z_m`` (``Z_0 = 1``) on ``0..max_size`` by power-series composition.

    ``f_{j+1} = f_j(f)`` truncated at degree ``max_size``; mass above the
    truncation is dropped, so the result may sum to slightly less than one.
    """
    if m < 0 or max_size < 1:
        raise ValueError("need m >= 0 and max_size >= 1")
    base = np.zeros(max_size + 1)
    top = min(len(law.pmf), max_size + 1)
    base[:top] = law.pmf[:top]
    current = np.zeros(max_size + 1)
    current[1] = 1.0
    for _ in range(m):
        # current(base(s)) by Horner's rule on truncated power series.
        acc = np.zeros(max_size + 1)
        for c in current[::-1]:
            acc = np.convolve(acc, base)[: max_size + 1]
            acc[0] += c
        current = acc
    return current


# -- simulation --------------------------------------------------------------


@njit(cache=True)
def offspring_total(code, cdf, parents, rng):
    """Total number of children of ``parents`` iid parents."""
    if parents <= 0:
        return 0
    if parents > AGGREGATION_THRESHOLD:
        if code == LAW_BINARY:
            return 2 * rng.binomial(parents, 0.5)
        if code == LAW_GEOMETRIC:
            return rng.negative_binomial(parents, 0.5)
        if code == LAW_POISSON:
            return rng.poisson(float(parents))
    total = 0
    for _ in range(parents):
        if code == LAW_BINARY:
            if rng.random() < 0.5:
                total += 2
        elif code == LAW_GEOMETRIC:
            total += rng.geometric(0.5) - 1
        elif code == LAW_POISSON:
            total += rng.poisson(1.0)
        else:
            u = rng.random()
            j = 0
            while j < cdf.size - 1 and u >= cdf[j]:
                j += 1
            total += j
    return total


@njit(cache=True)
def _gw_path(code, cdf, z0, horizon, cap, rng):
    out = np.zeros(horizon + 1, dtype=np.int64)
    out[0] = z0
    z = z0
    for k in range(1, horizon + 1):
        if z == 0:
            break
        z = offspring_total(code, cdf, z, rng)
        if z > cap:
            return out, k
        out[k] = z
    return out, -1


@njit(cache=True)
def _gw_terminal(code, cdf, z0, m, replicates, cap, rng):
    out = np.zeros(replicates, dtype=np.int64)
    for r in range(replicates):
        z = z0
        for k in range(m):
            if z == 0:
                break
            z = offspring_total(code, cdf, z, rng)
            if z > cap:
                return out, k + 1
        out[r] = z
    return out, -1


@dataclass(frozen=True)
class GWSnapshot:
    generation: int
    population: int


def simulate_gw(
    law: OffspringLaw, z0: int, horizon: int, rng: np.random.Generator, cap: int = POPULATION_CAP
) -> list[GWSnapshot]:
    """One Galton-Watson trajectory ``Z_0..Z_horizon``, stopping early at extinction."""
    if horizon < 0 or z0 < 0:
        raise ValueError("z0 and horizon must be nonnegative")
    path, overflow_at = _gw_path(law.code, law.cdf, int(z0), int(horizon), int(cap), rng)
    if overflow_at >= 0:
        raise PopulationOverflow(cap, int(overflow_at))
    snaps = [GWSnapshot(0, int(z0))]
    for k in range(1, horizon + 1):
        snaps.append(GWSnapshot(k, int(path[k])))
        if path[k] == 0:
            break
    return snaps


def gw_terminal_populations(
    law: OffspringLaw, z0: int, m: int, replicates: int, rng: np.random.Generator, cap: int = POPULATION_CAP
) -> np.ndarray:
    """``Z_m`` for ``replicates`` independent processes started from ``z0``."""
    if m < 0 or z0 < 0 or replicates < 0:
        raise ValueError("z0, m and replicates must be nonnegative")
    out, overflow_at = _gw_terminal(law.code, law.cdf, int(z0), int(m), int(replicates), int(cap), rng)
    if overflow_at >= 0:
        raise PopulationOverflow(cap, int(overflow_at))
    return out


@dataclass(frozen=True)
class YaglomResult:
    ks_distance: float
    survivors: int
    replicates: int
    conditional_mean: float
    conditional_mean_stderr: float
    limit_mean: float


def yaglom_diagnostic(
    law: OffspringLaw,
    m: int,
    replicates: int,
    rng: np.random.Generator,
    min_survivors: int = MIN_SURVIVORS,
) -> YaglomResult:
    """Compare ``Z_m/m`` given survival with its exponential limit of mean ``sigma^2/2``.

    Raises :class:`InsufficientSurvivors` when fewer than ``min_survivors``
    replicates are alive at generation ``m``.
    """
    if m < 1 or replicates < 1:
        raise ValueError("need m >= 1 and replicates >= 1")
    z = gw_terminal_populations(law, 1, m, replicates, rng)
    alive = z[z > 0]
    if alive.size < min_survivors:
        raise InsufficientSurvivors(int(alive.size), min_survivors, f"Yaglom m={m}")
    scaled = alive / m
    cmean = mean_estimate(alive)
    limit = law.variance / 2
    return YaglomResult(
        ks_distance=ks_exponential(scaled, limit),
        survivors=int(alive.size),
        replicates=int(replicates),
        conditional_mean=cmean.value,
        conditional_mean_stderr=cmean.stderr,
        limit_mean=limit * m,
    )
