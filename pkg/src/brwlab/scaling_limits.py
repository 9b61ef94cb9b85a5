"""Limit objects for the rescaled branching random walk.

The spatial shape is the exponential law with rate ``4 beta`` and the total
mass is the Feller diffusion ``dY = sigma sqrt(Y) dW``.  Two samplers are
provided for ``Y_t``: an Euler-Maruyama integrator, and an exact draw from the
transition law, which is a Poisson(``2 y0 / (sigma^2 t)``) number of
exponentials with mean ``sigma^2 t / 2``.  The second follows from the Laplace
transform ``exp(-y0 lam / (1 + sigma^2 lam t / 2))`` and is cross-checked
against the first in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass(frozen=True)
class ExponentialProfile:
    """Exponential law on ``[0, inf)`` with rate ``4 beta``."""

    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError("beta must be positive")

    @property
    def rate(self) -> float:
        return 4.0 * self.beta

    def cdf(self, a):
        return -np.expm1(-self.rate * np.maximum(np.asarray(a, dtype=np.float64), 0.0))

    def density(self, a):
        a = np.asarray(a, dtype=np.float64)
        return np.where(a >= 0, self.rate * np.exp(-self.rate * a), 0.0)


def profile_mass(profile: ExponentialProfile, a: float, b: float) -> float:
    """``exp(-4 beta a) - exp(-4 beta b)``, the mass of ``(a, b)``."""
    if not (0 <= a < b):
        raise ValueError(f"need 0 <= a < b, got a={a}, b={b}")
    ea = math.exp(-profile.rate * a)
    eb = 0.0 if math.isinf(b) else math.exp(-profile.rate * b)
    return ea - eb


def limit_measure_mass(y_t: float, profile: ExponentialProfile, a: float, b: float) -> float:
    """Mass ``y_t * profile_mass(a, b)`` of the product-form limit."""
    if y_t < 0:
        raise ValueError("mass must be nonnegative")
    return y_t * profile_mass(profile, a, b)


@dataclass(frozen=True)
class FellerState:
    t: float
    mass: float
    sigma2: float
    y0: float


def _check_feller(y0: float, sigma2: float) -> None:
    if not (y0 >= 0 and math.isfinite(y0)):
        raise ValueError("y0 must be a nonnegative real")
    if not (sigma2 > 0 and math.isfinite(sigma2)):
        raise ValueError("sigma2 must be positive")


def _n_steps(t_end: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    # Round so that t_end = k dt up to float noise lands on k steps.
    return int(math.ceil(t_end / dt - 1e-9))


@njit(cache=True)
def _euler_path(y0, sigma, dt, steps, rng):
    out = np.empty(steps + 1)
    out[0] = y0
    y = y0
    sq = math.sqrt(dt)
    for i in range(steps):
        if y > 0.0:
            y = y + sigma * math.sqrt(y) * sq * rng.standard_normal()
            if y < 0.0:
                y = 0.0
        out[i + 1] = y
    return out


@njit(cache=True)
def _euler_batch(y0, sigma, dt, record_steps, size, rng):
    """Terminal values at each of ``record_steps`` (sorted) for ``size`` paths."""
    out = np.zeros((record_steps.size, size))
    sq = math.sqrt(dt)
    last = record_steps[record_steps.size - 1]
    for r in range(size):
        y = y0
        j = 0
        for i in range(last + 1):
            while j < record_steps.size and record_steps[j] == i:
                out[j, r] = y
                j += 1
            if i == last or y == 0.0:
                break
            y = y + sigma * math.sqrt(y) * sq * rng.standard_normal()
            if y < 0.0:
                y = 0.0
        # Absorbed paths keep 0 at every later record time (already zero).
    return out


def feller_euler_path(
    y0: float, sigma2: float, t_end: float, dt: float, rng: np.random.Generator
) -> list[FellerState]:
    """Euler-Maruyama path on the grid ``0, dt, 2dt, ...`` up to ``t_end``; clamps at 0 and absorbs."""
    _check_feller(y0, sigma2)
    steps = _n_steps(t_end, dt)
    ys = _euler_path(float(y0), math.sqrt(sigma2), float(dt), steps, rng)
    return [FellerState(min(i * dt, t_end), float(y), sigma2, y0) for i, y in enumerate(ys)]


def feller_euler_marginals(
    y0: float, sigma2: float, times, dt: float, size: int, rng: np.random.Generator
) -> dict[float, np.ndarray]:
    """Euler samples of ``Y_t`` at each requested time, taken from the same paths."""
    _check_feller(y0, sigma2)
    times = sorted(set(float(t) for t in times))
    if not times or times[0] <= 0:
        raise ValueError("times must be positive")
    steps = np.array([_n_steps(t, dt) for t in times], dtype=np.int64)
    out = _euler_batch(float(y0), math.sqrt(sigma2), float(dt), steps, int(size), rng)
    return {t: out[i] for i, t in enumerate(times)}


def feller_exact_marginal(
    y0: float, sigma2: float, t: float, rng: np.random.Generator, size: int | None = None
):
    """Exact draw(s) of ``Y_t`` given ``Y_0 = y0``."""
    _check_feller(y0, sigma2)
    if not t > 0:
        raise ValueError("t must be positive")
    scale = sigma2 * t / 2.0
    count = rng.poisson(y0 / scale, size=size)
    # A sum of N iid exponentials with common scale is Gamma(N, scale); shape 0 gives 0.
    return rng.gamma(np.maximum(count, 0), scale, size=size) * (count > 0)


def extinction_probability(y0: float, sigma2: float, t: float) -> float:
    """``P(Y_t = 0) = exp(-2 y0 / (sigma^2 t))``."""
    _check_feller(y0, sigma2)
    if not t > 0:
        raise ValueError("t must be positive")
    return math.exp(-2.0 * y0 / (sigma2 * t))
