"""Single-walker models on the nonnegative integers.

``S`` is the walk that steps down with probability ``1/2 + beta/sqrt(n)`` and
up otherwise, and always steps from 0 to 1.  With ``beta = 0`` it is the
reflected simple walk.  The unreflected simple walk on the integers is only
needed for the maximal-deviation tail estimate.

The two couplings are pathwise constructions: the biased walk driven by the
same uniform as the reflected simple walk stays below it, and two biased walks
started an even distance apart never cross and merge once they meet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .stats import MCEstimate, proportion_estimate


@dataclass(frozen=True)
class WalkParams:
    """Drift strength ``beta`` and scale ``n`` of the kernel."""

    beta: float
    n: int

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 1):
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        beta = float(self.beta)
        if not math.isfinite(beta) or beta < 0:
            raise ValueError(f"beta must be a nonnegative real, got {self.beta!r}")
        if beta >= math.sqrt(self.n) / 2:
            raise ValueError(f"beta={beta} must be below sqrt(n)/2={math.sqrt(self.n) / 2}")
        object.__setattr__(self, "beta", beta)

    @property
    def drift(self) -> float:
        """``beta / sqrt(n)``: half the gap between the down and up probabilities."""
        return self.beta / math.sqrt(self.n)

    @property
    def p_down(self) -> float:
        return 0.5 + self.drift

    @property
    def p_up(self) -> float:
        # Always derived from p_down so the pair sums to one bit-exactly.
        return 1.0 - self.p_down


@dataclass(frozen=True)
class WalkPath:
    """Positions ``S_0 = start, S_1, ..., S_m``."""

    start: int
    positions: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.positions) - 1

    @property
    def final(self) -> int:
        return int(self.positions[-1])

    def check(self, reflected: bool = True) -> None:
        """Raise ``AssertionError`` if the path breaks a walk invariant."""
        pos = self.positions
        assert pos[0] == self.start, "path must begin at start"
        jumps = np.diff(pos)
        assert np.all(np.abs(jumps) == 1), "steps must be +-1"
        k = np.arange(len(pos))
        assert np.all((pos - self.start - k) % 2 == 0), "parity of S_k must match start + k"
        if reflected:
            assert np.all(pos >= 0), "reflected path went negative"
            assert np.all(pos[1:][pos[:-1] == 0] == 1), "0 must be followed by 1"


def step_distribution(params: WalkParams, x: int) -> dict[int, float]:
    """One-step law from site ``x``: ``{x-1: p_down, x+1: p_up}``, or ``{1: 1.0}`` at 0."""
    if x < 0:
        raise ValueError("site must be nonnegative")
    if x == 0:
        return {1: 1.0}
    return {x - 1: params.p_down, x + 1: params.p_up}


@njit(cache=True)
def _walk_kernel(start, m, p_down, rng):
    pos = np.empty(m + 1, dtype=np.int64)
    pos[0] = start
    x = start
    for i in range(1, m + 1):
        if x == 0:
            x = 1
        elif rng.random() <= p_down:
            x -= 1
        else:
            x += 1
        pos[i] = x
    return pos


@njit(cache=True)
def _endpoints_kernel(start, m, p_down, replicates, rng):
    out = np.empty(replicates, dtype=np.int64)
    for r in range(replicates):
        x = start
        for _ in range(m):
            if x == 0:
                x = 1
            elif rng.random() <= p_down:
                x -= 1
            else:
                x += 1
        out[r] = x
    return out


@njit(cache=True)
def _dominance_kernel(start, m, p_down, rng):
    low = np.empty(m + 1, dtype=np.int64)
    high = np.empty(m + 1, dtype=np.int64)
    low[0] = start
    high[0] = start
    s = start
    t = start
    for i in range(1, m + 1):
        u = rng.random()
        # Ties go to the down move.
        if s == 0:
            s = 1
        elif u <= p_down:
            s -= 1
        else:
            s += 1
        if t == 0:
            t = 1
        elif u <= 0.5:
            t -= 1
        else:
            t += 1
        low[i] = s
        high[i] = t
    return low, high


@njit(cache=True)
def _monotone_kernel(start_low, start_high, m, p_down, rng):
    low = np.empty(m + 1, dtype=np.int64)
    high = np.empty(m + 1, dtype=np.int64)
    low[0] = start_low
    high[0] = start_high
    a = start_low
    b = start_high
    for i in range(1, m + 1):
        if a > 0:
            jump = -1 if rng.random() <= p_down else 1
            a += jump
            b += jump
        else:
            a = 1
            # Upper walker draws a fresh step from its own position.
            if b == 0:
                b = 1
            elif rng.random() <= p_down:
                b -= 1
            else:
                b += 1
        low[i] = a
        high[i] = b
    return low, high


@njit(cache=True)
def _max_abs_kernel(m, k, samples, rng):
    hits = 0
    for _ in range(samples):
        x = 0
        for _ in range(m):
            x += 1 if rng.random() < 0.5 else -1
            if x >= k or x <= -k:
                hits += 1
                break
    return hits


def _check_start(start: int) -> int:
    if start < 0:
        raise ValueError("start must be nonnegative")
    return int(start)


def simulate_walk(params: WalkParams, start: int, m: int, rng: np.random.Generator) -> WalkPath:
    """Sample ``m`` steps of the biased reflected walk from ``start``."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    start = _check_start(start)
    return WalkPath(start, _walk_kernel(start, int(m), params.p_down, rng))


def walk_endpoints(
    params: WalkParams, start: int, m: int, replicates: int, rng: np.random.Generator
) -> np.ndarray:
    """Final positions ``S_m`` of ``replicates`` independent walks."""
    if m < 0 or replicates < 0:
        raise ValueError("m and replicates must be nonnegative")
    return _endpoints_kernel(_check_start(start), int(m), params.p_down, int(replicates), rng)


def coupled_biased_vs_reflected(
    params: WalkParams, start: int, m: int, rng: np.random.Generator
) -> tuple[WalkPath, WalkPath]:
    """Biased walk and reflected simple walk driven by one shared uniform per step.

    The biased walk steps down when ``U <= 1/2 + beta/sqrt(n)``, the simple walk
    when ``U <= 1/2``; both are forced up from 0.  The first path never exceeds
    the second.
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    start = _check_start(start)
    low, high = _dominance_kernel(start, int(m), params.p_down, rng)
    return WalkPath(start, low), WalkPath(start, high)


def coupled_monotone_pair(
    params: WalkParams, start_low: int, start_high: int, m: int, rng: np.random.Generator
) -> tuple[WalkPath, WalkPath]:
    """Two biased walks from starts of equal parity that never cross.

    The upper walk copies the lower walk's jump while the lower walk is away
    from 0; when the lower walk sits at 0 the upper walk takes an independent
    step from its own position.
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    start_low = _check_start(start_low)
    start_high = _check_start(start_high)
    if start_low > start_high:
        raise ValueError("start_low must not exceed start_high")
    if (start_high - start_low) % 2:
        raise ValueError("starts must have equal parity")
    low, high = _monotone_kernel(start_low, start_high, int(m), params.p_down, rng)
    return WalkPath(start_low, low), WalkPath(start_high, high)


def max_abs_simple_walk_tail(m: int, k: int, samples: int, rng: np.random.Generator) -> MCEstimate:
    """Estimate ``P(max_{i<=m} |S_i| >= k)`` for the simple walk on the integers from 0."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if k < 1:
        raise ValueError("k must be at least 1")
    if samples < 1:
        raise ValueError("samples must be positive")
    if k > m:
        return MCEstimate(0.0, 0.0, int(samples))
    hits = _max_abs_kernel(int(m), int(k), int(samples), rng)
    return proportion_estimate(int(hits), int(samples))
