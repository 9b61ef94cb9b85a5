"""Branching random walk on the nonnegative integers.

One generation: every particle is replaced by an iid number of children, and
every child takes one step of the biased reflected walk from its parent's
site.  Particles at a site are exchangeable, so a generation is simulated per
occupied site: draw the total number of children of the ``c`` particles at
``x`` and split it with one binomial between ``x-1`` and ``x+1`` (all to 1 when
``x = 0``).  This is exact in distribution and costs O(occupied sites).

Kernels work on dense count vectors indexed by site.  Drift keeps the
occupied range short, and the rightmost particle is the last nonzero entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .gw_core import (
    MIN_SURVIVORS,
    POPULATION_CAP,
    InsufficientSurvivors,
    OffspringLaw,
    PopulationOverflow,
    offspring_total,
)
from .rw_core import WalkParams

# Below this many children the binomial split is done child by child.
_SPLIT_THRESHOLD = 16


@dataclass(frozen=True)
class SiteConfiguration:
    """Particle counts per site, stored as sorted ``sites`` with positive ``counts``."""

    sites: np.ndarray
    counts: np.ndarray
    generation: int = 0
    total: int = field(init=False)

    def __post_init__(self):
        sites = np.asarray(self.sites, dtype=np.int64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if sites.shape != counts.shape or sites.ndim != 1:
            raise ValueError("sites and counts must be matching 1-D arrays")
        if np.any(sites < 0):
            raise ValueError("sites must be nonnegative")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        keep = counts > 0
        sites, counts = sites[keep], counts[keep]
        order = np.argsort(sites, kind="stable")
        sites, counts = sites[order], counts[order]
        if sites.size > 1 and np.any(np.diff(sites) == 0):
            raise ValueError("duplicate sites")
        sites.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "total", int(counts.sum()))

    @classmethod
    def from_mapping(cls, counts: dict[int, int], generation: int = 0) -> "SiteConfiguration":
        items = sorted(counts.items())
        return cls(
            np.array([k for k, _ in items], dtype=np.int64),
            np.array([v for _, v in items], dtype=np.int64),
            generation,
        )

    @classmethod
    def from_dense(cls, dense, generation: int = 0) -> "SiteConfiguration":
        dense = np.asarray(dense, dtype=np.int64)
        sites = np.flatnonzero(dense)
        return cls(sites, dense[sites], generation)

    @classmethod
    def at_origin(cls, count: int) -> "SiteConfiguration":
        return cls.from_mapping({0: count} if count > 0 else {})

    def is_empty(self) -> bool:
        return self.total == 0

    @property
    def rightmost(self) -> int | None:
        return int(self.sites[-1]) if self.sites.size else None

    def as_dict(self) -> dict[int, int]:
        return {int(s): int(c) for s, c in zip(self.sites, self.counts)}

    def to_dense(self, size: int | None = None) -> np.ndarray:
        hi = self.rightmost
        need = 0 if hi is None else hi + 1
        size = need if size is None else size
        if size < need:
            raise ValueError("dense size smaller than the occupied range")
        out = np.zeros(size, dtype=np.int64)
        out[self.sites] = self.counts
        return out

    def parity(self) -> int | None:
        """Common parity of all occupied sites, or None if empty or mixed."""
        if not self.sites.size:
            return None
        par = self.sites % 2
        return int(par[0]) if np.all(par == par[0]) else None

    def check(self) -> None:
        assert self.total == int(self.counts.sum())
        assert np.all(self.counts > 0)
        assert np.all(np.diff(self.sites) > 0)


@dataclass(frozen=True)
class BRWRunRecord:
    params: WalkParams
    law: OffspringLaw
    initial: SiteConfiguration
    horizon: int
    final: SiteConfiguration
    snapshots: dict[int, SiteConfiguration]

    @property
    def survived(self) -> bool:
        return not self.final.is_empty()

    @property
    def rightmost_at_horizon(self) -> int | None:
        return self.final.rightmost


# -- kernels -----------------------------------------------------------------


@njit(cache=True)
def _split(children, p_down, rng):
    if children < _SPLIT_THRESHOLD:
        down = 0
        for _ in range(children):
            if rng.random() <= p_down:
                down += 1
        return down
    return rng.binomial(children, p_down)


@njit(cache=True)
def _step_dense(cur, nxt, hi, p_down, code, cdf, rng):
    """Advance one generation from ``cur`` (zeroed on return) into ``nxt``."""
    total = 0
    for x in range(hi + 1):
        c = cur[x]
        if c == 0:
            continue
        cur[x] = 0
        kids = offspring_total(code, cdf, c, rng)
        if kids == 0:
            continue
        if x == 0:
            nxt[1] += kids
        else:
            down = _split(kids, p_down, rng)
            nxt[x - 1] += down
            nxt[x + 1] += kids - down
        total += kids
    new_hi = hi + 1
    while new_hi >= 0 and nxt[new_hi] == 0:
        new_hi -= 1
    return new_hi, total


@njit(cache=True)
def _rightmost(dense):
    hi = dense.size - 1
    while hi >= 0 and dense[hi] == 0:
        hi -= 1
    return hi


@njit(cache=True)
def _advance(cur, nxt, steps, p_down, code, cdf, cap, rng):
    """Run ``steps`` generations; returns (buffer holding the state, rightmost, total, overflow step)."""
    hi = _rightmost(cur)
    total = 0
    for x in range(hi + 1):
        total += cur[x]
    for k in range(steps):
        if hi < 0:
            break
        hi, total = _step_dense(cur, nxt, hi, p_down, code, cdf, rng)
        cur, nxt = nxt, cur
        if total > cap:
            return cur, hi, total, k + 1
    return cur, hi, total, -1


@njit(cache=True)
def _lattice_ks(dense, hi, total, scale, rate):
    """Sup distance between the mass-normalized profile and ``1 - exp(-rate a)``.

    A particle at site ``x`` represents the cell ending at ``(x+1)/scale``; for a
    parity-pure configuration the comparison is made at the right edges of
    the occupied parity's cells, otherwise at every site.
    """
    parity = -1
    pure = True
    for x in range(hi + 1):
        if dense[x] > 0:
            if parity < 0:
                parity = x % 2
            elif x % 2 != parity:
                pure = False
                break
    cum = 0
    worst = 0.0
    for x in range(hi + 1):
        cum += dense[x]
        if pure and x % 2 != parity:
            continue
        target = 1.0 - math.exp(-rate * (x + 1) / scale)
        gap = abs(cum / total - target)
        if gap > worst:
            worst = gap
    return worst


@njit(cache=True)
def _terminal_batch(init, horizon, replicates, p_down, code, cdf, cap, scale, rate, rng):
    """Final total, rightmost site and profile KS distance of independent runs."""
    init_hi = _rightmost(init)
    size = max(init_hi, 0) + horizon + 3
    cur = np.zeros(size, dtype=np.int64)
    nxt = np.zeros(size, dtype=np.int64)
    totals = np.zeros(replicates, dtype=np.int64)
    rightmost = np.full(replicates, -1, dtype=np.int64)
    ks = np.full(replicates, np.nan)
    init_total = 0
    for x in range(init_hi + 1):
        init_total += init[x]
    for r in range(replicates):
        for x in range(init_hi + 1):
            cur[x] = init[x]
        hi = init_hi
        total = init_total
        for k in range(horizon):
            if hi < 0:
                break
            hi, total = _step_dense(cur, nxt, hi, p_down, code, cdf, rng)
            cur, nxt = nxt, cur
            if total > cap:
                return totals, rightmost, ks, k + 1
        totals[r] = total
        rightmost[r] = hi
        if hi >= 0:
            if rate > 0.0:
                ks[r] = _lattice_ks(cur, hi, total, scale, rate)
            for x in range(hi + 1):
                cur[x] = 0
    return totals, rightmost, ks, -1


@njit(cache=True)
def _occupation_moments(start, m, replicates, p_down, code, cdf, cap, rng):
    size = start + m + 3
    cur = np.zeros(size, dtype=np.int64)
    nxt = np.zeros(size, dtype=np.int64)
    sums = np.zeros(size)
    sumsq = np.zeros(size)
    for r in range(replicates):
        cur[start] = 1
        hi = start
        total = 1
        for k in range(m):
            if hi < 0:
                break
            hi, total = _step_dense(cur, nxt, hi, p_down, code, cdf, rng)
            cur, nxt = nxt, cur
            if total > cap:
                return sums, sumsq, k + 1
        for x in range(hi + 1):
            c = cur[x]
            if c:
                sums[x] += c
                sumsq[x] += c * c
                cur[x] = 0
    return sums, sumsq, -1


# -- public API --------------------------------------------------------------


def _state_buffers(config: SiteConfiguration, steps: int) -> tuple[np.ndarray, np.ndarray]:
    hi = config.rightmost
    size = (0 if hi is None else hi) + steps + 3
    return config.to_dense(size), np.zeros(size, dtype=np.int64)


def _run(config, params, law, steps, rng, cap):
    cur, nxt = _state_buffers(config, steps)
    state, hi, _, overflow_at = _advance(cur, nxt, steps, params.p_down, law.code, law.cdf, cap, rng)
    if overflow_at >= 0:
        raise PopulationOverflow(cap, config.generation + int(overflow_at))
    return SiteConfiguration.from_dense(state[: hi + 1], config.generation + steps)


def step_configuration(
    config: SiteConfiguration,
    params: WalkParams,
    law: OffspringLaw,
    rng: np.random.Generator,
    cap: int = POPULATION_CAP,
) -> SiteConfiguration:
    """Branch every particle and move every child one step."""
    return _run(config, params, law, 1, rng, cap)


def run_to_horizon(
    initial: SiteConfiguration,
    params: WalkParams,
    law: OffspringLaw,
    horizon: int,
    rng: np.random.Generator,
    snapshot_times=(),
    cap: int = POPULATION_CAP,
) -> BRWRunRecord:
    """Evolve ``initial`` for ``horizon`` generations, keeping copies at ``snapshot_times``.

    Times are generations elapsed since ``initial``.  Extinction ends the
    dynamics early; later snapshots are then empty.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    times = sorted(set(int(t) for t in snapshot_times))
    if times and (times[0] < 0 or times[-1] > horizon):
        raise ValueError("snapshot times must lie in [0, horizon]")
    snapshots = {}
    config = initial
    elapsed = 0
    for t in times + [horizon]:
        if t > elapsed:
            config = _run(config, params, law, t - elapsed, rng, cap)
            elapsed = t
        if t in times:
            snapshots[t] = config
    return BRWRunRecord(params, law, initial, horizon, config, snapshots)


def occupation_measure(config: SiteConfiguration, scale: float, bins) -> tuple[np.ndarray, int]:
    """Particle counts with ``site/scale`` in each ``[b_i, b_{i+1})``, and the count beyond the last edge."""
    edges = np.asarray(bins, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2:
        raise ValueError("need at least two bin edges")
    if edges[0] != 0.0 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must start at 0 and increase strictly")
    if scale <= 0:
        raise ValueError("scale must be positive")
    pos = config.sites / scale
    idx = np.searchsorted(edges, pos, side="right") - 1
    masses = np.zeros(edges.size - 1, dtype=np.int64)
    inside = idx < edges.size - 1
    np.add.at(masses, idx[inside], config.counts[inside])
    overflow = int(config.counts[~inside].sum())
    return masses, overflow


def profile_ks_distance(config: SiteConfiguration, scale: float, beta: float) -> float:
    """KS distance of the rescaled, mass-normalized profile to ``1 - exp(-4 beta a)``.

    Evaluated on the parity lattice at cell right edges; see the kernel docstring.
    """
    if config.is_empty():
        raise ValueError("empty configuration has no profile")
    dense = config.to_dense()
    return float(_lattice_ks(dense, dense.size - 1, config.total, float(scale), 4.0 * beta))


def terminal_statistics(
    initial: SiteConfiguration,
    params: WalkParams,
    law: OffspringLaw,
    horizon: int,
    replicates: int,
    rng: np.random.Generator,
    profile_beta: float | None = None,
    cap: int = POPULATION_CAP,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run ``replicates`` independent copies from ``initial``.

    Returns per-replicate final totals, rightmost sites (-1 when extinct) and
    profile KS distances (NaN when extinct or when ``profile_beta`` is None).
    """
    if horizon < 0 or replicates < 0:
        raise ValueError("horizon and replicates must be nonnegative")
    rate = 0.0 if profile_beta is None else 4.0 * profile_beta
    init = initial.to_dense()
    if init.size == 0:
        init = np.zeros(1, dtype=np.int64)
    totals, rightmost, ks, overflow_at = _terminal_batch(
        init,
        int(horizon),
        int(replicates),
        params.p_down,
        law.code,
        law.cdf,
        int(cap),
        math.sqrt(params.n),
        rate,
        rng,
    )
    if overflow_at >= 0:
        raise PopulationOverflow(cap, int(overflow_at))
    return totals, rightmost, ks


def mean_occupation(
    params: WalkParams,
    law: OffspringLaw,
    start: int,
    m: int,
    replicates: int,
    rng: np.random.Generator,
    cap: int = POPULATION_CAP,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-site sum and sum of squares of ``X_m(y)`` over single-ancestor runs from ``start``."""
    if start < 0 or m < 0 or replicates < 1:
        raise ValueError("need start, m >= 0 and replicates >= 1")
    sums, sumsq, overflow_at = _occupation_moments(
        int(start), int(m), int(replicates), params.p_down, law.code, law.cdf, int(cap), rng
    )
    if overflow_at >= 0:
        raise PopulationOverflow(cap, int(overflow_at))
    return sums, sumsq


def horizon_for(n: int, alpha: float, t: float = 1.0) -> int:
    """``[n^alpha t]``, the integer part."""
    return int(math.floor(n**alpha * t + 1e-9))


@dataclass(frozen=True)
class ConditionedRightmost:
    """Rightmost sites of the runs alive at ``horizon`` among ``budget`` attempts."""

    values: np.ndarray
    budget: int
    horizon: int

    @property
    def survivors(self) -> int:
        return int(self.values.size)


def sample_conditioned_rightmost(
    params: WalkParams,
    law: OffspringLaw,
    alpha: float,
    budget: int,
    rng: np.random.Generator,
    min_survivors: int = MIN_SURVIVORS,
) -> ConditionedRightmost:
    """Rejection sampler for the rightmost site at ``[n^alpha]`` given survival.

    Runs ``budget`` single-ancestor walks from the origin and keeps those still
    alive at the horizon.
    """
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    if budget < 1:
        raise ValueError("budget must be positive")
    horizon = horizon_for(params.n, alpha)
    _, rightmost, _ = terminal_statistics(SiteConfiguration.at_origin(1), params, law, horizon, budget, rng)
    values = rightmost[rightmost >= 0]
    if values.size < min_survivors:
        raise InsufficientSurvivors(int(values.size), min_survivors, f"n={params.n}, budget={budget}")
    return ConditionedRightmost(values, int(budget), horizon)
