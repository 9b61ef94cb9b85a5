"""Exact and semi-analytic m-step transition probabilities of the biased reflected walk.

Three routes to ``P(S_m = k | S_0 = s)``:

* :func:`rw_dp_transition_prob` iterates the kernel forward on a dense vector.
  It is the oracle for everything else.
* :func:`kac_transition_prob` evaluates the spectral representation: a
  geometric main term (the periodic stationary law) plus an oscillatory
  integral over the continuous spectrum, computed by composite Simpson with
  dyadic refinement.
* :func:`tail_probability` sums either of them over ``k >= threshold``; the
  fast path uses the closed-form main-term tail plus a rigorous envelope on
  the summed remainder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .rw_core import WalkParams


class QuadratureNotConverged(RuntimeError):
    """Dyadic refinement hit its panel cap before meeting the tolerance."""


@dataclass(frozen=True)
class TransitionRow:
    """Distribution of ``S_m`` given ``S_0 = start``.

    ``probs[k]`` is the probability of site ``k`` for ``k <= len(probs) - 1``.
    When the forward iteration was truncated at a maximal site, ``leaked`` is
    the mass that crossed it; every entry is then a lower bound and the row
    sums to ``1 - leaked``.
    """

    params: WalkParams
    start: int
    m: int
    probs: np.ndarray
    leaked: float = 0.0

    def __getitem__(self, k: int) -> float:
        if 0 <= k < len(self.probs):
            return float(self.probs[k])
        return 0.0

    @property
    def max_site(self) -> int:
        return len(self.probs) - 1

    def as_dict(self) -> dict[int, float]:
        return {int(k): float(p) for k, p in enumerate(self.probs) if p != 0.0}

    def tail(self, threshold: int) -> float:
        """``P(S_m >= threshold)``, ignoring leaked mass."""
        lo = max(int(math.ceil(threshold)), 0)
        return float(self.probs[lo:].sum()) if lo < len(self.probs) else 0.0


@njit(cache=True)
def _dp_forward(start, m, p_down, cap):
    p_up = 1.0 - p_down
    cur = np.zeros(cap + 2)
    nxt = np.zeros(cap + 2)
    cur[start] = 1.0
    lo = start
    hi = start
    leaked = 0.0
    for _ in range(m):
        # Mass pushed above the cap is dropped and accounted for.
        if hi == cap:
            leaked += cur[cap] * (1.0 if cap == 0 else p_up)
        new_lo = lo - 1 if lo > 0 else 0
        new_hi = hi + 1 if hi < cap else cap
        for y in range(new_lo, new_hi + 1):
            v = cur[y + 1] * p_down
            if y == 1:
                v += cur[0]
            elif y >= 2:
                v += cur[y - 1] * p_up
            nxt[y] = v
        for y in range(lo, hi + 1):
            cur[y] = 0.0
        cur, nxt = nxt, cur
        lo = new_lo
        hi = new_hi
    return cur[: cap + 1].copy(), leaked


@njit(cache=True)
def _dp_rows(start, m_max, p_down):
    p_up = 1.0 - p_down
    size = start + m_max + 1
    rows = np.zeros((m_max + 1, size))
    rows[0, start] = 1.0
    for t in range(1, m_max + 1):
        prev = rows[t - 1]
        cur = rows[t]
        hi = min(start + t, size - 1)
        for y in range(0, hi + 1):
            v = 0.0
            if y + 1 < size:
                v = prev[y + 1] * p_down
            if y == 1:
                v += prev[0]
            elif y >= 2:
                v += prev[y - 1] * p_up
            cur[y] = v
    return rows


def rw_dp_transition_prob(
    params: WalkParams, start: int, m: int, max_site: int | None = None
) -> TransitionRow:
    """Exact law of ``S_m`` by forward iteration over sites ``0..start+m``.

    ``max_site`` truncates the state space; mass crossing it is reported in
    ``TransitionRow.leaked``.
    """
    if start < 0 or m < 0:
        raise ValueError("start and m must be nonnegative")
    cap = start + m
    if max_site is not None:
        if max_site < start:
            raise ValueError("max_site must be at least start")
        cap = min(cap, int(max_site))
    probs, leaked = _dp_forward(int(start), int(m), params.p_down, int(cap))
    return TransitionRow(params, int(start), int(m), probs, float(leaked))


def rw_dp_transition_rows(params: WalkParams, start: int, m_max: int) -> np.ndarray:
    """All rows ``m = 0..m_max`` at once; entry ``[m, k]`` is ``P(S_m = k | S_0 = start)``."""
    if start < 0 or m_max < 0:
        raise ValueError("start and m_max must be nonnegative")
    return _dp_rows(int(start), int(m_max), params.p_down)


# -- spectral representation -------------------------------------------------


def eigenfunction(params: WalkParams, i, theta):
    """Generalized eigenfunction ``f_i(theta)`` of the reflected kernel, without its growth factor.

    ``f_i(theta) = cos(i theta) - (p - q) cos(theta) sin(i theta) / sin(theta)``.
    Together with ``(p/q)^{i/2}`` it solves ``p h(i-1) + q h(i+1) = lambda h(i)``
    for ``i >= 1`` and the boundary condition ``h(1) = lambda h(0)``, where
    ``lambda = 2 sqrt(pq) cos(theta)``.  The ratio ``sin(i theta)/sin(theta)``
    takes its limits ``i`` and ``(-1)^(i-1) i`` at ``theta = 0, pi``.
    """
    i = np.asarray(i, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    i_b, th_b = np.broadcast_arrays(i, theta)
    sin_t = np.sin(th_b)
    ratio = np.empty_like(th_b)
    at_zero = th_b == 0.0
    at_pi = th_b == math.pi
    interior = ~(at_zero | at_pi)
    ratio[interior] = np.sin(i_b[interior] * th_b[interior]) / sin_t[interior]
    ratio[at_zero] = i_b[at_zero]
    ratio[at_pi] = i_b[at_pi] * np.where(i_b[at_pi] % 2 == 1, 1.0, -1.0)
    gap = params.p_down - params.p_up
    return np.cos(i_b * th_b) - gap * np.cos(th_b) * ratio


def _spectral_weight(params: WalkParams, theta: np.ndarray) -> np.ndarray:
    """``tan^2 / ((p-q)^2 + tan^2)`` written without the tangent's pole."""
    gap = params.p_down - params.p_up
    s2 = np.sin(theta) ** 2
    c2 = np.cos(theta) ** 2
    if gap == 0.0:
        return np.ones_like(theta)
    denom = gap * gap * c2 + s2
    return s2 / denom


def _simpson_weights(panels: int) -> np.ndarray:
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (math.pi / panels / 3.0)


def _log_prefactor(params: WalkParams, start, m, k):
    """Log of ``(2/pi) (p/q)^{s/2} (q/p)^{k/2} (2 sqrt(pq))^m``, broadcast over arrays."""
    p, q = params.p_down, params.p_up
    log_ratio = math.log(p) - math.log(q)
    log_contract = 0.5 * math.log1p(-((p - q) ** 2))
    return (
        math.log(2.0 / math.pi)
        + 0.5 * log_ratio * (np.asarray(start, dtype=np.float64) - np.asarray(k, dtype=np.float64))
        + log_contract * np.asarray(m, dtype=np.float64)
    )


def _remainders(params, start, m_values, ks, panels):
    theta = np.linspace(0.0, math.pi, panels + 1)
    base = _simpson_weights(panels) * _spectral_weight(params, theta) * eigenfunction(params, start, theta)
    cos_t = np.cos(theta)
    powers = cos_t[None, :] ** m_values[:, None]
    fk = eigenfunction(params, ks[None, :], theta[:, None])
    integrals = (powers * base[None, :]) @ fk
    return np.exp(_log_prefactor(params, start, m_values[:, None], ks[None, :])) * integrals


def _refine(params, start, m_values, ks, tol, min_panels, max_panels):
    panels = min_panels
    prev = _remainders(params, start, m_values, ks, panels)
    while True:
        panels *= 2
        if panels > max_panels:
            raise QuadratureNotConverged(
                f"no convergence to {tol:g} with {max_panels} panels "
                f"(start={start}, m<={m_values.max()}, k<={ks.max()})"
            )
        cur = _remainders(params, start, m_values, ks, panels)
        if np.max(np.abs(cur - prev)) <= tol:
            return cur, panels
        prev = cur


def main_term(params: WalkParams, start: int, m: int, k):
    """Periodic stationary part ``(p-q)/(2pq) (q/p)^k (1 + (-1)^{s+k+m})`` for ``k >= 1``."""
    p, q = params.p_down, params.p_up
    k = np.asarray(k)
    parity = np.where((start + m + k) % 2 == 0, 2.0, 0.0)
    return (p - q) / (2.0 * p * q) * np.exp(k * (math.log(q) - math.log(p))) * parity


def remainder_envelope(params: WalkParams, start: int, m: int, k):
    """Rigorous bound on ``|R_m(k)|``.

    Uses ``|f_i| <= 1 + (p-q) i`` and ``|cos^m| <= 1`` inside the integral:
    ``2 (p/q)^{s/2} (1 + (p-q)s) (2 sqrt(pq))^m (q/p)^{k/2} (1 + (p-q)k)``.
    """
    gap = params.p_down - params.p_up
    k = np.asarray(k, dtype=np.float64)
    log_env = _log_prefactor(params, start, m, k) + math.log(math.pi)
    return np.exp(log_env) * (1.0 + gap * start) * (1.0 + gap * k)


def remainder_rate(params: WalkParams, m: int, k):
    """Shape ``(2 sqrt(pq))^m (q/p)^{k/2} (1 + 2 k beta)`` of the remainder bound, without its constant."""
    p, q = params.p_down, params.p_up
    k = np.asarray(k, dtype=np.float64)
    log_rate = 0.5 * math.log1p(-((p - q) ** 2)) * m + 0.5 * k * (math.log(q) - math.log(p))
    return np.exp(log_rate) * (1.0 + 2.0 * k * params.beta)


@dataclass(frozen=True)
class KacDecomposition:
    """``P(S_m = k | S_0 = start) = main_term + remainder`` for ``k >= 1``."""

    params: WalkParams
    start: int
    m: int
    k: int
    main_term: float
    remainder: float
    envelope: float
    panels: int

    @property
    def p(self) -> float:
        return self.params.p_down

    @property
    def q(self) -> float:
        return self.params.p_up

    @property
    def total(self) -> float:
        return self.main_term + self.remainder

    def f(self, i, theta):
        return eigenfunction(self.params, i, theta)


DEFAULT_TOL = 1e-12
MIN_PANELS = 64
MAX_PANELS = 1 << 17


def kac_transition_prob(
    params: WalkParams,
    start: int,
    m: int,
    k: int,
    quadrature_tol: float = DEFAULT_TOL,
    max_panels: int = MAX_PANELS,
) -> KacDecomposition:
    """Spectral decomposition of ``P(S_m = k | S_0 = start)`` for ``m, k >= 1``.

    Raises :class:`QuadratureNotConverged` if refinement needs more than
    ``max_panels`` Simpson panels.
    """
    if m < 1 or k < 1:
        raise ValueError("the spectral formula needs m >= 1 and k >= 1")
    if start < 0:
        raise ValueError("start must be nonnegative")
    env = float(remainder_envelope(params, start, m, k))
    if (start + m + k) % 2:
        return KacDecomposition(params, start, m, k, 0.0, 0.0, env, 0)
    rem, panels = _refine(
        params, start, np.array([m], dtype=np.float64), np.array([k]), quadrature_tol, MIN_PANELS, max_panels
    )
    return KacDecomposition(
        params, start, m, k, float(main_term(params, start, m, k)), float(rem[0, 0]), env, panels
    )


def kac_transition_table(
    params: WalkParams,
    start: int,
    m_max: int,
    quadrature_tol: float = DEFAULT_TOL,
    max_panels: int = MAX_PANELS,
) -> tuple[np.ndarray, np.ndarray]:
    """Main terms and remainders for ``m = 1..m_max`` and ``k = 0..start+m_max``.

    Both arrays have shape ``(m_max, start + m_max + 1)``; row ``i`` is
    ``m = i + 1``.  Column ``k = 0`` is NaN (the formula covers ``k >= 1``) and
    entries with odd ``start + m + k`` are exactly zero.
    """
    if m_max < 1:
        raise ValueError("m_max must be at least 1")
    if start < 0:
        raise ValueError("start must be nonnegative")
    ms = np.arange(1, m_max + 1, dtype=np.float64)
    ks = np.arange(1, start + m_max + 1)
    rem, _ = _refine(params, start, ms, ks, quadrature_tol, MIN_PANELS, max_panels)
    main = main_term(params, start, ms[:, None].astype(np.int64), ks[None, :])
    odd = (start + ms[:, None].astype(np.int64) + ks[None, :]) % 2 == 1
    rem = np.where(odd, 0.0, rem)
    main = np.where(odd, 0.0, main)
    nan_col = np.full((m_max, 1), np.nan)
    return np.hstack([nan_col, main]), np.hstack([nan_col, rem])


# -- tails -------------------------------------------------------------------


def geometric_main_term_tail(params: WalkParams, parity: int, threshold: int) -> float:
    """Sum of the main term over ``k >= threshold`` with ``k % 2 == parity``.

    With ``k0`` the smallest admissible ``k >= max(threshold, 1)`` the
    geometric series gives ``2 (p-q)/(2pq) (q/p)^k0 / (1 - (q/p)^2)``, which
    simplifies to ``(q/p)^(k0-1)`` because ``1 - (q/p)^2 = (p-q)/p^2``.  For an
    even parity and ``threshold <= 0`` the limiting mass ``(p-q)/p`` at the
    origin is included, so the full sum is 1.  Independent of ``m``.
    """
    if params.beta <= 0:
        raise ValueError("the main term is degenerate for beta = 0")
    if parity not in (0, 1):
        raise ValueError("parity must be 0 or 1")
    p, q = params.p_down, params.p_up
    k0 = max(int(math.ceil(threshold)), 1)
    if k0 % 2 != parity:
        k0 += 1
    value = math.exp((k0 - 1) * (math.log(q) - math.log(p)))
    if threshold <= 0 and parity == 0:
        value += (p - q) / p
    return value


@dataclass(frozen=True)
class TailProbability:
    """``P(S_m >= threshold)`` with a guaranteed enclosing interval."""

    value: float
    lower: float
    upper: float
    method: str

    @property
    def error(self) -> float:
        return max(self.upper - self.value, self.value - self.lower)


def _auto_cap(params: WalkParams, start: int, m: int) -> int:
    if params.beta <= 0:
        return start + m
    # Stationary mass beyond the cap is below exp(-44).
    span = int(math.ceil(44.0 / (math.log(params.p_down) - math.log(params.p_up))))
    return min(start + m, start + span)


def _remainder_tail_bound(params: WalkParams, start: int, m: int, k0: int) -> float:
    """Sum of :func:`remainder_envelope` over ``k = k0, k0+2, ...`` in closed form."""
    gap = params.p_down - params.p_up
    r = params.p_up / params.p_down
    amp = math.exp(float(_log_prefactor(params, start, m, 0)) + math.log(math.pi)) * (1.0 + gap * start)
    head = math.exp(0.5 * k0 * math.log(r))
    return amp * head * ((1.0 + gap * k0) / (1.0 - r) + 2.0 * gap * r / (1.0 - r) ** 2)


def tail_probability(
    params: WalkParams,
    start: int,
    m: int,
    threshold: int,
    method: str = "dp",
    max_site: int | None = None,
) -> TailProbability:
    """``P(S_m >= threshold | S_0 = start)``.

    ``method="dp"`` sums the forward-iteration row (truncated far out in the
    geometric tail when ``beta > 0``; the leaked mass widens the interval).
    ``method="kac"`` uses the closed-form main-term tail and bounds the summed
    remainder; it only applies when ``m >= n`` and otherwise falls back to DP.
    """
    if start < 0 or m < 0:
        raise ValueError("start and m must be nonnegative")
    if threshold <= 0:
        return TailProbability(1.0, 1.0, 1.0, method)
    if method not in ("dp", "kac"):
        raise ValueError(f"unknown method {method!r}")
    if method == "kac" and params.beta > 0 and m >= params.n:
        parity = (start + m) % 2
        k0 = max(int(math.ceil(threshold)), 1)
        if k0 % 2 != parity:
            k0 += 1
        value = geometric_main_term_tail(params, parity, threshold)
        err = _remainder_tail_bound(params, start, m, k0)
        return TailProbability(value, max(value - err, 0.0), min(value + err, 1.0), "kac")
    cap = max_site if max_site is not None else _auto_cap(params, start, m)
    row = rw_dp_transition_prob(params, start, m, max_site=cap)
    value = row.tail(threshold)
    return TailProbability(value, value, min(value + row.leaked, 1.0), "dp")


# -- simple walk on the integers ---------------------------------------------


@njit(cache=True)
def _max_abs_dp(m, k):
    width = 2 * k - 1
    cur = np.zeros(width)
    nxt = np.zeros(width)
    cur[k - 1] = 1.0
    absorbed = 0.0
    for _ in range(m):
        absorbed += 0.5 * (cur[0] + cur[width - 1])
        for j in range(width):
            v = 0.0
            if j >= 1:
                v += 0.5 * cur[j - 1]
            if j + 1 < width:
                v += 0.5 * cur[j + 1]
            nxt[j] = v
        cur, nxt = nxt, cur
    return absorbed


def max_abs_tail_exact(m: int, k: int) -> float:
    """Exact ``P(max_{i<=m} |S_i| >= k)`` for the simple walk on the integers from 0.

    Forward iteration on ``(-k, k)`` with absorbing exits at ``+-k``.
    """
    if m < 0 or k < 1:
        raise ValueError("need m >= 0 and k >= 1")
    return float(_max_abs_dp(int(m), int(k)))
