"""Monte Carlo estimates and distribution distances shared by the test harnesses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _sps


@dataclass(frozen=True)
class MCEstimate:
    """A Monte Carlo estimate with its standard error and sample count."""

    value: float
    stderr: float
    count: int

    def within(self, target: float, n_se: float = 3.0, slack: float = 0.0) -> bool:
        return abs(self.value - target) <= n_se * self.stderr + slack

    def as_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "count": self.count}


def mean_estimate(samples) -> MCEstimate:
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        return MCEstimate(math.nan, math.nan, 0)
    if x.size == 1:
        return MCEstimate(float(x[0]), math.inf, 1)
    return MCEstimate(float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)), int(x.size))


def proportion_estimate(successes: int, trials: int) -> MCEstimate:
    if trials <= 0:
        return MCEstimate(math.nan, math.nan, 0)
    phat = successes / trials
    return MCEstimate(phat, math.sqrt(max(phat * (1.0 - phat), 0.0) / trials), int(trials))


def variance_estimate(samples) -> MCEstimate:
    """Unbiased sample variance with a fourth-moment standard error."""
    x = np.asarray(samples, dtype=np.float64)
    n = x.size
    if n < 4:
        raise ValueError("need at least four samples")
    d = x - x.mean()
    s2 = float(d @ d / (n - 1))
    m4 = float(np.mean(d**4))
    var_s2 = (m4 - s2 * s2 * (n - 3) / (n - 1)) / n
    return MCEstimate(s2, math.sqrt(max(var_s2, 0.0)), int(n))


def combined_stderr(*errors: float) -> float:
    return math.sqrt(sum(e * e for e in errors))


def median_with_stderr(samples, rng: np.random.Generator, resamples: int = 400) -> MCEstimate:
    """Sample median with a bootstrap standard error."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        return MCEstimate(math.nan, math.nan, 0)
    med = float(np.median(x))
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    boot = np.median(x[idx], axis=1)
    return MCEstimate(med, float(boot.std(ddof=1)), int(x.size))


def ks_exponential(samples, mean: float) -> float:
    """Kolmogorov-Smirnov distance of samples to Exp(mean)."""
    return float(_sps.kstest(np.asarray(samples, dtype=np.float64), "expon", args=(0.0, mean)).statistic)


def ks_two_sample(a, b) -> float:
    return float(_sps.ks_2samp(np.asarray(a), np.asarray(b)).statistic)


def chi2_gof_pvalue(observed, expected_probs, min_expected: float = 5.0) -> float:
    """Pearson chi-square p-value, pooling cells whose expected count is small.

    Small cells are merged in order of support until each pooled cell reaches
    ``min_expected``; a trailing remainder is merged into the last cell.
    """
    obs = np.asarray(observed, dtype=np.float64)
    p = np.asarray(expected_probs, dtype=np.float64)
    total = obs.sum()
    p = p / p.sum()
    exp = total * p
    pooled_o, pooled_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            pooled_o.append(acc_o)
            pooled_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if pooled_e:
            pooled_o[-1] += acc_o
            pooled_e[-1] += acc_e
        else:
            pooled_o.append(acc_o)
            pooled_e.append(acc_e)
    if len(pooled_e) < 2:
        return 1.0
    return float(_sps.chisquare(pooled_o, pooled_e).pvalue)


def total_variation(a_counts: dict, b_counts: dict) -> tuple[float, float]:
    """TV distance between two empirical laws and its Monte Carlo noise scale.

    Inputs map outcome -> count.  The noise scale is half the summed standard
    errors of the per-outcome frequency differences, which bounds the expected
    TV distance between two samples of the same law.
    """
    na = sum(a_counts.values())
    nb = sum(b_counts.values())
    tv = 0.0
    noise = 0.0
    for key in set(a_counts) | set(b_counts):
        pa = a_counts.get(key, 0) / na
        pb = b_counts.get(key, 0) / nb
        tv += abs(pa - pb)
        pool = (a_counts.get(key, 0) + b_counts.get(key, 0)) / (na + nb)
        noise += math.sqrt(pool * (1 - pool) * (1 / na + 1 / nb))
    return 0.5 * tv, 0.5 * noise
