"""Fit-quality and donor-weight diagnostics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import EmptyInput, TooFewWeights, ZeroMeanOutcome
from .scm import SynthFit

DIGITS = np.arange(1, 10)
BENFORD_PMF = np.log10(1.0 + 1.0 / DIGITS)
BENFORD_CDF = np.cumsum(BENFORD_PMF)
BENFORD_CDF[-1] = 1.0

# largest band-limited DP table evaluated before falling back to the
# (conservative) continuous Kolmogorov limit
_MAX_DP_CELLS = 4_000_000


def fit_margin(fit: SynthFit) -> float:
    """Pre-treatment RMSPE as a percentage of the treated unit's mean pre-period outcome."""
    mean = float(np.mean(fit.actual[fit.pre_mask]))
    if mean == 0:
        raise ZeroMeanOutcome("treated pre-treatment outcome has zero mean")
    return 100.0 * fit.rmspe_pre / abs(mean)


@dataclass(frozen=True)
class ECDF:
    """Right-continuous empirical CDF; ``support`` sorted and unique."""

    support: np.ndarray
    cum_fraction: np.ndarray
    n: int

    def __call__(self, x):
        idx = np.searchsorted(self.support, np.asarray(x, dtype=float), side="right")
        return np.where(idx > 0, self.cum_fraction[np.maximum(idx - 1, 0)], 0.0)

    def to_csv(self):
        lines = ["weight,cum_fraction"]
        lines += [f"{w!r},{f!r}" for w, f in zip(self.support.tolist(), self.cum_fraction.tolist())]
        return "\n".join(lines) + "\n"


def weight_ecdf(weights) -> ECDF:
    w = np.asarray(list(weights), dtype=float).ravel()
    if w.size == 0:
        raise EmptyInput("no weights")
    if np.any(~(w > 0)) or np.any(w > 1):
        raise ValueError("weights must lie in (0, 1]")
    support, counts = np.unique(w, return_counts=True)
    return ECDF(support, np.cumsum(counts) / w.size, int(w.size))


def first_digit(values) -> np.ndarray:
    """Leading significant digit of each positive value, read from its decimal
    representation so that e.g. 0.3 maps to 3 despite binary rounding."""
    v = np.asarray(values, dtype=float).ravel()
    if np.any(~(v > 0)) or not np.all(np.isfinite(v)):
        raise ValueError("first digits need positive finite values")
    return np.array([int(np.format_float_scientific(x, precision=14)[0]) for x in v], dtype=np.int64)


def significand(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).ravel()
    return v / 10.0 ** np.floor(np.log10(v))


@dataclass(frozen=True)
class KSResult:
    d_stat: float
    p_value: float
    n: int
    reference: str

    def to_json(self):
        return json.dumps(
            {"d_stat": self.d_stat, "p_value": self.p_value, "n": self.n, "reference": self.reference},
            sort_keys=True,
        )


def digit_ks_stat(digits) -> float:
    counts = np.bincount(np.asarray(digits), minlength=10)[1:]
    ecdf = np.cumsum(counts) / counts.sum()
    return float(np.max(np.abs(ecdf - BENFORD_CDF)))


def benford_digit_sf(d: float, n: int) -> float:
    """P(D_n >= d) for the KS distance between n Benford digits and the Benford CDF.

    Exact for the discrete null: a dynamic program over cumulative digit
    counts S_k, where given S_{k-1} the count of digit k is binomial with
    success probability p_k / (1 - F_{k-1}). Only states with
    |S_k - n F_k| < n d survive. Falls back to the continuous Kolmogorov
    limit (an upper bound for a discrete null) when the table gets large.
    """
    if d <= 0:
        return 1.0
    if d > 1:
        return 0.0
    half = n * d * (1.0 - 1e-12)
    width = 2 * math.ceil(half) + 1
    if width * width > _MAX_DP_CELLS:
        return float(stats.kstwobign.sf(math.sqrt(n) * d))
    states = np.arange(n + 1)
    prob = np.zeros(n + 1)
    prob[0] = 1.0
    prev_F = 0.0
    for k in range(8):
        q = BENFORD_PMF[k] / (1.0 - prev_F)
        ok = np.abs(states - n * BENFORD_CDF[k]) < half
        src = np.flatnonzero(prob > 0)
        dst = np.flatnonzero(ok)
        if src.size == 0 or dst.size == 0:
            return 1.0
        x = dst[None, :] - src[:, None]
        trials = (n - src)[:, None]
        pmf = np.where(x >= 0, stats.binom.pmf(np.maximum(x, 0), trials, q), 0.0)
        new = np.zeros(n + 1)
        new[dst] = prob[src] @ pmf
        prob = new
        prev_F = BENFORD_CDF[k]
    # S_9 = n always and |n - n F_9| = 0 < n d
    inside = float(prob.sum())
    return float(min(1.0, max(0.0, 1.0 - inside)))


def ks_benford(weights, reference: str = "first_digit", method: str = "exact",
               n_reference: int = 100_000, seed: int = 0) -> KSResult:
    """Kolmogorov-Smirnov comparison of nonzero donor weights with Benford's law.

    reference:
      ``first_digit``  one-sample test of leading digits against the Benford CDF
      ``significand``  one-sample test of significands in [1, 10) against log10
      ``two_sample``   leading digits vs. a seeded Benford-sampled reference
    method (first_digit only):
      ``exact``       discrete-null distribution (see :func:`benford_digit_sf`)
      ``kolmogorov``  continuous Kolmogorov distribution, exact for n < 35
    """
    w = np.asarray(list(weights), dtype=float).ravel()
    w = w[w != 0]
    if w.size < 5:
        raise TooFewWeights(f"need at least 5 nonzero weights, got {w.size}")
    n = int(w.size)
    if reference == "first_digit":
        d = digit_ks_stat(first_digit(w))
        if method == "exact":
            p = benford_digit_sf(d, n)
        elif method == "kolmogorov":
            p = float(stats.kstwo.sf(d, n)) if n < 35 else float(stats.kstwobign.sf(math.sqrt(n) * d))
        else:
            raise ValueError(f"unknown method {method!r}")
        return KSResult(d, min(1.0, max(0.0, p)), n, "benford_first_digit")
    if reference == "significand":
        res = stats.kstest(significand(w), lambda s: np.log10(np.clip(s, 1.0, 10.0)))
        return KSResult(float(res.statistic), float(res.pvalue), n, "benford_significand")
    if reference == "two_sample":
        rng = np.random.default_rng(seed)
        ref = rng.choice(DIGITS, size=n_reference, p=BENFORD_PMF / BENFORD_PMF.sum())
        res = stats.ks_2samp(first_digit(w), ref)
        return KSResult(float(res.statistic), float(res.pvalue), n, "benford_two_sample")
    raise ValueError(f"unknown reference {reference!r}")


def sample_benford_digits(n: int, rng) -> np.ndarray:
    return rng.choice(DIGITS, size=n, p=BENFORD_PMF / BENFORD_PMF.sum())
