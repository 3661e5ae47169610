"""Zivot-Andrews unit-root test with one endogenous break."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConstantSeries, SeriesTooShort

MODELS = {"intercept": 0, "trend": 1, "both": 2}

# asymptotic critical values, Zivot & Andrews (1992) Tables 2-4
CRITICAL_VALUES = {
    "intercept": {0.01: -5.34, 0.05: -4.80, 0.10: -4.58},
    "trend": {0.01: -4.93, 0.05: -4.42, 0.10: -4.11},
    "both": {0.01: -5.57, 0.05: -5.08, 0.10: -4.82},
}


@dataclass(frozen=True)
class BreakResult:
    """``break_period`` is the first period of the post-break regime."""

    break_period: int
    min_t_stat: float
    t_stats: dict
    model: str
    lags: int
    reject_at: float | None
    critical_values: dict

    def to_csv(self):
        lines = ["candidate_year,t_stat"]
        lines += [f"{y},{t!r}" for y, t in self.t_stats.items()]
        return "\n".join(lines) + "\n"

    def summary(self):
        return {
            "break_period": self.break_period,
            "min_t_stat": self.min_t_stat,
            "model": self.model,
            "lags": self.lags,
            "reject_at": self.reject_at,
            "critical_values": {f"{int(a * 100)}%": cv for a, cv in self.critical_values.items()},
        }

    def summary_json(self):
        return json.dumps(self.summary(), sort_keys=True)


def default_max_lags(n):
    return max(0, min(int(12.0 * (n / 100.0) ** 0.25), math.ceil(n / 4) - 1))


def zivot_andrews(series, model: str = "both", trimming: float = 0.15, max_lags: int | None = None,
                  years=None) -> BreakResult:
    """Search the trimmed interior for the break minimising the unit-root t-statistic.

    The regression is
        dy_t = c + b t + [d DU_t] + [g DT_t] + a y_{t-1} + sum_j c_j dy_{t-j} + e_t
    with DU_t = 1{t >= k}, DT_t = (t - k + 1) 1{t >= k} for a candidate k.
    The lag order is chosen once by AIC (0..max_lags, common sample) at the
    mid-sample candidate and then held fixed.
    """
    y = np.ascontiguousarray(np.asarray(series, dtype=float))
    n = y.size
    if n < 20:
        raise SeriesTooShort(f"need at least 20 observations, got {n}")
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    if np.ptp(y) == 0:
        raise ConstantSeries("series is constant")
    if model not in MODELS:
        raise ValueError(f"model must be one of {tuple(MODELS)}")
    if not 0 < trimming < 0.5:
        raise ValueError("trimming must lie in (0, 0.5)")
    if max_lags is None:
        max_lags = default_max_lags(n)
    if not 0 <= max_lags < n / 4:
        raise ValueError(f"max_lags must be in [0, n/4), got {max_lags}")
    years = np.arange(n) if years is None else np.asarray(years, dtype=np.int64)
    if years.size != n:
        raise ValueError("years and series lengths differ")
    code = MODELS[model]

    lo = max(math.ceil(trimming * n), max_lags + 2)
    hi = min(math.floor((1.0 - trimming) * n), n - 2)
    if lo > hi:
        raise SeriesTooShort("trimmed candidate window is empty")

    mid = (lo + hi) // 2
    best_p, best_aic = 0, math.inf
    for p in range(max_lags + 1):
        rss, m, q = _kernels.za_rss(y, p, code, mid, max_lags + 1)
        aic = m * math.log(rss / m) + 2 * q if rss > 0 else -math.inf
        if aic < best_aic:
            best_p, best_aic = p, aic

    candidates = np.arange(lo, hi + 1, dtype=np.int64)
    stats = _kernels.za_tstats(y, best_p, code, candidates, best_p + 1)
    k = int(np.argmin(stats))
    tmin = float(stats[k])
    cvs = CRITICAL_VALUES[model]
    reject = next((a for a in sorted(cvs) if tmin < cvs[a]), None)
    return BreakResult(
        break_period=int(years[candidates[k]]),
        min_t_stat=tmin,
        t_stats={int(years[c]): float(t) for c, t in zip(candidates, stats)},
        model=model,
        lags=best_p,
        reject_at=reject,
        critical_values=dict(cvs),
    )
