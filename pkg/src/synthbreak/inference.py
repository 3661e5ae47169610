"""Permutation inference for a single treated unit.

In-space placebos refit the estimator with each donor treated in turn (the
real treated unit removed from every placebo donor pool). Per-period p-values
compare absolute gaps; the global test compares post/pre RMSPE ratios.
Confidence sets invert the ratio test over constant post-period effects.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    AllPlacebosFiltered,
    GridEdgeWarning,
    GridTooCoarse,
    PlaceboExcluded,
    SynthbreakError,
    ZeroPreRMSPE,
)
from .panel import PanelDataset
from .scm import StudySpec, SynthFit, fit_synth, rmspe, shift_t0

FILTER_MULTIPLES = (None, 2.0, 4.0, 5.0)


@dataclass(frozen=True, eq=False)
class PlaceboSet:
    treated_fit: SynthFit
    placebo_fits: dict
    t0: int
    failed: dict = field(default_factory=dict)

    @property
    def treated_unit(self):
        return self.treated_fit.spec_echo.treated_unit

    def survivors(self, multiple=None):
        """Placebo fits whose pre-RMSPE is within ``multiple`` x the treated one."""
        if multiple is None:
            return dict(self.placebo_fits)
        if not multiple > 1:
            raise ValueError("filter multiple must exceed 1")
        cut = multiple * self.treated_fit.rmspe_pre
        return {u: f for u, f in self.placebo_fits.items() if f.rmspe_pre <= cut}

    def to_csv(self, multiples=(2.0, 4.0, 5.0)):
        head = ["unit", "rmspe_pre", "rmspe_post", "ratio"] + [f"filtered_at_{m:g}x" for m in multiples]
        lines = [",".join(head)]
        cut = self.treated_fit.rmspe_pre
        for unit, f in [(self.treated_unit, self.treated_fit), *self.placebo_fits.items()]:
            ratio = f.rmspe_post / f.rmspe_pre if f.rmspe_pre > 0 else math.nan
            flags = ["0" if unit == self.treated_unit or f.rmspe_pre <= m * cut else "1" for m in multiples]
            lines.append(",".join([_q(unit), repr(f.rmspe_pre), repr(f.rmspe_post), _num(ratio), *flags]))
        for unit, msg in self.failed.items():
            lines.append(",".join([_q(unit), "", "", "", *([""] * len(multiples))]))
        return "\n".join(lines) + "\n"


def _q(text):
    return '"' + text.replace('"', '""') + '"' if any(c in text for c in ',"\n') else text


def _num(x):
    return "" if x is None or math.isnan(x) else repr(float(x))


def in_space_placebos(panel: PanelDataset, spec: StudySpec, threads: int = 1,
                      treated_fit: SynthFit | None = None) -> PlaceboSet:
    """Fit every donor as if treated at ``spec.t0``.

    Placebo fits are independent; with ``threads > 1`` they run on a thread
    pool but are always returned in donor order. A donor whose fit raises is
    recorded in ``failed`` with the error text.
    """
    if treated_fit is None:
        treated_fit = fit_synth(panel, spec)
    donors = [u for u in panel.units if u != spec.treated_unit]
    if len(donors) < 2:
        raise SynthbreakError("in-space placebos need at least 2 donors")
    pool = panel.select_units(donors)

    def one(unit):
        try:
            return fit_synth(pool, replace(spec, treated_unit=unit)), None
        except SynthbreakError as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, donors))
    else:
        results = [one(u) for u in donors]
    fits, failed = {}, {}
    for unit, (fit, err) in zip(donors, results):
        if fit is None:
            failed[unit] = err
        else:
            fits[unit] = fit
    return PlaceboSet(treated_fit=treated_fit, placebo_fits=fits, t0=spec.t0, failed=failed)


@dataclass(frozen=True)
class PValueSeries:
    years: np.ndarray
    p: np.ndarray
    n_placebos: int
    multiple: float | None


def pvalue_series(ps: PlaceboSet, multiple: float | None = None) -> PValueSeries:
    """Per post-period p(t) = #{fits incl. treated with |gap_t| >= |treated gap_t|} / (placebos + 1)."""
    fits = ps.survivors(multiple)
    if not fits:
        raise AllPlacebosFiltered(f"no placebo survives the {multiple}x RMSPE filter")
    tf = ps.treated_fit
    post = tf.post_mask
    treated = np.abs(tf.gap_path[post])
    gaps = np.abs(np.array([f.gap_path[post] for f in fits.values()]))
    count = 1 + (gaps >= treated).sum(axis=0)
    return PValueSeries(tf.years[post], count / (len(fits) + 1), len(fits), multiple)


def pvalue_table_csv(columns) -> str:
    """CSV ``year,p_unfiltered,p_2x,...`` from ``[(multiple, PValueSeries | None), ...]``.

    A ``None`` series (every placebo filtered out) becomes empty cells.
    """
    ref = next(s for _, s in columns if s is not None)
    head = ["year"] + ["p_unfiltered" if m is None else f"p_{m:g}x" for m, _ in columns]
    lines = [",".join(head)]
    for k, y in enumerate(ref.years):
        cells = [str(int(y))] + ["" if s is None else repr(float(s.p[k])) for _, s in columns]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _rank_p(treated_ratio: float, placebo_ratios: np.ndarray):
    rank = 1 + int(np.sum(placebo_ratios >= treated_ratio))
    return rank, rank / (placebo_ratios.size + 1)


@dataclass(frozen=True)
class RatioTest:
    ratios: dict
    treated_ratio: float
    rank: int
    p_value: float
    excluded: tuple = ()


def rmspe_ratio_test(ps: PlaceboSet, multiple: float | None = None) -> RatioTest:
    """Rank of the treated post/pre RMSPE ratio among all units (1 = largest);
    p = rank / number of units. Ties count against the treated unit."""
    tf = ps.treated_fit
    if not tf.rmspe_pre > 0:
        raise ZeroPreRMSPE(f"treated unit {ps.treated_unit!r} has zero pre-treatment RMSPE")
    fits = ps.survivors(multiple)
    ratios, excluded = {}, []
    for unit, f in fits.items():
        if f.rmspe_pre > 0:
            ratios[unit] = f.rmspe_post / f.rmspe_pre
        else:
            excluded.append(unit)
    if excluded:
        warnings.warn(
            f"placebos with zero pre-RMSPE excluded: {', '.join(excluded)}", PlaceboExcluded, stacklevel=2
        )
    if not ratios:
        raise AllPlacebosFiltered("no placebo ratios available")
    treated_ratio = tf.rmspe_post / tf.rmspe_pre
    rank, p = _rank_p(treated_ratio, np.array(list(ratios.values())))
    return RatioTest(
        ratios={ps.treated_unit: treated_ratio, **ratios},
        treated_ratio=treated_ratio,
        rank=rank,
        p_value=p,
        excluded=tuple(excluded),
    )


@dataclass(frozen=True, eq=False)
class InTimePlacebo:
    fit: SynthFit
    false_t0: int
    baseline_rmspe_pre: float

    @property
    def rmspe_pre_ratio(self):
        if self.baseline_rmspe_pre > 0:
            return self.fit.rmspe_pre / self.baseline_rmspe_pre
        return math.inf if self.fit.rmspe_pre > 0 else 1.0


def in_time_placebo(panel: PanelDataset, spec: StudySpec, false_t0: int,
                    baseline: SynthFit | None = None) -> InTimePlacebo:
    """Refit with the treatment year moved to ``false_t0``."""
    baseline = baseline if baseline is not None else fit_synth(panel, spec)
    moved = shift_t0(spec, false_t0)
    fit = baseline if moved is spec else fit_synth(panel, moved)
    return InTimePlacebo(fit=fit, false_t0=int(false_t0), baseline_rmspe_pre=baseline.rmspe_pre)


@dataclass(frozen=True)
class EffectBand:
    years: np.ndarray
    gap_lower: np.ndarray
    gap_upper: np.ndarray
    ratio_lower: np.ndarray
    ratio_upper: np.ndarray
    alpha: float
    accepted: np.ndarray
    truncated: bool = False

    @property
    def empty(self):
        return self.accepted.size == 0

    def to_csv(self):
        lines = ["year,gap_lower,gap_upper,ratio_lower,ratio_upper"]
        for row in zip(self.years, self.gap_lower, self.gap_upper, self.ratio_lower, self.ratio_upper):
            lines.append(",".join([str(int(row[0]))] + [_num(x) for x in row[1:]]))
        return "\n".join(lines) + "\n"


def default_grid(fit: SynthFit, n: int = 801) -> np.ndarray:
    """Symmetric grid of offsets wide enough to cover any plausible constant effect."""
    post = fit.gap_path[fit.post_mask]
    half = 3.0 * float(np.max(np.abs(post))) + 3.0 * fit.rmspe_pre
    if not half > 0:
        half = 1.0
    return np.linspace(-half, half, n)


def confidence_band(panel: PanelDataset, spec: StudySpec, alpha: float = 0.05, grid=None,
                    placebos: PlaceboSet | None = None, multiple: float | None = None) -> EffectBand:
    """Confidence set for a constant post-period effect, by inverting the ratio test.

    For each offset d on ``grid`` the hypothesis "the effect is d in every
    post period" is tested by subtracting d from the treated post-period
    outcomes and rerunning the RMSPE-ratio test; d is kept when p > alpha.
    The shift touches no pre-treatment data, so the treated weights and every
    placebo fit (which never use the treated unit) are unchanged and only the
    treated post-RMSPE needs recomputing.

    The gap band is the accepted interval [min d, max d] in every post
    period; the ratio band maps it to actual / (actual - d), the outcome
    relative to the implied counterfactual.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    ps = placebos if placebos is not None else in_space_placebos(panel, spec)
    tf = ps.treated_fit
    grid = default_grid(tf) if grid is None else np.sort(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("empty hypothesis grid")
    if not np.allclose(grid, -grid[::-1], rtol=0, atol=1e-9 * max(1.0, np.abs(grid).max())):
        raise ValueError("hypothesis grid must be symmetric around 0")

    base = rmspe_ratio_test(ps, multiple)
    placebo_ratios = np.array([r for u, r in base.ratios.items() if u != ps.treated_unit])
    post = tf.post_mask
    gaps = tf.gap_path[post]
    shifted = np.sqrt(np.mean((gaps[None, :] - grid[:, None]) ** 2, axis=1)) / tf.rmspe_pre
    p = np.array([_rank_p(r, placebo_ratios)[1] for r in shifted])
    accepted = grid[p > alpha]
    years = tf.years[post]
    if accepted.size == 0:
        if base.p_value > alpha:
            raise GridTooCoarse("no grid offset accepted although the zero offset is")
        nan = np.full(gaps.size, np.nan)
        return EffectBand(years, nan, nan, nan, nan, alpha, accepted)
    lo_d, hi_d = float(accepted.min()), float(accepted.max())
    truncated = bool(lo_d == grid[0] or hi_d == grid[-1])
    if truncated:
        warnings.warn("confidence set reaches the edge of the offset grid", GridEdgeWarning, stacklevel=2)
    actual = tf.actual[post]
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(actual - lo_d > 0, actual / (actual - lo_d), np.nan)
        r2 = np.where(actual - hi_d > 0, actual / (actual - hi_d), np.nan)
    return EffectBand(
        years=years,
        gap_lower=np.full(gaps.size, lo_d),
        gap_upper=np.full(gaps.size, hi_d),
        ratio_lower=np.fmin(r1, r2),
        ratio_upper=np.fmax(r1, r2),
        alpha=alpha,
        accepted=accepted,
        truncated=truncated,
    )
