"""Synthetic control estimation.

Donor weights solve a predictor-weighted least-squares problem on the unit
simplex; predictor weights (V) are uniform, lag-only, or chosen by a nested
search that minimises the pre-treatment outcome MSPE.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from . import _kernels
from .errors import (
    PredictorAllMissing,
    PredictorDropped,
    SolverDiverged,
    WindowError,
    ZeroSyntheticValue,
    ZeroVariancePredictor,
    EmptyWindow,
)
from .panel import PanelDataset

V_MODES = ("equal", "nested", "outcome_lags_only")

# reduced-gradient tolerance handed to the active-set kernel
_KERNEL_TOL = 1e-13


@dataclass(frozen=True)
class Predictor:
    """A covariate averaged over [start, end] (defaults: whole matching window)."""

    name: str
    start: int | None = None
    end: int | None = None

    @property
    def label(self):
        if self.start is None and self.end is None:
            return self.name
        return f"{self.name}[{'' if self.start is None else self.start}-{'' if self.end is None else self.end}]"


@dataclass(frozen=True)
class StudySpec:
    """One synthetic-control study.

    ``t0`` is the last pre-treatment year. ``special_predictors`` are years
    whose outcome value is used as a predictor. With no predictors at all,
    every outcome year up to ``match_end`` is used. ``match_end`` (default
    ``t0``) bounds the window used for covariate averages and the nested V
    search; ``rmspe_pre`` always covers every year up to ``t0``.
    """

    treated_unit: str
    t0: int
    predictors: tuple = ()
    special_predictors: tuple = ()
    v_mode: str = "nested"
    solver_tol: float = 1e-10
    max_iter: int = 1000
    seed: int = 0
    match_end: int | None = None
    n_starts: int = 10

    def __post_init__(self):
        preds = tuple(p if isinstance(p, Predictor) else Predictor(str(p)) for p in self.predictors)
        object.__setattr__(self, "predictors", preds)
        object.__setattr__(self, "special_predictors", tuple(int(y) for y in self.special_predictors))
        object.__setattr__(self, "treated_unit", str(self.treated_unit))
        object.__setattr__(self, "t0", int(self.t0))
        if self.v_mode not in V_MODES:
            raise ValueError(f"v_mode must be one of {V_MODES}, got {self.v_mode!r}")
        if not self.solver_tol > 0:
            raise ValueError("solver_tol must be positive")
        if self.max_iter < 1 or self.n_starts < 1:
            raise ValueError("max_iter and n_starts must be >= 1")

    @property
    def match_last(self):
        return self.t0 if self.match_end is None else int(self.match_end)

    def to_dict(self):
        return {
            "treated_unit": self.treated_unit,
            "t0": self.t0,
            "match_end": self.match_last,
            "predictors": [
                {"name": p.name, "start": p.start, "end": p.end} for p in self.predictors
            ],
            "special_predictors": list(self.special_predictors),
            "v_mode": self.v_mode,
            "solver_tol": self.solver_tol,
            "max_iter": self.max_iter,
            "seed": self.seed,
            "n_starts": self.n_starts,
        }


def validate_spec(panel: PanelDataset, spec: StudySpec) -> None:
    panel.unit_index(spec.treated_unit)
    first, last = int(panel.periods[0]), int(panel.periods[-1])
    if not (first + 1 <= spec.t0 < last):
        raise WindowError(
            f"t0={spec.t0} needs >= 2 periods up to it and >= 1 after it within {first}-{last}"
        )
    m = spec.match_last
    if not (first <= m <= spec.t0):
        raise WindowError(f"match_end={m} must lie in {first}-{spec.t0}")
    for y in spec.special_predictors:
        if not (first <= y <= spec.t0):
            raise WindowError(f"outcome lag year {y} outside {first}-{spec.t0}")
    for p in spec.predictors:
        if p.name not in panel.covariates:
            raise WindowError(f"unknown covariate {p.name!r}")


@dataclass(frozen=True)
class SimplexWeights:
    w: np.ndarray
    donors: tuple | None = None

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights are not on the unit simplex")
        if self.donors is not None and len(self.donors) != w.size:
            raise ValueError("donor labels do not match weight vector")

    def as_dict(self, nonzero=True):
        names = self.donors or tuple(str(i) for i in range(self.w.size))
        return {u: float(x) for u, x in zip(names, self.w) if x > 0 or not nonzero}


@dataclass(frozen=True)
class PredictorWeights:
    v: np.ndarray
    names: tuple | None = None

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "v", v)
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError("predictor weights must be nonnegative and sum to 1")


@dataclass(frozen=True)
class PredictorMatrices:
    """Standardised predictors (rows) for the treated unit and each donor."""

    names: tuple
    kinds: tuple
    X1: np.ndarray
    X0: np.ndarray
    raw1: np.ndarray
    raw0: np.ndarray
    donors: tuple


@dataclass(frozen=True)
class BalanceRow:
    predictor: str
    treated: float
    synthetic: float


@dataclass(frozen=True)
class BalanceTable:
    rows: tuple

    def to_csv(self):
        lines = ["predictor,treated,synthetic"]
        lines += [f"{_q(r.predictor)},{_num(r.treated)},{_num(r.synthetic)}" for r in self.rows]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class SynthFit:
    weights: SimplexWeights
    v: PredictorWeights
    years: np.ndarray
    actual: np.ndarray
    synthetic_path: np.ndarray
    gap_path: np.ndarray
    ratio_path: np.ndarray
    rmspe_pre: float
    rmspe_post: float
    balance: BalanceTable
    spec_echo: StudySpec
    outcome_label: str = "outcome"

    @property
    def donors(self):
        return self.weights.donors

    @property
    def t0(self):
        return self.spec_echo.t0

    @property
    def pre_mask(self):
        return self.years <= self.t0

    @property
    def post_mask(self):
        return self.years > self.t0

    @property
    def post_ratio(self):
        return self.rmspe_post / self.rmspe_pre if self.rmspe_pre > 0 else math.inf

    def to_dict(self):
        years = [str(int(y)) for y in self.years]
        return {
            "treated_unit": self.spec_echo.treated_unit,
            "outcome": self.outcome_label,
            "t0": self.t0,
            "weights": self.weights.as_dict(),
            "v": {n: float(x) for n, x in zip(self.v.names, self.v.v)},
            "paths": {
                key: dict(zip(years, (_json_num(x) for x in arr)))
                for key, arr in (
                    ("actual", self.actual),
                    ("synthetic", self.synthetic_path),
                    ("gap", self.gap_path),
                    ("ratio", self.ratio_path),
                )
            },
            "rmspe_pre": self.rmspe_pre,
            "rmspe_post": self.rmspe_post,
            "balance": [
                {"predictor": r.predictor, "treated": r.treated, "synthetic": r.synthetic}
                for r in self.balance.rows
            ],
            "spec": self.spec_echo.to_dict(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def paths_csv(self):
        lines = ["year,actual,synthetic,gap,ratio"]
        for row in zip(self.years, self.actual, self.synthetic_path, self.gap_path, self.ratio_path):
            lines.append(",".join([str(int(row[0]))] + [_num(x) for x in row[1:]]))
        return "\n".join(lines) + "\n"


def _num(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _json_num(x):
    return None if math.isnan(x) else float(x)


def _q(text):
    return '"' + text.replace('"', '""') + '"' if any(c in text for c in ',"\n') else text


def rmspe(gaps) -> float:
    gaps = np.asarray(gaps, dtype=float)
    if gaps.size == 0:
        raise EmptyWindow("RMSPE of an empty window")
    return float(np.sqrt(np.mean(gaps**2)))


def _resolved_lags(panel, spec):
    if spec.predictors or spec.special_predictors:
        return spec.special_predictors
    first = int(panel.periods[0])
    return tuple(range(first, spec.match_last + 1))


def build_predictor_matrices(panel: PanelDataset, spec: StudySpec, donors: Sequence[str] | None = None):
    """Covariate averages, then outcome lags, each standardised across the
    treated unit and the donors (pooled mean, population SD).

    Predictors with a missing value for any involved unit, or with zero
    variance, are dropped with a warning.
    """
    validate_spec(panel, spec)
    ti = panel.unit_index(spec.treated_unit)
    if donors is None:
        donors = tuple(u for u in panel.units if u != spec.treated_unit)
    di = [panel.unit_index(u) for u in donors]
    rows = [ti] + di
    first = int(panel.periods[0])
    names, kinds, values = [], [], []
    for p in spec.predictors:
        lo = first if p.start is None else int(p.start)
        hi = spec.match_last if p.end is None else int(p.end)
        a, b = max(lo, first) - first, min(hi, int(panel.periods[-1])) - first + 1
        if a >= b:
            raise WindowError(f"predictor {p.label} has an empty year window {lo}-{hi}")
        block = panel.covariates[p.name][rows, a:b]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            agg = np.nanmean(block, axis=1)
        if np.any(np.isnan(agg)):
            missing = [panel.units[rows[i]] for i in np.flatnonzero(np.isnan(agg))]
            warnings.warn(
                f"predictor {p.label} dropped: missing for {', '.join(missing[:5])}",
                PredictorDropped,
                stacklevel=2,
            )
            continue
        names.append(p.label)
        kinds.append("covariate")
        values.append(agg)
    for y in _resolved_lags(panel, spec):
        names.append(f"{panel.outcome_label}[{y}]")
        kinds.append("lag")
        values.append(panel.outcomes[rows, y - first])

    keep_names, keep_kinds, raw, std = [], [], [], []
    for n, k, x in zip(names, kinds, values):
        mu, sd = x.mean(), x.std()
        if not sd > 1e-12 * (1.0 + abs(mu)):
            warnings.warn(f"predictor {n} dropped: zero variance", ZeroVariancePredictor, stacklevel=2)
            continue
        keep_names.append(n)
        keep_kinds.append(k)
        raw.append(x)
        std.append((x - mu) / sd)
    if not raw:
        raise PredictorAllMissing("no usable predictors remain")
    raw = np.array(raw)
    std = np.array(std)
    return PredictorMatrices(
        names=tuple(keep_names),
        kinds=tuple(keep_kinds),
        X1=std[:, 0].copy(),
        X0=np.ascontiguousarray(std[:, 1:]),
        raw1=raw[:, 0].copy(),
        raw0=np.ascontiguousarray(raw[:, 1:]),
        donors=tuple(donors),
    )


def _solve(X1, X0, v, tol, max_iter):
    sv = np.sqrt(np.asarray(v, dtype=float))
    A = np.ascontiguousarray(X0 * sv[:, None])
    b = np.ascontiguousarray(X1 * sv)
    w, _, status = _kernels.simplex_lsq(A, b, _KERNEL_TOL, int(max_iter))
    w = np.clip(w, 0.0, None)
    w /= w.sum()
    g = 2.0 * (A.T @ (A @ w - b))
    gap = float(g @ w - g.min())
    if gap > tol * max(1.0, float(b @ b)):
        raise SolverDiverged(
            f"simplex solver stopped ({'iteration cap' if status else 'converged'}) "
            f"with duality gap {gap:.3g} > tolerance"
        )
    return w


def solve_weights(X1, X0, v, solver_tol=1e-10, max_iter=1000) -> SimplexWeights:
    """argmin over the simplex of sum_k v_k (X1_k - X0_k . w)^2.

    The returned objective is certified within ``solver_tol`` (relative to
    max(1, sum v X1^2)) of the optimum via the Frank-Wolfe duality gap.
    """
    X1 = np.asarray(X1, dtype=float)
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    vv = v.v if isinstance(v, PredictorWeights) else np.asarray(v, dtype=float)
    if X0.shape[1] < 1:
        raise ValueError("need at least one donor")
    if X0.shape[0] != X1.size or vv.size != X1.size:
        raise ValueError(f"dimension mismatch: X1 {X1.shape}, X0 {X0.shape}, v {vv.shape}")
    if X0.shape[1] == 1:
        return SimplexWeights(np.ones(1))
    return SimplexWeights(_solve(X1, X0, vv, solver_tol, max_iter))


def _match_outcomes(panel, spec, donors):
    ti = panel.unit_index(spec.treated_unit)
    di = [panel.unit_index(u) for u in donors]
    n = spec.match_last - int(panel.periods[0]) + 1
    return panel.outcomes[ti, :n], np.ascontiguousarray(panel.outcomes[di, :n].T)


def _choose_v(pm: PredictorMatrices, y1, Y0, spec: StudySpec) -> np.ndarray:
    K = len(pm.names)
    if spec.v_mode == "equal" or K == 1:
        return np.full(K, 1.0 / K)
    if spec.v_mode == "outcome_lags_only":
        mask = np.array([k == "lag" for k in pm.kinds])
        if not mask.any():
            warnings.warn("no outcome lags among predictors; using equal V", PredictorDropped, stacklevel=3)
            return np.full(K, 1.0 / K)
        return mask / mask.sum()

    # nested: multi-start Nelder-Mead over v = theta^2 / sum(theta^2)
    if pm.X0.shape[1] == 1:
        return np.full(K, 1.0 / K)

    def loss(theta):
        t2 = theta * theta
        s = t2.sum()
        if not s > 0:
            return np.inf
        w = _solve(pm.X1, pm.X0, t2 / s, spec.solver_tol, spec.max_iter)
        r = y1 - Y0 @ w
        return float(r @ r) / r.size

    rng = np.random.default_rng(spec.seed)
    starts = [np.full(K, 1.0 / K)] + list(rng.dirichlet(np.ones(K), size=spec.n_starts - 1))
    best_v, best_f = None, np.inf
    maxfev = min(2000, 200 * K)
    for v0 in starts:
        res = minimize(
            loss,
            np.sqrt(v0),
            method="Nelder-Mead",
            options={"maxfev": maxfev, "xatol": 1e-6, "fatol": 1e-12},
        )
        f = float(res.fun)
        if f < best_f:
            t2 = res.x * res.x
            best_v, best_f = t2 / t2.sum(), f
    return best_v


def optimize_v(panel: PanelDataset, spec: StudySpec) -> PredictorWeights:
    pm = build_predictor_matrices(panel, spec)
    y1, Y0 = _match_outcomes(panel, spec, pm.donors)
    return PredictorWeights(_choose_v(pm, y1, Y0, spec), names=pm.names)


def fit_synth(panel: PanelDataset, spec: StudySpec) -> SynthFit:
    """Fit a synthetic control for ``spec.treated_unit`` using every other
    unit in ``panel`` as a donor."""
    pm = build_predictor_matrices(panel, spec)
    donors = pm.donors
    if not donors:
        raise WindowError("no donors in panel")
    y1m, Y0m = _match_outcomes(panel, spec, donors)
    v = _choose_v(pm, y1m, Y0m, spec)
    if len(donors) == 1:
        w = np.ones(1)
    else:
        w = _solve(pm.X1, pm.X0, v, spec.solver_tol, spec.max_iter)

    ti = panel.unit_index(spec.treated_unit)
    di = [panel.unit_index(u) for u in donors]
    actual = panel.outcomes[ti].copy()
    synthetic = panel.outcomes[di].T @ w
    gap = actual - synthetic
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(synthetic != 0, actual / synthetic, np.nan)
    years = panel.periods
    pre = years <= spec.t0
    balance = BalanceTable(
        tuple(
            BalanceRow(n, float(pm.raw1[k]), float(pm.raw0[k] @ w))
            for k, n in enumerate(pm.names)
        )
    )
    return SynthFit(
        weights=SimplexWeights(w, donors=donors),
        v=PredictorWeights(v, names=pm.names),
        years=years,
        actual=actual,
        synthetic_path=synthetic,
        gap_path=gap,
        ratio_path=ratio,
        rmspe_pre=rmspe(gap[pre]),
        rmspe_post=rmspe(gap[~pre]),
        balance=balance,
        spec_echo=spec,
        outcome_label=panel.outcome_label,
    )


@dataclass(frozen=True)
class EffectSummary:
    average_ratio: float
    end_ratio: float
    average_gap: float


def effect_summary(fit: SynthFit) -> EffectSummary:
    post = fit.post_mask
    if not post.any():
        raise EmptyWindow("no post-treatment periods")
    if np.any(fit.synthetic_path[post] == 0):
        bad = fit.years[post][fit.synthetic_path[post] == 0]
        raise ZeroSyntheticValue(f"synthetic outcome is zero in {bad.tolist()}")
    ratios = fit.ratio_path[post]
    return EffectSummary(
        average_ratio=float(ratios.mean()),
        end_ratio=float(ratios[-1]),
        average_gap=float(fit.gap_path[post].mean()),
    )


def shift_t0(spec: StudySpec, new_t0: int) -> StudySpec:
    """Move the treatment year, carrying the matching window along with it.

    Outcome-lag years falling after the shifted matching window are dropped
    with a warning.
    """
    new_t0 = int(new_t0)
    if new_t0 == spec.t0:
        return spec
    match_end = None if spec.match_end is None else int(spec.match_end) + (new_t0 - spec.t0)
    last = new_t0 if match_end is None else match_end
    lags = tuple(y for y in spec.special_predictors if y <= last)
    if len(lags) != len(spec.special_predictors):
        warnings.warn(
            f"outcome lags after {last} dropped for t0={new_t0}", PredictorDropped, stacklevel=2
        )
    return replace(spec, t0=new_t0, match_end=match_end, special_predictors=lags)
