"""Factor-model panel simulator and the temporary/structural effect classifier.

Untreated outcomes follow

    Y^N[i, t] = phi[t] + Z[i] . theta[t] + pi[t] . mu[i] + eps[i, t]

and the treated unit (row 0) receives ``lambda_path`` after ``t0`` periods.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, HorizonTooLong
from .panel import PanelDataset

NOISE = ("gaussian", "uniform", "student_t")


@dataclass(frozen=True, eq=False)
class FactorDGP:
    """Generative parameters. ``t0`` counts pre-treatment periods, so the
    treated unit's outcomes are shifted from period index ``t0`` onward."""

    n_units: int
    n_periods: int
    t0: int
    phi: np.ndarray
    theta: np.ndarray
    pi: np.ndarray
    mu: np.ndarray
    Z: np.ndarray
    sigma_eps: float
    lambda_path: np.ndarray
    noise: str = "gaussian"
    df: float = 5.0
    seed: int = 0
    start_year: int = 1
    unit_names: tuple | None = None

    def __post_init__(self):
        arr = {k: np.atleast_1d(np.asarray(getattr(self, k), dtype=float)) for k in
               ("phi", "theta", "pi", "mu", "Z", "lambda_path")}
        for k, v in arr.items():
            object.__setattr__(self, k, v)
        N, T = self.n_units, self.n_periods
        if N < 2 or T < 3 or not 2 <= self.t0 < T:
            raise DimensionMismatch(f"need n_units >= 2, n_periods >= 3, 2 <= t0 < n_periods")
        if self.sigma_eps < 0:
            raise ValueError("sigma_eps must be nonnegative")
        if self.noise not in NOISE:
            raise ValueError(f"noise must be one of {NOISE}")
        if self.noise == "student_t" and not self.df > 2:
            raise ValueError("student_t noise needs df > 2")
        checks = [
            (self.phi.shape == (T,), f"phi shape {self.phi.shape} != ({T},)"),
            (self.pi.ndim == 2 and self.pi.shape[0] == T, f"pi must be ({T}, F)"),
            (self.mu.ndim == 2 and self.mu.shape[0] == N, f"mu must be ({N}, F)"),
            (self.Z.ndim == 2 and self.Z.shape[0] == N, f"Z must be ({N}, r)"),
            (self.theta.ndim == 2 and self.theta.shape[0] == T, f"theta must be ({T}, r)"),
            (self.lambda_path.shape == (T - self.t0,), f"lambda_path must have length {T - self.t0}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise DimensionMismatch(msg)
        if self.pi.shape[1] != self.mu.shape[1]:
            raise DimensionMismatch(f"pi has {self.pi.shape[1]} factors, mu has {self.mu.shape[1]}")
        if self.theta.shape[1] != self.Z.shape[1]:
            raise DimensionMismatch(f"theta has {self.theta.shape[1]} covariates, Z has {self.Z.shape[1]}")
        if self.unit_names is not None and len(self.unit_names) != N:
            raise DimensionMismatch("unit_names length != n_units")

    @classmethod
    def random(cls, n_units, n_periods, t0, *, n_factors=2, n_covariates=2, sigma_eps=1.0,
               lambda_path=None, effect=0.0, factor_ar=0.8, factor_scale=2.0, trend=0.1,
               treated_in_hull=0, seed=0, **kw):
        """Draw phi, theta, pi, mu and Z from ``seed``.

        Factors follow stationary AR(1) processes with coefficient
        ``factor_ar`` and marginal SD ``factor_scale``; loadings and
        covariates are i.i.d. standard normal, so units are exchangeable.
        ``effect`` is a constant post-period effect used when no
        ``lambda_path`` is given. With ``treated_in_hull = k > 0`` the treated
        unit's loadings and covariates are a Dirichlet mix of ``k`` randomly
        chosen donors, so a perfect synthetic control exists up to noise.
        """
        rng = np.random.default_rng([seed, 0])
        T = n_periods
        phi = trend * np.arange(T) + rng.normal(0.0, 0.5, T)
        innov = np.sqrt(1.0 - factor_ar**2) * factor_scale
        pi = np.empty((T, n_factors))
        pi[0] = rng.normal(0.0, factor_scale, n_factors)
        for t in range(1, T):
            pi[t] = factor_ar * pi[t - 1] + rng.normal(0.0, innov, n_factors)
        theta = rng.normal(0.0, 0.5, (T, n_covariates))
        mu = rng.normal(0.0, 1.0, (n_units, n_factors))
        Z = rng.normal(0.0, 1.0, (n_units, n_covariates))
        if treated_in_hull:
            k = min(int(treated_in_hull), n_units - 1)
            pick = 1 + rng.choice(n_units - 1, size=k, replace=False)
            mix = rng.dirichlet(np.ones(k))
            mu[0] = mix @ mu[pick]
            Z[0] = mix @ Z[pick]
        if lambda_path is None:
            lambda_path = np.full(T - t0, float(effect))
        return cls(n_units=n_units, n_periods=T, t0=t0, phi=phi, theta=theta, pi=pi, mu=mu, Z=Z,
                   sigma_eps=sigma_eps, lambda_path=lambda_path, seed=seed, **kw)

    @property
    def names(self):
        if self.unit_names is not None:
            return tuple(self.unit_names)
        width = len(str(self.n_units - 1))
        return ("treated",) + tuple(f"donor{i:0{width}d}" for i in range(1, self.n_units))

    @property
    def years(self):
        return np.arange(self.start_year, self.start_year + self.n_periods)

    @property
    def t0_year(self):
        """Last pre-treatment year, the ``t0`` of a StudySpec."""
        return self.start_year + self.t0 - 1


@dataclass(frozen=True, eq=False)
class SimulatedPanel:
    panel: PanelDataset
    untreated: np.ndarray
    true_effects: np.ndarray
    dgp_echo: FactorDGP
    eps: np.ndarray = field(repr=False, default=None)

    @property
    def treated_unit(self):
        return self.panel.units[0]

    def effects_json(self):
        years = self.dgp_echo.years[self.dgp_echo.t0:]
        return json.dumps(
            {
                "treated_unit": self.treated_unit,
                "t0": self.dgp_echo.t0_year,
                "seed": self.dgp_echo.seed,
                "sigma_eps": self.dgp_echo.sigma_eps,
                "true_effects": {str(int(y)): float(x) for y, x in zip(years, self.true_effects)},
            },
            indent=2,
            sort_keys=True,
        ) + "\n"


def _noise(dgp: FactorDGP, rng, shape):
    if dgp.sigma_eps == 0:
        return np.zeros(shape)
    if dgp.noise == "gaussian":
        return rng.normal(0.0, dgp.sigma_eps, shape)
    if dgp.noise == "uniform":
        h = np.sqrt(3.0) * dgp.sigma_eps
        return rng.uniform(-h, h, shape)
    scale = dgp.sigma_eps / np.sqrt(dgp.df / (dgp.df - 2.0))
    return rng.standard_t(dgp.df, shape) * scale


def generate_panel(dgp: FactorDGP) -> SimulatedPanel:
    """Draw one panel. Same ``dgp`` (including seed) gives identical output."""
    rng = np.random.default_rng([dgp.seed, 1])
    N, T = dgp.n_units, dgp.n_periods
    eps = _noise(dgp, rng, (N, T))
    untreated = dgp.phi[None, :] + dgp.Z @ dgp.theta.T + dgp.mu @ dgp.pi.T + eps
    Y = untreated.copy()
    Y[0, dgp.t0:] += dgp.lambda_path
    covariates = {f"z{k + 1}": np.repeat(dgp.Z[:, k:k + 1], T, axis=1) for k in range(dgp.Z.shape[1])}
    panel = PanelDataset(units=dgp.names, periods=dgp.years, outcomes=Y, covariates=covariates)
    return SimulatedPanel(panel=panel, untreated=untreated, true_effects=dgp.lambda_path.copy(),
                          dgp_echo=dgp, eps=eps)


def classify_effect(gap_path, t0: int, horizon: int, band_multiple: float = 3.0) -> str:
    """Label a gap path ``none``, ``temporary`` or ``structural``.

    ``t0`` is the number of pre-treatment entries in ``gap_path``. The noise
    band is ``band_multiple`` x the SD of the pre-treatment gaps around their
    mean. The effect is structural when the mean of the last ``horizon``
    post gaps lies outside the band, temporary when it lies inside but some
    earlier post gap exceeds the band, and none otherwise.
    """
    g = np.asarray(gap_path, dtype=float)
    pre, post = g[:t0], g[t0:]
    if t0 < 2 or post.size == 0:
        raise ValueError("need at least 2 pre-treatment and 1 post-treatment gap")
    if not 1 <= horizon <= post.size:
        raise HorizonTooLong(f"horizon {horizon} exceeds {post.size} post periods")
    center = pre.mean()
    band = band_multiple * pre.std(ddof=1)
    dev = post - center
    if abs(dev[-horizon:].mean()) > band:
        return "structural"
    if np.any(np.abs(dev[:-horizon]) > band):
        return "temporary"
    return "none"
