import json

import numpy as np
import pytest

from synthbreak import FactorDGP, StudySpec, classify_effect, fit_synth, generate_panel
from synthbreak.errors import DimensionMismatch, HorizonTooLong


def _symmetric_dgp(**kw):
    T, N = 12, 5
    base = dict(n_units=N, n_periods=T, t0=8, phi=np.linspace(0, 1, T), theta=np.ones((T, 2)),
                pi=np.ones((T, 2)), mu=np.tile([0.3, -0.2], (N, 1)), Z=np.tile([1.0, 2.0], (N, 1)),
                sigma_eps=0.0, lambda_path=np.zeros(4))
    base.update(kw)
    return FactorDGP(**base)


def test_symmetric_units_identical():
    sp = generate_panel(_symmetric_dgp())
    Y = sp.panel.outcomes
    assert np.all(Y == Y[0])


def test_zero_effect_equals_untreated():
    sp = generate_panel(FactorDGP.random(6, 15, 10, seed=3))
    np.testing.assert_array_equal(sp.panel.outcomes, sp.untreated)


def test_effect_added_after_t0():
    lam = np.arange(5.0)
    sp = generate_panel(FactorDGP.random(6, 15, 10, lambda_path=lam, seed=3))
    diff = sp.panel.outcomes - sp.untreated
    np.testing.assert_array_equal(diff[0, 10:], lam)
    assert np.all(diff[0, :10] == 0) and np.all(diff[1:] == 0)
    eff = json.loads(sp.effects_json())
    assert eff["t0"] == 10 and eff["true_effects"]["15"] == 4.0


def test_seed_determinism():
    a = generate_panel(FactorDGP.random(8, 20, 12, seed=9, noise="student_t"))
    b = generate_panel(FactorDGP.random(8, 20, 12, seed=9, noise="student_t"))
    assert a.panel.outcomes.tobytes() == b.panel.outcomes.tobytes()
    c = generate_panel(FactorDGP.random(8, 20, 12, seed=10))
    assert not np.array_equal(a.panel.outcomes, c.panel.outcomes)


@pytest.mark.parametrize("noise", ["gaussian", "uniform", "student_t"])
def test_noise_mean_zero_and_scaled(noise):
    means, sds = [], []
    for seed in range(1000):
        sp = generate_panel(FactorDGP.random(5, 8, 4, seed=seed, noise=noise, sigma_eps=2.0))
        means.append(sp.eps.mean())
        sds.append(sp.eps.std())
    se = 2.0 / np.sqrt(40 * 1000)
    assert abs(np.mean(means)) <= 4 * se
    assert np.mean(sds) == pytest.approx(2.0, rel=0.08)


def test_dimension_checks():
    with pytest.raises(DimensionMismatch):
        _symmetric_dgp(lambda_path=np.zeros(3))
    with pytest.raises(DimensionMismatch):
        _symmetric_dgp(mu=np.ones((5, 3)))
    with pytest.raises(DimensionMismatch):
        _symmetric_dgp(theta=np.ones((12, 3)))
    with pytest.raises(DimensionMismatch):
        _symmetric_dgp(phi=np.ones(11))
    with pytest.raises(ValueError):
        _symmetric_dgp(sigma_eps=-1.0)


def test_zero_noise_in_hull_recovers_zero_gap():
    gaps = []
    for sigma in (1.0, 0.1, 0.0):
        dgp = FactorDGP.random(21, 40, 30, seed=2, sigma_eps=sigma, treated_in_hull=3)
        fit = fit_synth(generate_panel(dgp).panel, StudySpec("treated", 30, v_mode="equal"))
        gaps.append(abs(fit.gap_path[fit.post_mask].mean()))
    assert gaps[2] < 1e-6 and gaps[1] < gaps[0]


def test_classify_constructed():
    zero = np.zeros(30)
    assert classify_effect(zero, 20, 5) == "none"
    pulse = np.zeros(30)
    pulse[20:23] = 5.0
    assert classify_effect(pulse, 20, 5) == "temporary"
    step = np.zeros(30)
    step[20:] = 5.0
    assert classify_effect(step, 20, 5) == "structural"
    rng = np.random.default_rng(0)
    noisy = rng.normal(size=30)
    assert classify_effect(noisy, 20, 5) == "none"
    with pytest.raises(HorizonTooLong):
        classify_effect(zero, 20, 11)
