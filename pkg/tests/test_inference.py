import warnings
from dataclasses import replace

import numpy as np
import pytest

from synthbreak import (
    PlaceboSet,
    StudySpec,
    confidence_band,
    fit_synth,
    in_space_placebos,
    in_time_placebo,
    pvalue_series,
    rmspe_ratio_test,
)
from synthbreak.errors import PredictorAllMissing, AllPlacebosFiltered, GridEdgeWarning, GridTooCoarse, PlaceboExcluded, ZeroPreRMSPE
from synthbreak.inference import pvalue_table_csv
from synthbreak.simulate import FactorDGP, generate_panel

from conftest import make_panel


def _noise_panel(n_units, T=12, seed=0, jump=0.0, t0_index=8):
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(n_units, T)) + 10
    Y[0, t0_index:] += jump
    return make_panel(Y)


def test_three_donor_placebo_count():
    p = _noise_panel(4)
    ps = in_space_placebos(p, StudySpec("u0", 2007, v_mode="equal"))
    assert len(ps.placebo_fits) == 3 and not ps.failed
    # the treated unit is never a placebo donor
    assert all("u0" not in f.donors for f in ps.placebo_fits.values())


def test_rank_one_pvalue():
    p = _noise_panel(66, jump=100.0)
    ps = in_space_placebos(p, StudySpec("u0", 2007, v_mode="equal"))
    pv = pvalue_series(ps)
    assert pv.n_placebos == 65
    np.testing.assert_allclose(pv.p, 1 / 66)
    assert 1 / 66 == pytest.approx(0.01515, abs=1e-5)


def test_zero_gap_pvalue_is_one():
    rng = np.random.default_rng(2)
    Y = rng.normal(size=(6, 12)) + 10
    Y = np.vstack([Y, Y[0]])  # exact twin of the treated unit
    ps = in_space_placebos(make_panel(Y), StudySpec("u0", 2007, v_mode="equal"))
    np.testing.assert_allclose(pvalue_series(ps).p, 1.0)


def test_ratio_rank_arithmetic():
    p = _noise_panel(20, jump=100.0)
    ps = in_space_placebos(p, StudySpec("u0", 2007, v_mode="equal"))
    rt = rmspe_ratio_test(ps)
    assert rt.rank == 1 and rt.p_value == pytest.approx(0.05)
    assert len(rt.ratios) == 20


def test_full_ties_give_p_one():
    p = _noise_panel(6)
    ps = in_space_placebos(p, StudySpec("u0", 2007, v_mode="equal"))
    same = lambda f: replace(f, rmspe_pre=1.0, rmspe_post=2.0)
    tied = PlaceboSet(same(ps.treated_fit), {u: same(f) for u, f in ps.placebo_fits.items()}, ps.t0)
    assert rmspe_ratio_test(tied).p_value == 1.0


def test_identical_series_have_no_usable_predictors():
    Y = np.tile(np.arange(12.0), (5, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(PredictorAllMissing):
            in_space_placebos(make_panel(Y), StudySpec("u0", 2007, v_mode="equal"))


def test_zero_treated_pre_rmspe():
    p = _noise_panel(6)
    ps = in_space_placebos(p, StudySpec("u0", 2007, v_mode="equal"))
    perfect = PlaceboSet(replace(ps.treated_fit, rmspe_pre=0.0), ps.placebo_fits, ps.t0)
    with pytest.raises(ZeroPreRMSPE):
        rmspe_ratio_test(perfect)


def test_zero_pre_rmspe_placebos_excluded():
    p = _noise_panel(6, jump=5.0)
    ps = in_space_placebos(p, StudySpec("u0", 2007, v_mode="equal"))
    fits = dict(ps.placebo_fits)
    fits["u1"] = replace(fits["u1"], rmspe_pre=0.0)
    with pytest.warns(PlaceboExcluded):
        rt = rmspe_ratio_test(PlaceboSet(ps.treated_fit, fits, ps.t0))
    assert rt.excluded == ("u1",) and len(rt.ratios) == 5


def test_filtering():
    p = _noise_panel(10, jump=3.0)
    ps = in_space_placebos(p, StudySpec("u0", 2007, v_mode="equal"))
    cut = ps.treated_fit.rmspe_pre
    for m in (2.0, 5.0):
        surv = ps.survivors(m)
        assert all(f.rmspe_pre <= m * cut for f in surv.values())
        assert len(surv) == sum(f.rmspe_pre <= m * cut for f in ps.placebo_fits.values())
    tiny = replace(ps.treated_fit, rmspe_pre=1e-9)
    with pytest.raises(AllPlacebosFiltered):
        pvalue_series(PlaceboSet(tiny, ps.placebo_fits, ps.t0), 2.0)
    with pytest.raises(ValueError):
        ps.survivors(0.5)


def test_csv_schemas():
    p = _noise_panel(6, jump=3.0)
    ps = in_space_placebos(p, StudySpec("u0", 2007, v_mode="equal"))
    head = ps.to_csv().splitlines()[0]
    assert head == "unit,rmspe_pre,rmspe_post,ratio,filtered_at_2x,filtered_at_4x,filtered_at_5x"
    table = pvalue_table_csv([(None, pvalue_series(ps)), (2.0, None)])
    lines = table.splitlines()
    assert lines[0] == "year,p_unfiltered,p_2x"
    assert len(lines) == 1 + 4 and lines[1].endswith(",")


def test_threads_do_not_change_results():
    dgp = FactorDGP.random(9, 20, 14, seed=4)
    p = generate_panel(dgp).panel
    spec = StudySpec("treated", 14, special_predictors=(2, 8, 14), predictors=("z1",), n_starts=2)
    a = in_space_placebos(p, spec, threads=1)
    b = in_space_placebos(p, spec, threads=4)
    assert list(a.placebo_fits) == list(b.placebo_fits)
    assert a.to_csv() == b.to_csv()


def test_in_time_identity_and_shift():
    p = _noise_panel(8, T=20, jump=4.0, t0_index=14)
    spec = StudySpec("u0", 2013, v_mode="equal")
    base = fit_synth(p, spec)
    same = in_time_placebo(p, spec, 2013, baseline=base)
    assert same.fit is base and same.rmspe_pre_ratio == 1.0
    moved = in_time_placebo(p, spec, 2009, baseline=base)
    assert moved.fit.t0 == 2009 and moved.false_t0 == 2009


def test_in_time_no_effect_gaps_comparable():
    dgp = FactorDGP.random(21, 40, 30, seed=7, treated_in_hull=3)
    p = generate_panel(dgp).panel
    spec = StudySpec("treated", 30, v_mode="equal")
    for false_t0 in (22, 26):
        fit = in_time_placebo(p, spec, false_t0).fit
        post = fit.gap_path[fit.post_mask]
        se = dgp.sigma_eps * np.sqrt((1 + np.sum(fit.weights.w ** 2)) / post.size)
        assert abs(post.mean()) <= 3 * se


def test_band_basics():
    p = _noise_panel(20, jump=6.0)
    spec = StudySpec("u0", 2007, v_mode="equal")
    ps = in_space_placebos(p, spec)
    band = confidence_band(p, spec, alpha=0.1, placebos=ps)
    assert band.years.tolist() == [2008, 2009, 2010, 2011]
    assert np.all(band.gap_lower <= band.gap_upper)
    # a jump of 6 on unit-noise data is excluded from nothing but 0
    assert band.gap_lower[0] > 0
    mean_gap = ps.treated_fit.gap_path[ps.treated_fit.post_mask].mean()
    assert band.gap_lower[0] <= mean_gap <= band.gap_upper[0]
    assert band.to_csv().splitlines()[0] == "year,gap_lower,gap_upper,ratio_lower,ratio_upper"


def test_band_degenerates_as_alpha_grows():
    p = _noise_panel(20, jump=6.0)
    spec = StudySpec("u0", 2007, v_mode="equal")
    ps = in_space_placebos(p, spec)
    grid = np.linspace(-40, 40, 16001)
    widths = [confidence_band(p, spec, alpha=a, placebos=ps, grid=grid).gap_upper[0]
              - confidence_band(p, spec, alpha=a, placebos=ps, grid=grid).gap_lower[0] for a in (0.1, 0.5, 0.94)]
    assert widths[0] >= widths[1] >= widths[2]
    tight = confidence_band(p, spec, alpha=0.94, placebos=ps, grid=grid)
    mean_gap = ps.treated_fit.gap_path[ps.treated_fit.post_mask].mean()
    assert abs(0.5 * (tight.gap_lower[0] + tight.gap_upper[0]) - mean_gap) < 0.05 * widths[0] + 0.01


def test_band_grid_errors():
    p = _noise_panel(20)
    spec = StudySpec("u0", 2007, v_mode="equal")
    ps = in_space_placebos(p, spec)
    with pytest.raises(ValueError):
        confidence_band(p, spec, placebos=ps, grid=np.linspace(0, 1, 5))
    if rmspe_ratio_test(ps).p_value > 0.05:
        with pytest.raises(GridTooCoarse):
            confidence_band(p, spec, placebos=ps, grid=np.array([-1e6, 1e6]))
        with pytest.warns(GridEdgeWarning):
            b = confidence_band(p, spec, placebos=ps, grid=np.linspace(-1e-3, 1e-3, 5))
        assert b.truncated
