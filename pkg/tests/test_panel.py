import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from synthbreak import (
    ExclusionRules,
    PanelDataset,
    PanelSchema,
    filter_donors,
    load_conflicts,
    load_panel,
    restrict_window,
    write_panel,
)
from synthbreak.errors import (
    DuplicateCell,
    EmptyDonorPool,
    EmptyWindow,
    MalformedRow,
    NonNumericValue,
    PanelInvariantError,
    TreatedUnitExcluded,
    UnbalancedPanel,
    UnknownUnit,
)
from synthbreak.panel import write_conflicts

from conftest import DONOR_POOL_53, make_panel, write_donor_pool_fixture

MINIMAL = "unit,year,outcome\nA,2000,1\nA,2001,2\nA,2002,3\nB,2000,4\nB,2001,5\nB,2002,6\n"


def test_minimal_panel():
    p = load_panel(io.StringIO(MINIMAL))
    assert p.units == ("A", "B")
    assert p.outcomes.size == 6
    assert p.periods.tolist() == [2000, 2001, 2002]
    np.testing.assert_array_equal(p.series("B"), [4, 5, 6])


def test_missing_cell_named():
    text = MINIMAL.replace("B,2001,5\n", "")
    with pytest.raises(UnbalancedPanel) as exc:
        load_panel(io.StringIO(text))
    assert exc.value.missing == [("B", 2001)]
    assert "(B, 2001)" in str(exc.value)


def test_empty_outcome_counts_as_missing():
    with pytest.raises(UnbalancedPanel):
        load_panel(io.StringIO(MINIMAL.replace("A,2002,3", "A,2002,")))


@pytest.mark.parametrize(
    "text, err",
    [
        (MINIMAL + "A,2000,9\n", DuplicateCell),
        (MINIMAL.replace("B,2001,5", "B,2001,abc"), NonNumericValue),
        (MINIMAL.replace("B,2001,5", "B,2001,inf"), NonNumericValue),
        (MINIMAL.replace("B,2001,5", "B,2001.5,5"), NonNumericValue),
        (MINIMAL.replace("B,2001,5", "B,2001"), MalformedRow),
        ("unit,year\nA,2000\n", MalformedRow),
    ],
)
def test_bad_rows(text, err):
    with pytest.raises(err):
        load_panel(io.StringIO(text))


def test_malformed_row_reports_line():
    with pytest.raises(MalformedRow) as exc:
        load_panel(io.StringIO(MINIMAL.replace("B,2001,5", "B,2001")))
    assert exc.value.line == 6


def test_donor_pool_fixture_cell_count(tmp_path):
    path = tmp_path / "pool.csv"
    rows = write_donor_pool_fixture(path)
    p = load_panel(path, PanelSchema(covariates=("pop",)))
    assert rows == 53 * 67
    assert p.outcomes.size == rows == 3551
    assert p.units == DONOR_POOL_53
    assert (p.periods[0], p.periods[-1]) == (1950, 2016)
    assert "Côte d'Ivoire" in p.units


def test_covariates_may_be_missing(tmp_path):
    text = "unit,year,outcome,pop\nA,2000,1,\nA,2001,2,3\nA,2002,2,3\nB,2000,4,5\nB,2001,5,6\nB,2002,5,6\n"
    p = load_panel(io.StringIO(text))
    assert np.isnan(p.covariates["pop"][0, 0])


def test_schema_column_roles():
    text = "country,t,gdp,inv,junk\nA,1,1,2,x\nA,2,2,2,x\nA,3,2,2,x\nB,1,1,3,x\nB,2,5,3,x\nB,3,5,3,x\n"
    p = load_panel(io.StringIO(text), PanelSchema(unit="country", period="t", outcome="gdp", covariates=("inv",)))
    assert p.outcome_label == "gdp"
    assert set(p.covariates) == {"inv"}


def test_invariants_enforced():
    with pytest.raises(PanelInvariantError):
        PanelDataset(units=("a", "a"), periods=np.arange(3), outcomes=np.zeros((2, 3)))
    with pytest.raises(PanelInvariantError):
        PanelDataset(units=("a", "b"), periods=np.array([1, 3, 2]), outcomes=np.zeros((2, 3)))
    with pytest.raises(UnbalancedPanel):
        PanelDataset(units=("a", "b"), periods=np.arange(3), outcomes=np.full((2, 3), np.nan))
    with pytest.raises(PanelInvariantError):
        PanelDataset(units=("a", "b"), periods=np.arange(3), outcomes=np.zeros((2, 3)),
                     conflict_episodes={"a": ((10, 12),)})
    p = make_panel(np.ones((2, 3)))
    with pytest.raises(ValueError):
        p.outcomes[0, 0] = 5.0
    with pytest.raises(UnknownUnit):
        p.unit_index("nobody")


def _panel_with_conflicts():
    Y = np.arange(5 * 67, dtype=float).reshape(5, 67)
    conflicts = {"d1": ((1978, 1982),), "d3": ((1940, 1950),), "d4": ((2016, 2020),), "T": ((1979, 1988),)}
    return PanelDataset(
        units=("T", "d1", "d2", "d3", "d4"), periods=np.arange(1950, 2017), outcomes=Y,
        conflict_episodes=conflicts,
    )


def test_filter_identity():
    p = _panel_with_conflicts()
    assert filter_donors(p, ExclusionRules(), "T") is p


def test_filter_conflict_overlap():
    p = _panel_with_conflicts()
    rules = ExclusionRules(drop_units_with_conflict_overlapping=(1950, 2016))
    out = filter_donors(p, rules, "T")
    # closed-interval overlap check done by hand: d1, d3 (ends 1950) and d4 (starts 2016) overlap
    expected = {u for u in p.units if u == "T" or not any(s <= 2016 and e >= 1950 for s, e in p.conflict_episodes.get(u, ()))}
    assert set(out.units) == expected == {"T", "d2"}
    assert out.units[0] == "T"


def test_filter_five_donors_two_conflicts():
    Y = np.ones((6, 10)) + np.arange(6)[:, None]
    p = PanelDataset(units=("T", "a", "b", "c", "d", "e"), periods=np.arange(1970, 1980), outcomes=Y,
                     conflict_episodes={"b": ((1975, 1976),), "e": ((1972, 1974),), "c": ((1970, 1972),)})
    out = filter_donors(p, ExclusionRules(drop_units_with_conflict_overlapping=(1974, 1979)), "T")
    assert set(out.units) - {"T"} == {"a", "b", "c", "d", "e"} - {"b", "e"}


def test_filter_drop_then_keep():
    p = _panel_with_conflicts()
    out = filter_donors(p, ExclusionRules(drop_units=("d1",), keep_units=("T", "d2", "d3")), "T")
    assert out.units == ("T", "d2", "d3")
    with pytest.raises(TreatedUnitExcluded):
        filter_donors(p, ExclusionRules(drop_units=("T",)), "T")
    with pytest.raises(TreatedUnitExcluded):
        filter_donors(p, ExclusionRules(keep_units=("d2",)), "T")
    with pytest.raises(EmptyDonorPool):
        filter_donors(p, ExclusionRules(keep_units=("T",)), "T")
    with pytest.raises(UnknownUnit):
        filter_donors(p, ExclusionRules(), "nobody")


def test_restrict_window():
    p = _panel_with_conflicts()
    assert restrict_window(p, 1950, 2016) is p
    q = restrict_window(p, 1955, 2016)
    assert (q.periods[0], q.periods[-1]) == (1955, 2016)
    np.testing.assert_array_equal(q.outcomes, p.outcomes[:, 5:])
    assert "d3" not in q.conflict_episodes
    with pytest.raises(EmptyWindow):
        restrict_window(p, 2050, 2060)


def test_conflict_file(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("unit,start_year,end_year\nA,1978,1982\nA,1990,1991\nB,1960,1961\n")
    eps = load_conflicts(path)
    assert eps["A"] == ((1978, 1982), (1990, 1991))
    # episodes outside the panel's years are dropped on load
    p = load_panel(io.StringIO(MINIMAL), conflicts=path)
    assert p.conflict_episodes == {}
    path.write_text("unit,start_year,end_year\nA,2001,2001\n")
    p = load_panel(io.StringIO(MINIMAL), conflicts=path)
    assert p.conflict_episodes == {"A": ((2001, 2001),)}


names = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc")), min_size=1, max_size=8).filter(
    lambda s: s.strip() == s and s != ""
)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(names, min_size=2, max_size=5, unique=True),
    st.integers(3, 6),
    st.integers(1900, 2000),
    st.integers(0, 2**32 - 1),
)
def test_write_load_round_trip(tmp_path_factory, units, T, start, seed):
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(len(units), T)) * 10.0 ** rng.integers(-3, 6)
    cov = rng.normal(size=(len(units), T))
    cov[0, 0] = np.nan
    p = PanelDataset(units=tuple(units), periods=np.arange(start, start + T), outcomes=Y,
                     covariates={"x": cov}, conflict_episodes={units[1]: ((start, start + 1),)})
    d = tmp_path_factory.mktemp("rt")
    write_panel(p, d / "p.csv")
    write_conflicts(p, d / "c.csv")
    q = load_panel(d / "p.csv", conflicts=d / "c.csv")
    assert q.equals(p)
