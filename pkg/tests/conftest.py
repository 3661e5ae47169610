import numpy as np
import pytest

from synthbreak import PanelDataset

DONOR_POOL_53 = (
    "Albania", "Australia", "Austria", "Belgium", "Botswana", "Bulgaria", "Canada", "Cape Verde",
    "Costa Rica", "Côte d'Ivoire", "Denmark", "Estonia", "Finland", "France", "Germany", "Greece",
    "Honduras", "Hong Kong", "Iceland", "Ireland", "Italy", "Japan", "Luxembourg", "Madagascar",
    "Malta", "Mauritius", "Mongolia", "Namibia", "New Zealand", "Norway", "Poland", "Portugal",
    "Puerto Rico", "Saudi Arabia", "Senegal", "Singapore", "Slovakia", "Slovenia", "South Africa",
    "South Korea", "Spain", "Sweden", "Switzerland", "Thailand", "Trinidad and Tobago", "Tunisia",
    "Ukraine", "United Kingdom", "United States", "Uruguay", "Venezuela", "Zambia", "Zimbabwe",
)

_ACCEPTANCE = []


def record_acceptance(number, title, passed, detail=""):
    _ACCEPTANCE.append((number, title, None if passed is None else bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        terminalreporter.write_line(f"{status}  [{number}] {title}: {detail}")


def make_panel(Y, names=None, start=2000, covariates=None):
    Y = np.asarray(Y, dtype=float)
    names = names or tuple(f"u{i}" for i in range(Y.shape[0]))
    periods = np.arange(start, start + Y.shape[1])
    return PanelDataset(units=tuple(names), periods=periods, outcomes=Y, covariates=covariates or {})


@pytest.fixture
def small_panel():
    rng = np.random.default_rng(5)
    Y = np.cumsum(rng.normal(0.5, 1.0, (6, 20)), axis=1) + 50
    return make_panel(Y, names=("T", "a", "b", "c", "d", "e"))


def write_donor_pool_fixture(path, with_treated=False):
    """Long-format CSV with the 53-country donor list over 1950-2016.

    Outcomes are seeded synthetic values; only the shape mirrors the real data.
    """
    rng = np.random.default_rng(1950)
    names = (("Iran",) if with_treated else ()) + DONOR_POOL_53
    years = range(1950, 2017)
    lines = ["unit,year,outcome,pop"]
    for name in names:
        level = rng.uniform(1000, 8000)
        for y in years:
            level *= 1.0 + rng.normal(0.02, 0.03)
            field = f'"{name}"' if "," in name else name
            lines.append(f"{field},{y},{level!r},{rng.uniform(1, 100)!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(lines) - 1
