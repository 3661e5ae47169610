"""Study configuration and the batch pipeline behind ``synthbreak run``.

A study config is a TOML file::

    seed = 0
    output_dir = "out"            # relative to the config file

    [data]
    panel = "panel.csv"
    conflicts = "conflicts.csv"   # optional
    unit = "unit"                 # column roles, all optional
    period = "year"
    outcome = "gdp_pc"
    covariates = ["inv", "school"]

    [study]
    treated_unit = "Iran"
    t0 = 1978
    predictors = ["inv", {name = "school", start = 1960, end = 1970}]
    special_predictors = [1960, 1970]
    v_mode = "nested"             # equal | nested | outcome_lags_only
    match_end = 1978
    solver_tol = 1e-10
    max_iter = 1000
    n_starts = 10

    [exclusions]
    drop_units_with_conflict_overlapping = [1950, 2016]
    drop_units = []
    # keep_units = [...]

    [[windows]]                   # default: a single "full" window
    name = "full"
    [[windows]]
    name = "from1955"
    start = 1955

    [inference]
    placebos = true
    filters = [2, 4, 5]
    alpha = 0.05
    grid_points = 801
    in_time = [1970, 1981]

    [breaks]
    enabled = true
    model = "both"
    trimming = 0.15
    # max_lags = 4

    [diagnostics]
    enabled = true
    ks_reference = "first_digit"
    ks_method = "exact"

Every analysis in a window draws its randomness from
``SeedSequence([seed, window_index])`` so that results never depend on the
order or concurrency in which windows and placebos are processed.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import shutil
import tempfile
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .breaks import MODELS, zivot_andrews
from .diagnostics import fit_margin, ks_benford, weight_ecdf
from .errors import ConfigError, SynthbreakError
from .inference import (
    confidence_band,
    default_grid,
    in_space_placebos,
    in_time_placebo,
    pvalue_series,
    pvalue_table_csv,
    rmspe_ratio_test,
)
from .panel import ExclusionRules, PanelSchema, filter_donors, load_panel, restrict_window
from .scm import Predictor, StudySpec, effect_summary, fit_synth, validate_spec

log = logging.getLogger("synthbreak")

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

MANIFEST_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class Window:
    name: str
    start: int | None = None
    end: int | None = None


@dataclass(frozen=True)
class StudyConfig:
    panel_path: Path
    spec: StudySpec
    output_dir: Path
    conflicts_path: Path | None = None
    schema: PanelSchema = field(default_factory=PanelSchema)
    exclusions: ExclusionRules = field(default_factory=ExclusionRules)
    windows: tuple = (Window("full"),)
    seed: int = 0
    placebos: bool = True
    filters: tuple = (2.0, 4.0, 5.0)
    alpha: float = 0.05
    grid_points: int = 801
    in_time: tuple = ()
    breaks: bool = True
    break_model: str = "both"
    trimming: float = 0.15
    max_lags: int | None = None
    diagnostics: bool = True
    ks_reference: str = "first_digit"
    ks_method: str = "exact"

    def canonical(self) -> dict:
        """Resolved settings as plain JSON data; hashed into the manifest."""
        return {
            "panel": self.panel_path.name,
            "conflicts": None if self.conflicts_path is None else self.conflicts_path.name,
            "schema": {
                "unit": self.schema.unit,
                "period": self.schema.period,
                "outcome": self.schema.outcome,
                "covariates": None if self.schema.covariates is None else list(self.schema.covariates),
            },
            "study": self.spec.to_dict(),
            "exclusions": {
                "drop_units_with_conflict_overlapping": self.exclusions.drop_units_with_conflict_overlapping,
                "drop_units": list(self.exclusions.drop_units),
                "keep_units": None if self.exclusions.keep_units is None else list(self.exclusions.keep_units),
            },
            "windows": [{"name": w.name, "start": w.start, "end": w.end} for w in self.windows],
            "seed": self.seed,
            "inference": {
                "placebos": self.placebos,
                "filters": list(self.filters),
                "alpha": self.alpha,
                "grid_points": self.grid_points,
                "in_time": list(self.in_time),
            },
            "breaks": {
                "enabled": self.breaks,
                "model": self.break_model,
                "trimming": self.trimming,
                "max_lags": self.max_lags,
            },
            "diagnostics": {
                "enabled": self.diagnostics,
                "ks_reference": self.ks_reference,
                "ks_method": self.ks_method,
            },
        }


def _table(raw, key):
    value = raw.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{key}] must be a table")
    return value


def _unknown(table, allowed, where):
    extra = set(table) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(extra))}")


def _predictor(item):
    if isinstance(item, str):
        return Predictor(item)
    if isinstance(item, dict) and "name" in item:
        _unknown(item, ("name", "start", "end"), "predictor")
        return Predictor(str(item["name"]), item.get("start"), item.get("end"))
    raise ConfigError(f"predictor must be a name or {{name, start, end}} table, got {item!r}")


def parse_config(raw: dict, base_dir: Path = Path(".")) -> StudyConfig:
    """Build a :class:`StudyConfig` from parsed TOML data.

    Relative paths resolve against ``base_dir`` (the config file's folder).
    """
    _unknown(raw, ("seed", "output_dir", "data", "study", "exclusions", "windows", "inference",
                   "breaks", "diagnostics"), "config")
    data, study = _table(raw, "data"), _table(raw, "study")
    excl, inf = _table(raw, "exclusions"), _table(raw, "inference")
    brk, diag = _table(raw, "breaks"), _table(raw, "diagnostics")
    _unknown(data, ("panel", "conflicts", "unit", "period", "outcome", "covariates"), "[data]")
    _unknown(study, ("treated_unit", "t0", "predictors", "special_predictors", "v_mode", "match_end",
                     "solver_tol", "max_iter", "n_starts"), "[study]")
    _unknown(excl, ("drop_units_with_conflict_overlapping", "drop_units", "keep_units"), "[exclusions]")
    _unknown(inf, ("placebos", "filters", "alpha", "grid_points", "in_time"), "[inference]")
    _unknown(brk, ("enabled", "model", "trimming", "max_lags"), "[breaks]")
    _unknown(diag, ("enabled", "ks_reference", "ks_method"), "[diagnostics]")

    for key, table in (("panel", data), ("treated_unit", study), ("t0", study)):
        if key not in table:
            raise ConfigError(f"missing required key {key!r}")
    base_dir = Path(base_dir)
    seed = int(raw.get("seed", 0))
    try:
        spec = StudySpec(
            treated_unit=study["treated_unit"],
            t0=int(study["t0"]),
            predictors=tuple(_predictor(p) for p in study.get("predictors", ())),
            special_predictors=tuple(study.get("special_predictors", ())),
            v_mode=study.get("v_mode", "nested"),
            solver_tol=float(study.get("solver_tol", 1e-10)),
            max_iter=int(study.get("max_iter", 1000)),
            n_starts=int(study.get("n_starts", 10)),
            match_end=study.get("match_end"),
            seed=seed,
        )
        conflict_window = excl.get("drop_units_with_conflict_overlapping")
        rules = ExclusionRules(
            drop_units_with_conflict_overlapping=None if conflict_window is None else tuple(conflict_window),
            drop_units=tuple(excl.get("drop_units", ())),
            keep_units=None if excl.get("keep_units") is None else tuple(excl["keep_units"]),
        )
    except (TypeError, ValueError, IndexError) as exc:
        raise ConfigError(str(exc)) from None

    windows = []
    for w in raw.get("windows", [{"name": "full"}]):
        if not isinstance(w, dict) or "name" not in w:
            raise ConfigError("each [[windows]] entry needs a name")
        _unknown(w, ("name", "start", "end"), "[[windows]]")
        name = str(w["name"])
        if not name or name in {x.name for x in windows} or any(c in name for c in "/\\") or name.startswith("."):
            raise ConfigError(f"invalid or duplicate window name {name!r}")
        windows.append(Window(name, w.get("start"), w.get("end")))
    if not windows:
        raise ConfigError("at least one window is required")

    filters = tuple(float(m) for m in inf.get("filters", (2, 4, 5)))
    if any(not m > 1 for m in filters):
        raise ConfigError("RMSPE filter multiples must exceed 1")
    alpha = float(inf.get("alpha", 0.05))
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    grid_points = int(inf.get("grid_points", 801))
    if grid_points < 3 or grid_points % 2 == 0:
        raise ConfigError("grid_points must be an odd integer >= 3")
    model = brk.get("model", "both")
    if model not in MODELS:
        raise ConfigError(f"breaks.model must be one of {tuple(MODELS)}")
    covs = data.get("covariates")

    return StudyConfig(
        panel_path=base_dir / data["panel"],
        conflicts_path=None if data.get("conflicts") is None else base_dir / data["conflicts"],
        schema=PanelSchema(
            unit=data.get("unit", "unit"),
            period=data.get("period", "year"),
            outcome=data.get("outcome", "outcome"),
            covariates=None if covs is None else tuple(covs),
        ),
        spec=spec,
        exclusions=rules,
        windows=tuple(windows),
        output_dir=base_dir / raw.get("output_dir", "out"),
        seed=seed,
        placebos=bool(inf.get("placebos", True)),
        filters=filters,
        alpha=alpha,
        grid_points=grid_points,
        in_time=tuple(int(y) for y in inf.get("in_time", ())),
        breaks=bool(brk.get("enabled", True)),
        break_model=model,
        trimming=float(brk.get("trimming", 0.15)),
        max_lags=None if brk.get("max_lags") is None else int(brk["max_lags"]),
        diagnostics=bool(diag.get("enabled", True)),
        ks_reference=diag.get("ks_reference", "first_digit"),
        ks_method=diag.get("ks_method", "exact"),
    )


def load_config(path) -> StudyConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw, path.parent)


def window_seed(seed: int, index: int) -> int:
    """Sub-seed for window ``index``; a pure function of (seed, index)."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint32)[0])


# ---------------------------------------------------------------- artifacts

def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _error(exc):
    return {"error": f"{type(exc).__name__}: {exc}"}


class _Writer:
    def __init__(self, root: Path):
        self.root = root
        self.files = []

    def text(self, rel: str, content: str):
        dest = self.root / rel
        dest.parent.mkdir(parents=True, exist_ok=True)
        tmp = dest.with_name(dest.name + ".tmp")
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
        os.replace(tmp, dest)
        self.files.append(rel)

    def json(self, rel: str, obj):
        self.text(rel, _dumps(obj))


def _run_window(panel, cfg: StudyConfig, window: Window, index: int, out: _Writer, threads: int):
    start = panel.periods[0] if window.start is None else int(window.start)
    end = panel.periods[-1] if window.end is None else int(window.end)
    sub = restrict_window(panel, start, end)
    sub_seed = window_seed(cfg.seed, index)
    # outcome lags that predate a restricted window go with the dropped years
    lags = tuple(y for y in cfg.spec.special_predictors if y >= sub.periods[0])
    dropped = [y for y in cfg.spec.special_predictors if y < sub.periods[0]]
    if dropped:
        log.info("window %s: outcome lags %s fall before the window and are dropped", window.name, dropped)
    spec = replace(cfg.spec, seed=sub_seed, special_predictors=lags)
    validate_spec(sub, spec)
    d = window.name
    log.info("window %s: %d units, %d-%d", d, sub.n_units, sub.periods[0], sub.periods[-1])

    fit = fit_synth(sub, spec)
    out.json(f"{d}/fit.json", fit.to_dict())
    out.text(f"{d}/paths.csv", fit.paths_csv())
    out.text(f"{d}/balance.csv", fit.balance.to_csv())
    summary = {"rmspe_pre": fit.rmspe_pre, "rmspe_post": fit.rmspe_post,
               "post_pre_ratio": _clean(fit.post_ratio), "seed": sub_seed, "dropped_lags": dropped}
    try:
        es = effect_summary(fit)
        summary.update(average_ratio=es.average_ratio, end_ratio=es.end_ratio, average_gap=es.average_gap)
    except SynthbreakError as exc:
        summary.update(_error(exc))
    try:
        summary["fit_margin_pct"] = fit_margin(fit)
    except SynthbreakError:
        summary["fit_margin_pct"] = None
    out.json(f"{d}/summary.json", summary)

    if cfg.placebos:
        log.info("window %s: in-space placebos", d)
        ps = in_space_placebos(sub, spec, threads=threads, treated_fit=fit)
        out.text(f"{d}/placebos.csv", ps.to_csv(cfg.filters))
        columns = []
        for m in (None, *cfg.filters):
            try:
                columns.append((m, pvalue_series(ps, m)))
            except SynthbreakError:
                columns.append((m, None))
        if columns[0][1] is not None:
            out.text(f"{d}/pvalues.csv", pvalue_table_csv(columns))
        tests = {}
        for m in (None, *cfg.filters):
            key = "unfiltered" if m is None else f"{m:g}x"
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    rt = rmspe_ratio_test(ps, m)
                tests[key] = {"rank": rt.rank, "p_value": rt.p_value, "treated_ratio": rt.treated_ratio,
                              "n_placebos": len(rt.ratios) - 1, "excluded": list(rt.excluded)}
            except SynthbreakError as exc:
                tests[key] = _error(exc)
        out.json(f"{d}/ratio_test.json", {"failed_placebos": ps.failed, "tests": tests})
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                band = confidence_band(sub, spec, alpha=cfg.alpha, placebos=ps,
                                       grid=default_grid(fit, cfg.grid_points))
            out.text(f"{d}/band.csv", band.to_csv())
            out.json(f"{d}/band.json", {"alpha": band.alpha, "truncated": band.truncated,
                                        "empty": band.empty, "warnings": [str(w.message) for w in caught]})
        except SynthbreakError as exc:
            out.json(f"{d}/band.json", {"alpha": cfg.alpha, **_error(exc)})

    for year in cfg.in_time:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                itp = in_time_placebo(sub, spec, year, baseline=fit)
            out.json(f"{d}/in_time/{year}.json", {
                "false_t0": itp.false_t0,
                "rmspe_pre": itp.fit.rmspe_pre,
                "baseline_rmspe_pre": itp.baseline_rmspe_pre,
                "rmspe_pre_ratio": _clean(itp.rmspe_pre_ratio),
                "fit": itp.fit.to_dict(),
            })
            out.text(f"{d}/in_time/{year}_paths.csv", itp.fit.paths_csv())
        except SynthbreakError as exc:
            out.json(f"{d}/in_time/{year}.json", {"false_t0": year, **_error(exc)})

    if cfg.breaks:
        try:
            res = zivot_andrews(sub.series(spec.treated_unit), model=cfg.break_model, trimming=cfg.trimming,
                                max_lags=cfg.max_lags, years=sub.periods)
            out.text(f"{d}/breaks.csv", res.to_csv())
            out.json(f"{d}/breaks.json", res.summary())
        except SynthbreakError as exc:
            out.json(f"{d}/breaks.json", _error(exc))

    if cfg.diagnostics:
        w = fit.weights.w[fit.weights.w > 0]
        out.text(f"{d}/weight_ecdf.csv", weight_ecdf(w).to_csv())
        try:
            ks = ks_benford(w, reference=cfg.ks_reference, method=cfg.ks_method, seed=sub_seed)
            out.json(f"{d}/ks.json", {"d_stat": ks.d_stat, "p_value": ks.p_value, "n": ks.n,
                                      "reference": ks.reference})
        except SynthbreakError as exc:
            out.json(f"{d}/ks.json", _error(exc))


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(root: Path, files, cfg: StudyConfig) -> dict:
    import scipy

    canon = json.dumps(cfg.canonical(), sort_keys=True, separators=(",", ":"))
    return {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "package": "synthbreak",
        "version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "backend": _kernels.BACKEND,
        "seed": cfg.seed,
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
        "panel_sha256": _sha256(cfg.panel_path),
        "artifacts": [
            {"path": rel, "sha256": _sha256(root / rel), "bytes": (root / rel).stat().st_size}
            for rel in sorted(files)
        ],
    }


@dataclass(frozen=True)
class StudyReport:
    output_dir: Path
    manifest: dict

    @property
    def artifacts(self):
        return [a["path"] for a in self.manifest["artifacts"]]


def _is_ours(path: Path) -> bool:
    return not any(path.iterdir()) or (path / MANIFEST_NAME).is_file()


def run_study(cfg: StudyConfig, threads: int = 1) -> StudyReport:
    """Run every window and write all artifacts plus ``manifest.json``.

    Output is staged in a sibling temporary folder and moved into place only
    after every artifact is written, so a failed run leaves no partial output.
    An existing output folder is replaced only if it is empty or holds a
    previous manifest.
    """
    out_dir = Path(cfg.output_dir)
    if out_dir.exists() and (not out_dir.is_dir() or not _is_ours(out_dir)):
        raise ConfigError(f"{out_dir} exists and is not a previous study output")
    if not cfg.panel_path.is_file():
        raise ConfigError(f"panel file not found: {cfg.panel_path}")
    if cfg.conflicts_path is not None and not cfg.conflicts_path.is_file():
        raise ConfigError(f"conflicts file not found: {cfg.conflicts_path}")

    panel = load_panel(cfg.panel_path, cfg.schema, conflicts=cfg.conflicts_path)
    panel = filter_donors(panel, cfg.exclusions, cfg.spec.treated_unit)

    out_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.staging-", dir=out_dir.parent))
    try:
        writer = _Writer(staging)
        for i, window in enumerate(cfg.windows):
            _run_window(panel, cfg, window, i, writer, threads)
        manifest = build_manifest(staging, writer.files, cfg)
        writer.text(MANIFEST_NAME, _dumps(manifest))
        if out_dir.exists():
            old = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.old-", dir=out_dir.parent))
            os.replace(out_dir, old / "prev")
            os.replace(staging, out_dir)
            shutil.rmtree(old, ignore_errors=True)
        else:
            os.replace(staging, out_dir)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    log.info("wrote %d artifacts to %s", len(manifest["artifacts"]), out_dir)
    return StudyReport(out_dir, manifest)
