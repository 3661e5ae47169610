"""Command-line front end.

Every flag may also be given through an environment variable named
``SYNTHBREAK_<FLAG>`` (e.g. ``SYNTHBREAK_SEED=7``, ``SYNTHBREAK_THREADS=4``);
an explicit flag wins over the environment, which wins over the config file.

Exit codes: 0 success, 1 data/estimation error (one line ``ClassName: message``
on stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .breaks import MODELS, zivot_andrews
from .diagnostics import fit_margin, ks_benford, weight_ecdf
from .errors import ConfigError, SynthbreakError
from .inference import (
    FILTER_MULTIPLES,
    in_space_placebos,
    in_time_placebo,
    pvalue_series,
    pvalue_table_csv,
    rmspe_ratio_test,
)
from .panel import PanelSchema, filter_donors, load_panel, restrict_window, write_panel
from .scm import V_MODES, StudySpec, fit_synth, validate_spec
from .simulate import FactorDGP, generate_panel
from .study import load_config, run_study

ENV_PREFIX = "SYNTHBREAK_"
log = logging.getLogger("synthbreak")


def _env(name, default=None, cast=str):
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if raw is None or raw == "":
        return default
    try:
        return cast(raw)
    except ValueError:
        raise SystemExit(f"synthbreak: error: bad value for {ENV_PREFIX}{name.upper()}: {raw!r}") from None


def _truthy(text):
    return text.strip().lower() not in ("0", "false", "no", "off")


def _common(p: argparse.ArgumentParser, config_required=False):
    p.add_argument("--config", default=_env("config"), required=config_required and _env("config") is None,
                   help="study TOML file")
    p.add_argument("--out", default=_env("out"), help="output directory")
    p.add_argument("--seed", type=int, default=_env("seed", cast=int))
    p.add_argument("--threads", type=int, default=_env("threads", 1, int))
    p.add_argument("--verbose", action="store_true", default=_env("verbose", False, _truthy))


def _study_args(p: argparse.ArgumentParser):
    p.add_argument("--panel", help="panel CSV (overrides the config)")
    p.add_argument("--conflicts", help="conflict-episode CSV")
    p.add_argument("--outcome", help="outcome column")
    p.add_argument("--treated", help="treated unit")
    p.add_argument("--t0", type=int, help="last pre-treatment year")
    p.add_argument("--v-mode", choices=V_MODES)
    p.add_argument("--start", type=int, help="first year of the analysis window")
    p.add_argument("--end", type=int, help="last year of the analysis window")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="synthbreak", description="Synthetic control studies from the command line.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full study: every window, every artifact, manifest")
    _common(p, config_required=True)

    p = sub.add_parser("fit", help="fit the synthetic control")
    _common(p)
    _study_args(p)

    p = sub.add_parser("placebo-space", help="in-space placebos, p-values and ratio test")
    _common(p)
    _study_args(p)
    p.add_argument("--filters", type=float, nargs="*", default=[m for m in FILTER_MULTIPLES if m])

    p = sub.add_parser("placebo-time", help="refit with false treatment years")
    _common(p)
    _study_args(p)
    p.add_argument("--false-t0", type=int, nargs="+", required=True)

    p = sub.add_parser("breaks", help="Zivot-Andrews break search on one unit's outcome")
    _common(p)
    _study_args(p)
    p.add_argument("--unit", help="unit to test (default: treated unit)")
    p.add_argument("--model", choices=tuple(MODELS), default=None)
    p.add_argument("--trimming", type=float, default=None)
    p.add_argument("--max-lags", type=int, default=None)

    p = sub.add_parser("diagnose", help="fit margin, weight ECDF and Benford KS test")
    _common(p)
    _study_args(p)
    p.add_argument("--reference", choices=("first_digit", "significand", "two_sample"), default=None)
    p.add_argument("--method", choices=("exact", "kolmogorov"), default=None)

    p = sub.add_parser("simulate", help="write a factor-model panel and its true effects")
    _common(p)
    p.add_argument("--donors", type=int, default=20)
    p.add_argument("--pre", type=int, default=30)
    p.add_argument("--post", type=int, default=20)
    p.add_argument("--effect", type=float, default=0.0, help="constant post-period effect")
    p.add_argument("--pulse", type=int, default=0, help="apply the effect only for this many periods")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--factors", type=int, default=2)
    p.add_argument("--covariates", type=int, default=2)
    p.add_argument("--noise", choices=("gaussian", "uniform", "student_t"), default="gaussian")
    p.add_argument("--in-hull", type=int, default=3,
                   help="build the treated unit from this many donors (0 = independent draw)")
    p.add_argument("--start-year", type=int, default=1)
    return ap


# ------------------------------------------------------------------ helpers

def _context(args):
    """Resolve (config, panel, spec) for single-study subcommands."""
    cfg = load_config(args.config) if args.config else None
    panel_path = args.panel or (cfg and cfg.panel_path)
    if not panel_path:
        raise ConfigError("no panel: pass --panel or --config")
    schema = cfg.schema if cfg else PanelSchema()
    if args.outcome:
        schema = replace(schema, outcome=args.outcome)
    conflicts = args.conflicts or (cfg and cfg.conflicts_path) or None
    panel = load_panel(panel_path, schema, conflicts=conflicts)

    if cfg:
        spec = cfg.spec
    else:
        if args.treated is None or args.t0 is None:
            raise ConfigError("without --config both --treated and --t0 are required")
        spec = StudySpec(treated_unit=args.treated, t0=args.t0)
    changes = {}
    if args.treated is not None:
        changes["treated_unit"] = args.treated
    if args.t0 is not None:
        changes["t0"] = args.t0
    if args.v_mode is not None:
        changes["v_mode"] = args.v_mode
    if args.seed is not None:
        changes["seed"] = args.seed
    spec = replace(spec, **changes) if changes else spec
    if cfg:
        panel = filter_donors(panel, cfg.exclusions, spec.treated_unit)
    if args.start is not None or args.end is not None:
        panel = restrict_window(panel, args.start if args.start is not None else int(panel.periods[0]),
                                args.end if args.end is not None else int(panel.periods[-1]))
    validate_spec(panel, spec)
    return cfg, panel, spec


def _emit(args, name, text):
    """Write ``text`` to ``<out>/<name>`` or, without --out, to stdout."""
    if args.out:
        dest = Path(args.out) / name
        dest.parent.mkdir(parents=True, exist_ok=True)
        tmp = dest.with_name(dest.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, dest)
        log.info("wrote %s", dest)
    else:
        sys.stdout.write(text)


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


# -------------------------------------------------------------- subcommands

def cmd_run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, spec=replace(cfg.spec, seed=args.seed))
    if args.out:
        cfg = replace(cfg, output_dir=Path(args.out))
    report = run_study(cfg, threads=args.threads)
    print(report.output_dir / "manifest.json")


def cmd_fit(args):
    _, panel, spec = _context(args)
    fit = fit_synth(panel, spec)
    if args.out:
        _emit(args, "fit.json", fit.to_json())
        _emit(args, "paths.csv", fit.paths_csv())
        _emit(args, "balance.csv", fit.balance.to_csv())
    post = fit.gap_path[fit.post_mask]
    print(json.dumps({
        "treated_unit": spec.treated_unit,
        "weights": fit.weights.as_dict(),
        "rmspe_pre": fit.rmspe_pre,
        "rmspe_post": fit.rmspe_post,
        "average_post_gap": float(post.mean()) if post.size else None,
    }, sort_keys=True))


def cmd_placebo_space(args):
    _, panel, spec = _context(args)
    ps = in_space_placebos(panel, spec, threads=args.threads)
    filters = tuple(args.filters)
    columns = []
    for m in (None, *filters):
        try:
            columns.append((m, pvalue_series(ps, m)))
        except SynthbreakError:
            columns.append((m, None))
    _emit(args, "placebos.csv", ps.to_csv(filters))
    _emit(args, "pvalues.csv", pvalue_table_csv(columns))
    rt = rmspe_ratio_test(ps)
    print(json.dumps({"rank": rt.rank, "p_value": rt.p_value, "treated_ratio": rt.treated_ratio,
                      "n_placebos": len(rt.ratios) - 1, "failed": ps.failed}, sort_keys=True))


def cmd_placebo_time(args):
    _, panel, spec = _context(args)
    baseline = fit_synth(panel, spec)
    rows = ["false_t0,rmspe_pre,baseline_rmspe_pre,rmspe_pre_ratio"]
    for year in args.false_t0:
        itp = in_time_placebo(panel, spec, year, baseline=baseline)
        rows.append(f"{year},{itp.fit.rmspe_pre!r},{itp.baseline_rmspe_pre!r},{itp.rmspe_pre_ratio!r}")
        if args.out:
            _emit(args, f"in_time_{year}.json", itp.fit.to_json())
    _emit(args, "in_time.csv", "\n".join(rows) + "\n")


def cmd_breaks(args):
    cfg, panel, spec = _context(args)
    unit = args.unit or spec.treated_unit
    model = args.model or (cfg.break_model if cfg else "both")
    trimming = args.trimming if args.trimming is not None else (cfg.trimming if cfg else 0.15)
    max_lags = args.max_lags if args.max_lags is not None else (cfg.max_lags if cfg else None)
    res = zivot_andrews(panel.series(unit), model=model, trimming=trimming, max_lags=max_lags,
                        years=panel.periods)
    if args.out:
        _emit(args, "breaks.csv", res.to_csv())
        _emit(args, "breaks.json", _json(res.summary()))
    else:
        sys.stdout.write(res.to_csv())
    print(res.summary_json())


def cmd_diagnose(args):
    cfg, panel, spec = _context(args)
    fit = fit_synth(panel, spec)
    w = fit.weights.w[fit.weights.w > 0]
    _emit(args, "weight_ecdf.csv", weight_ecdf(w).to_csv())
    out = {"fit_margin_pct": fit_margin(fit), "n_positive_weights": int(w.size)}
    reference = args.reference or (cfg.ks_reference if cfg else "first_digit")
    method = args.method or (cfg.ks_method if cfg else "exact")
    try:
        ks = ks_benford(w, reference=reference, method=method, seed=spec.seed)
        out["ks"] = {"d_stat": ks.d_stat, "p_value": ks.p_value, "n": ks.n, "reference": ks.reference}
    except SynthbreakError as exc:
        out["ks"] = {"error": f"{type(exc).__name__}: {exc}"}
    print(json.dumps(out, sort_keys=True))


def cmd_simulate(args):
    if not args.out:
        raise ConfigError("simulate needs --out")
    if args.pulse < 0 or args.pulse > args.post:
        raise ConfigError("--pulse must lie in [0, --post]")
    lam = np.full(args.post, args.effect)
    if args.pulse:
        lam[args.pulse:] = 0.0
    dgp = FactorDGP.random(
        args.donors + 1, args.pre + args.post, args.pre,
        n_factors=args.factors, n_covariates=args.covariates, sigma_eps=args.sigma,
        lambda_path=lam, treated_in_hull=args.in_hull, noise=args.noise,
        start_year=args.start_year, seed=args.seed or 0,
    )
    sp = generate_panel(dgp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_panel(sp.panel, out / "panel.csv")
    (out / "effects.json").write_text(sp.effects_json(), encoding="utf-8")
    print(json.dumps({"panel": str(out / "panel.csv"), "treated_unit": sp.treated_unit,
                      "t0": dgp.t0_year}, sort_keys=True))


COMMANDS = {
    "run": cmd_run,
    "fit": cmd_fit,
    "placebo-space": cmd_placebo_space,
    "placebo-time": cmd_placebo_time,
    "breaks": cmd_breaks,
    "diagnose": cmd_diagnose,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "threads", 1) < 1:
        print("synthbreak: error: --threads must be >= 1", file=sys.stderr)
        return 2
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        COMMANDS[args.command](args)
    except (SynthbreakError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"{type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
