"""Synthetic control estimation with permutation inference, break tests and
donor-weight diagnostics."""

__version__ = "0.1.0"

from .breaks import BreakResult, zivot_andrews
from .diagnostics import ECDF, KSResult, first_digit, fit_margin, ks_benford, weight_ecdf
from .errors import *  # noqa: F401,F403
from .inference import (
    EffectBand,
    InTimePlacebo,
    PlaceboSet,
    PValueSeries,
    RatioTest,
    confidence_band,
    in_space_placebos,
    in_time_placebo,
    pvalue_series,
    rmspe_ratio_test,
)
from .panel import (
    ExclusionRules,
    PanelDataset,
    PanelSchema,
    filter_donors,
    load_conflicts,
    load_panel,
    restrict_window,
    write_panel,
)
from .scm import (
    EffectSummary,
    Predictor,
    PredictorWeights,
    SimplexWeights,
    StudySpec,
    SynthFit,
    build_predictor_matrices,
    effect_summary,
    fit_synth,
    optimize_v,
    rmspe,
    shift_t0,
    solve_weights,
)
from .simulate import FactorDGP, SimulatedPanel, classify_effect, generate_panel
from .study import StudyConfig, StudyReport, load_config, parse_config, run_study
