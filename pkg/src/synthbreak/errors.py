"""Exception and warning classes raised across the package.

The CLI prints ``<ClassName>: <message>`` on failure, so class names are part
of the public interface.
"""


class SynthbreakError(Exception):
    """Base class for all data and estimation errors."""


# panel ingestion / manipulation
class PanelError(SynthbreakError):
    pass


class MalformedRow(PanelError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class UnbalancedPanel(PanelError):
    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(f"({u}, {y})" for u, y in self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" and {len(self.missing) - 10} more"
        super().__init__(f"missing outcome cells: {shown}{more}")


class DuplicateCell(PanelError):
    pass


class NonNumericValue(PanelError):
    pass


class PanelInvariantError(PanelError):
    pass


class UnknownUnit(PanelError):
    pass


class TreatedUnitExcluded(PanelError):
    pass


class EmptyDonorPool(PanelError):
    pass


class EmptyWindow(SynthbreakError):
    pass


# estimation
class WindowError(SynthbreakError):
    """Study timing (t0, match window, lag years) inconsistent with the panel."""


class PredictorAllMissing(SynthbreakError):
    pass


class SolverDiverged(SynthbreakError):
    pass


class ZeroSyntheticValue(SynthbreakError):
    pass


# inference
class AllPlacebosFiltered(SynthbreakError):
    pass


class ZeroPreRMSPE(SynthbreakError):
    pass


class GridTooCoarse(SynthbreakError):
    pass


# breaks
class SeriesTooShort(SynthbreakError):
    pass


class ConstantSeries(SynthbreakError):
    pass


# diagnostics
class ZeroMeanOutcome(SynthbreakError):
    pass


class EmptyInput(SynthbreakError):
    pass


class TooFewWeights(SynthbreakError):
    pass


# simulation
class DimensionMismatch(SynthbreakError):
    pass


class HorizonTooLong(SynthbreakError):
    pass


class ConfigError(SynthbreakError):
    pass


# warnings
class PredictorDropped(UserWarning):
    """A predictor was removed (missing cells or zero variance)."""


class ZeroVariancePredictor(PredictorDropped):
    pass


class PlaceboExcluded(UserWarning):
    pass


class GridEdgeWarning(UserWarning):
    """An accepted offset sits on the edge of the hypothesis grid."""
