"""Exception types shared across the toolchain."""


class FixyForgeError(Exception):
    """Base class for all domain errors raised by this package."""


class SchemaError(FixyForgeError):
    """Model manifest violates the interchange schema."""


class IntegrityError(FixyForgeError):
    """Weight blob does not match the sizes declared in the manifest."""


class UnsupportedOpError(FixyForgeError):
    """Layer kind or configuration is outside the supported set."""


class ShapeError(FixyForgeError):
    """Shape inference produced an invalid (non-positive) dimension."""


class ParameterError(FixyForgeError):
    """An operation was called with an out-of-range parameter."""


class DataError(FixyForgeError):
    """Input tensor contains non-finite or otherwise unusable values."""


class NumericError(FixyForgeError):
    """Degenerate numeric input (e.g. zero variance in BN folding)."""


class OverflowInfeasibleError(FixyForgeError):
    """Static analysis requires a wider accumulator than the hardware allows."""


class SimulationError(FixyForgeError):
    """Bit-exact simulation detected an internal inconsistency."""


class ScheduleViolation(SimulationError):
    """Cycle-accurate simulation violated a buffering constraint."""


class EmissionError(FixyForgeError):
    """RTL emission hit a construct it cannot express."""


class CalibrationError(FixyForgeError):
    """Cost-model calibration is underdetermined or missing."""


class InfeasibleError(FixyForgeError):
    """Design-space search has an empty feasible set."""

    def __init__(self, message, binding_constraints=None):
        super().__init__(message)
        self.binding_constraints = list(binding_constraints or [])
