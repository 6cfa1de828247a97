"""Shared exception types.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError (and subclasses) -> 4.
"""


class EpitrackError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(EpitrackError):
    """Invalid or missing configuration."""


class DataError(EpitrackError):
    """Missing or malformed input data."""


class NumericalError(EpitrackError):
    """Numerical failure during simulation or inference."""


class StepTooCoarse(NumericalError):
    """Event probability mass exceeds 1 for the chosen step size."""

    def __init__(self, total_hazard: float, gamma: float):
        self.total_hazard = float(total_hazard)
        self.gamma = float(gamma)
        super().__init__(
            f"total hazard {self.total_hazard:g} exceeds uniformization rate "
            f"{self.gamma:g}; use a smaller step"
        )


class ModelSyntaxError(DataError):
    """Reaction-model text failed to parse; carries 1-based line and column."""

    def __init__(self, message: str, line: int, column: int):
        self.line = int(line)
        self.column = int(column)
        super().__init__(f"line {self.line}, column {self.column}: {message}")


class AbsorbingLocation(DataError):
    """A location has no outgoing movement rate in some time bucket."""


class NoPositives(DataError):
    """Ranking metric requested but no positive labels present."""


class ConstantTruth(DataError):
    """R-squared requested against a constant truth series."""


class NoConsecutivePairs(DataError):
    """Transition tabulation requested but no consecutive-day report pairs exist."""
