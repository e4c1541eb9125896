"""Exception and warning types shared across the package.

Exceptions are grouped by the process exit code the CLI maps them to:
input problems (2), numerical failures (3), configuration problems (4).
"""


class FdaSelectError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputError(FdaSelectError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class NumericalError(FdaSelectError):
    """A numerical procedure failed beyond its built-in recovery."""

    exit_code = 3


class ConfigError(FdaSelectError):
    """Invalid parameter or configuration value."""

    exit_code = 4


class EmptyGroup(InputError):
    pass


class UncoveredGridPoint(InputError):
    pass


class NonFiniteValue(InputError):
    pass


class ScatteredMask(InputError):
    pass


class GridMismatch(InputError):
    pass


class TooFewPoints(InputError):
    pass


class IoFailure(InputError):
    pass


class UnknownPreset(ConfigError):
    pass


class InvalidAlpha(ConfigError):
    pass


class DegenerateKnots(ConfigError):
    pass


class FactorizationFailure(NumericalError):
    pass


class SingularLocalFit(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class AllFitsFailed(NumericalError):
    pass


class DegenerateResample(NumericalError):
    pass


class DescentViolation(NumericalError):
    pass


class CoverageWarning(UserWarning):
    """Observation coverage at some grid point fell below the configured floor."""


class BandwidthWarning(UserWarning):
    """Bandwidth selection ran with minimal data or hit a search boundary."""


class ConvergenceWarning(UserWarning):
    """An iterative fit stopped at the iteration cap before reaching tolerance."""


class EffectSizeWarning(UserWarning):
    """Effect-size computation hit a degenerate variance estimate."""


class ResolutionWarning(UserWarning):
    """Permutation count is low for the requested significance resolution."""
