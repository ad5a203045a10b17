"""Exception hierarchy for koopman_isc."""


class KoopmanISCError(Exception):
    """Base class for every error raised by this package."""


class InputError(KoopmanISCError):
    """Bad user input. The CLI maps this to exit code 2."""

    exit_code = 2


class ConfigError(InputError, ValueError):
    pass


class WindowSizeError(InputError, ValueError):
    """The series is too short for the requested Hankel window."""


class InsufficientDataError(InputError):
    """A stream or error sequence is shorter than one window."""


class LengthMismatchError(InputError, ValueError):
    pass


class GridMismatchError(InputError, ValueError):
    """Two distributions were evaluated on different sample grids."""


class CalibrationError(InputError):
    pass


class DegenerateDataError(KoopmanISCError):
    """All-zero snapshot data. The CLI maps an abort to exit code 3."""

    exit_code = 3


class IllConditionedModesError(KoopmanISCError):
    """The Vandermonde matrix of the Ritz values is numerically singular."""


class SimulationFault(KoopmanISCError, FloatingPointError):
    """The pack state became non-finite."""
