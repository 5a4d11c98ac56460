"""Exception hierarchy shared across the package."""


class TsdiffError(Exception):
    """Base class for every error raised by this package."""


class DataError(TsdiffError):
    """Malformed input: bad sequence files, invalid masks, broken invariants."""


class ConfigError(DataError):
    """Unparseable or inconsistent configuration."""


class CheckpointError(DataError):
    """Unreadable checkpoint or version mismatch."""


class NumericalError(TsdiffError):
    """Numerical failure: divergence, NaN gradients, broken bounds."""


class IntegrationDivergedError(NumericalError):
    """ODE state became non-finite during integration."""

    def __init__(self, t: float, detail: str = ""):
        self.t = t
        msg = f"integration diverged at t={t:.6g}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class BoundViolationError(NumericalError):
    """Thinning proposals exceeded the intensity upper bound too often."""
