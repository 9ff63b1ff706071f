"""Exception hierarchy shared by the design, simulation and scenario layers."""


class SyncError(Exception):
    """Base class for all package errors."""


class InvalidInput(SyncError, ValueError):
    """Malformed model, topology, scenario or argument."""


class Unsolvable(SyncError):
    """The delay bound or parameter choice admits no protocol."""


class DesignFailure(SyncError):
    """A design step did not terminate inside its numerical limits."""


class SolverFailure(SyncError):
    """A linear-algebra solve was too ill-conditioned to trust."""


class IntegrationError(SyncError):
    """Integration produced non-finite values."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time
