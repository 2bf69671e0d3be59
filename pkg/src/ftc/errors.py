class FtcError(Exception):
    pass


class DimensionError(FtcError, ValueError):
    pass


class InfeasibleError(FtcError):
    """Raised when a safety specification admits no robustly safe policy.

    ``certificate`` holds the optimal value of the feasibility LP (the smallest
    achievable uniform relaxation of the safety bounds) plus any solver data.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate or {}


class SolverError(FtcError):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats or {}


class IllConditionedError(FtcError, ValueError):
    pass
