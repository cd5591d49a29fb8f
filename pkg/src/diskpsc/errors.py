"""Exception hierarchy shared by all modules."""


class DiskPSCError(Exception):
    """Base class for every error raised by the package."""


class BoundsError(DiskPSCError, ValueError):
    pass


class InvalidMeshError(DiskPSCError, ValueError):
    pass


class ConfigurationError(DiskPSCError, ValueError):
    pass


class IncompatibleInputError(DiskPSCError, ValueError):
    pass


class DegenerateInputError(DiskPSCError, ValueError):
    pass


class PreconditionError(DiskPSCError, ValueError):
    pass


class InvalidFormsError(DiskPSCError, ValueError):
    pass


class ConvergenceError(DiskPSCError, RuntimeError):
    """Eigensolver did not converge; ``last_iterate`` holds the final vector."""

    def __init__(self, message, last_iterate=None, last_value=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.last_value = last_value


class SolvabilityError(DiskPSCError, ValueError):
    pass


class AssemblyError(DiskPSCError, RuntimeError):
    pass


class IntegrationError(DiskPSCError, RuntimeError):
    pass


class InvalidWarpError(DiskPSCError, ValueError):
    pass


class SearchFailure(DiskPSCError, RuntimeError):
    """Doubling search for the warp constant exhausted its budget."""

    def __init__(self, message, largest_feasible_epsilon=None):
        super().__init__(message)
        self.largest_feasible_epsilon = largest_feasible_epsilon


class ContinuationError(DiskPSCError, RuntimeError):
    pass
