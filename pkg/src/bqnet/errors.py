"""Exception hierarchy and the process exit codes attached to it."""


class BqnetError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(BqnetError):
    """A model description, table, or argument set failed validation.

    Carries the full list of failures (never just the first one) so a
    config author can fix everything in one pass.
    """

    exit_code = 2

    def __init__(self, failures):
        if isinstance(failures, str):
            failures = [failures]
        self.failures = list(failures)
        super().__init__("; ".join(self.failures))


class DomainError(BqnetError):
    """An operation precondition was violated at runtime."""

    exit_code = 1


class UnsupportedRepresentationError(DomainError):
    """The requested kernel construction cannot represent these service laws."""


class RefinementRequiredError(DomainError):
    """A grid is too coarse for the service laws it must resolve."""


class ResourceBudgetError(DomainError):
    """A computation would exceed its configured size budget."""


class SimulationBudgetError(DomainError):
    """A sampling loop exceeded its event budget."""


class KernelDomainError(DomainError):
    """A kernel was evaluated outside the time range it can represent."""


class ConvergenceError(BqnetError):
    """Quadrature refinement failed to converge.

    ``last_estimates`` holds the final two successive estimates so the
    caller can judge how far apart they were.
    """

    exit_code = 3

    def __init__(self, message, last_estimates=()):
        super().__init__(message)
        self.last_estimates = tuple(last_estimates)


#: Exit code for a missing input file (sysexits.h EX_NOINPUT).
MISSING_FILE_EXIT = 66
