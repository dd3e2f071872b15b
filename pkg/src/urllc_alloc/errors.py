"""Exception hierarchy shared by all modules."""


class AllocError(Exception):
    """Base class; ``kind`` is the machine-readable error class used by the CLI."""

    kind = "error"


class DomainError(AllocError, ValueError):
    kind = "domain"


class BracketError(AllocError, ValueError):
    kind = "bracket"


class ConvergenceError(AllocError, RuntimeError):
    kind = "convergence"


class InfeasibleLatencyError(AllocError, ValueError):
    kind = "infeasible-latency"


class InfeasibleError(AllocError):
    """Raised when no allocation satisfies the power/bandwidth constraints.

    ``binding`` names the constraint that could not be met
    (``"ul-power"``, ``"dl-power"``, ``"bandwidth"`` or ``"latency"``).
    """

    kind = "infeasible"

    def __init__(self, message, binding=None):
        super().__init__(message)
        self.binding = binding


class ConfigError(AllocError, ValueError):
    kind = "config"
