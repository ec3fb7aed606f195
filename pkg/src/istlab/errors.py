"""Error taxonomy shared across the package.

Exit-code mapping used by the CLI: usage/config problems -> 2,
numerical non-convergence -> 3, regime/precondition refusals -> 4.
"""


class IstlabError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DomainError(IstlabError, ValueError):
    """Invalid argument domain: bad ordering, nonpositive level, parameter out of range."""

    exit_code = 2


class ConvergenceError(IstlabError):
    """An iterative solver or ladder failed to reach its tolerance within its budget."""

    exit_code = 3


class RegimeError(IstlabError):
    """Requested computation is refused in the detected regime (e.g. heavy tails, supercritical)."""

    exit_code = 4


class ExplosionError(IstlabError):
    """A simulated path exceeded the jump budget before reaching its horizon."""

    exit_code = 3


class IntegrationError(IstlabError):
    """Numerical quadrature failed to converge to the requested tolerance."""

    exit_code = 3


class ConsistencyError(IstlabError):
    """An internal cross-check failed (monotonicity violation, residual blow-up)."""

    exit_code = 3
