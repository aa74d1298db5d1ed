"""Exception types shared across the package."""


class MisobcError(Exception):
    """Base class for all library errors."""


class NonConvergence(MisobcError):
    """A fixed-point or line-search iteration did not reach its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class InvalidModel(MisobcError):
    """Matrix inputs of a deterministic-equivalent model violate their invariants."""


class InvalidInput(MisobcError):
    """Scalar or vector arguments outside their admissible range."""


class DomainError(MisobcError):
    """Argument outside the mathematical domain of a function."""


class SingularChannel(MisobcError):
    """Estimated channel Gram matrix is numerically singular."""


class SingularNormalization(MisobcError):
    """Power-normalization trace underflowed."""


class BracketError(MisobcError):
    """Objective is not unimodal on the requested bracket."""


class ConfigError(MisobcError):
    """Experiment configuration failed validation.

    Parameters
    ----------
    field : str
        Dotted path of the offending field, e.g. ``system.tau``.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
