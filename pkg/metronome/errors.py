"""Exception hierarchy used throughout Metronome. Every error derives from a
builtin exception so that callers can keep catching ``ValueError`` and
friends, while the command line maps the two families (validation vs
numerical) onto distinct exit codes."""


class MetronomeError(Exception):
    """Base class for all Metronome errors."""


class ParameterError(MetronomeError, ValueError):
    """Raised on invalid parameters or inconsistent array shapes."""


class ConfigValidationError(MetronomeError, ValueError):
    """Raised when a scenario configuration fails validation.

    Parameters
    ----------
    message : str
    fields : list of str, optional
        The dotted paths of the offending fields.
    """

    def __init__(self, message, fields=None):
        self.fields = list(fields) if fields is not None else []
        if self.fields:
            message = f"{message}: {', '.join(self.fields)}"
        super().__init__(message)


class MissingArtifactError(MetronomeError, FileNotFoundError):
    """Raised when a pipeline stage cannot find the artifacts produced by an
    upstream stage."""


class NumericalError(MetronomeError, ArithmeticError):
    """Raised on numerical failures such as singular innovation
    covariances or non-finite filter states."""


class FactorizationError(NumericalError):
    """Raised when a covariance cannot be factorized because it is
    indefinite beyond tolerance."""


class NonQuadraticError(NumericalError):
    """Raised when a recovered quadratic form fails to reproduce direct
    evaluations of the cost."""
