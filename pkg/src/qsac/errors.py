"""Exception hierarchy shared by the simulator, trainer, environments and harness."""


class QSACError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(QSACError, ValueError):
    """A configuration value is outside its allowed range."""


class StructuralError(QSACError, ValueError):
    """Shapes, lengths or indices do not fit together."""


class UsageError(QSACError, RuntimeError):
    """An operation was called in a state where it is not allowed."""


class ContractError(QSACError, ValueError):
    """A value crossing an environment boundary violates its declared contract."""


class ProtocolError(QSACError):
    """A bridge message could not be decoded or had the wrong shape."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message}: {line!r}"
        super().__init__(message)
        self.line = line


class TransportError(QSACError, ConnectionError):
    """The byte stream to a remote environment failed or timed out."""


class EnvironmentStepError(QSACError, RuntimeError):
    """An environment raised while the trainer was stepping it."""


class StartupError(QSACError, RuntimeError):
    """A training run could not be set up; nothing was trained."""


class RunDataError(QSACError, ValueError):
    """A run directory is missing its metrics or they cannot be parsed."""
