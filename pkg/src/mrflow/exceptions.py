"""Exception hierarchy used across the toolkit."""


class MRError(ValueError):
    """Base class for all toolkit errors."""


class ParseError(MRError):
    """A summary-statistics table could not be read."""


class InsufficientInstrumentsError(MRError):
    """Too few kept instruments for the requested method."""


class CollinearExposuresError(MRError):
    """Multivariable design matrix is rank deficient."""


class ConfigError(MRError):
    """Pipeline configuration failed validation."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and partial outputs."""

    def __init__(self, stage, message, partial=None):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
        self.partial = partial if partial is not None else {}
