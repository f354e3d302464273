"""Exception types shared across the package, plus CLI exit codes."""


class McraftError(Exception):
    """Base class for all package errors."""


class ConfigurationError(McraftError):
    """Invalid configuration value, preset, or setup."""


class DimensionError(McraftError):
    """Shape or size mismatch between tensors."""


class NumericError(McraftError):
    """Non-finite values encountered where finite ones are required."""


class VocabularyError(McraftError):
    """Out-of-vocabulary word or bad token id."""

    def __init__(self, message, word=None):
        super().__init__(message)
        self.word = word


class TemplateError(McraftError):
    """Prompt does not match any registered caption template."""


class GenerationError(McraftError):
    """Procedural rendering could not satisfy its constraints."""


class TrackingError(McraftError):
    """Centroid tracker found no usable foreground."""


class GateError(McraftError):
    """A metric-quality gate (classifier accuracy, aligner AUC) failed."""


class TrainingAborted(McraftError):
    """Training loop stopped because the loss diverged or went non-finite."""


# Distinct process exit codes for the CLI.
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_GATE = 3
EXIT_TRAINING = 4
