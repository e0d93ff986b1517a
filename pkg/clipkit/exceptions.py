"""Exception hierarchy shared by every clipkit module.

Commands map ``ValidationFailed`` to exit code 1 and everything else to
exit code 2.
"""


class ClipkitError(Exception):
    """Base class for all toolkit errors."""

    prefix = 'internal'


class ValidationFailed(ClipkitError):
    """Input data or configuration breaks a documented contract."""

    prefix = 'validation'


class ManifestParseError(ValidationFailed):
    def __init__(self, path, message, line=None, field=None):
        self.path = str(path)
        self.line = line
        self.field = field
        where = self.path
        if line is not None:
            where = f'{where}:{line}'
        if field:
            where = f'{where} [{field}]'
        super().__init__(f'{where}: {message}')


class RecordValidationError(ValidationFailed):
    def __init__(self, image_id, message):
        self.image_id = image_id
        super().__init__(f'{image_id}: {message}')


class ConfigError(ValidationFailed):
    prefix = 'config'


class CorpusError(ValidationFailed):
    pass


class CheckpointError(ValidationFailed):
    pass


class ReportMismatch(ValidationFailed):
    pass


class NumericalError(ClipkitError):
    """Non-finite values or a degenerate embedding."""


class FreezeViolation(ClipkitError):
    """Encoder parameters changed while they were meant to be frozen."""


class SynthesisError(ClipkitError):
    pass


class CoincidentTargets(ValueError):
    """Two targets share a center, so no relative direction exists."""
