"""Exception hierarchy shared across the engine."""


class MnemosError(Exception):
    """Base class for all engine errors."""


class InvalidInputError(MnemosError):
    """Caller violated a documented precondition."""


class ProviderError(MnemosError):
    """Base class for chat/embedding backend failures."""


class ProviderUnavailableError(ProviderError):
    """Transport kept failing after the configured number of retries."""


class ProviderProtocolError(ProviderError):
    """Backend answered, but the payload does not match the wire contract."""


class ScriptMissError(ProviderError):
    """A strict scripted provider received a request matching no single entry."""


class ExtractionParseError(MnemosError):
    """Provider output for fact/entity extraction could not be parsed."""


class DecisionValidationError(MnemosError):
    """A tool decision referenced arguments outside the presented candidates."""


class ResolutionValidationError(MnemosError):
    """An update resolver named an edge that was not presented as a conflict."""


class IntegrityError(MnemosError):
    """Event log corruption: gap, bad sequence, or unparseable record."""


class UnsupportedSnapshotError(MnemosError):
    """Snapshot schema version is not one this build can restore."""


class ConfigMismatchError(MnemosError):
    """Snapshot was produced under a different config fingerprint."""


class NotFoundError(MnemosError):
    """Lookup by id found nothing."""


class DatasetError(MnemosError):
    """Benchmark dataset failed to load or validate."""


class UnknownTokenizerError(MnemosError):
    """Token counter id is not registered."""


class JudgeParseError(MnemosError):
    """Judge output did not contain a parseable CORRECT/WRONG label."""
