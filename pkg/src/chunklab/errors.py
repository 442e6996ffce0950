"""Exception hierarchy shared across the package."""


class ChunklabError(Exception):
    """Base class for every error raised by this package."""


class DomainError(ChunklabError):
    """A caller violated a documented precondition (bad argument range)."""


class IngestError(ChunklabError):
    """Corpus file could not be ingested (malformed line, duplicate id, ...)."""


class IntegrityError(ChunklabError):
    """Internal cross-references are broken (unknown chunk id, duplicate id)."""


class VectorLookupError(ChunklabError):
    """An externally supplied sparse vector is missing for a given id."""


class EmbeddingError(ChunklabError):
    """Embedding provider failed or returned inconsistent output."""


class GenerationError(ChunklabError):
    """Answer generation failed after retries."""


class UndefinedMetricError(ChunklabError):
    """A metric has an empty denominator and is undefined."""


class IndexFormatError(ChunklabError):
    """A persisted index file is corrupt or has an unsupported version."""


class ConfigError(ChunklabError):
    """A run configuration file failed schema validation."""
