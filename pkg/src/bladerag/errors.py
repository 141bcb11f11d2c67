"""Exception hierarchy shared across the pipeline."""


class BladeRagError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(BladeRagError):
    """Invalid or inconsistent configuration."""


class KnowledgeBaseError(BladeRagError):
    """Problems ingesting, persisting or loading the knowledge base."""


class DuplicateIdError(KnowledgeBaseError):
    def __init__(self, kind: str, item_id: str):
        super().__init__(f"duplicate {kind} id: {item_id!r}")
        self.kind = kind
        self.item_id = item_id


class SchemaVersionError(KnowledgeBaseError):
    pass


class VectorIndexError(BladeRagError):
    """Index construction, search or file-format failure."""


class DimensionMismatchError(BladeRagError, ValueError):
    """Vector length disagrees with the index or the configured model."""

    def __init__(self, expected: int, got: int):
        super().__init__(f"dimension mismatch: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class EmbeddingError(BladeRagError):
    """Embedding provider failure (transport or contract)."""


class RetrievalError(BladeRagError):
    pass


class EmptyRetrievalError(RetrievalError):
    """Retrieval produced no text context; the knowledge base is unusable."""


class VlmError(BladeRagError):
    """Base for vision-language model client failures."""


class VlmRetriableError(VlmError):
    """Transport failures or 5xx responses that persisted through all retries."""


class VlmConfigError(VlmError):
    """4xx responses: the request or credentials are wrong, retrying won't help."""


class VlmProtocolError(VlmError):
    """The endpoint answered but the completion was empty or malformed."""


class MissingFixtureError(VlmError, KeyError):
    """Replay store has no recorded response for the requested image."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing replay fixture"


class EvaluationError(BladeRagError):
    pass
