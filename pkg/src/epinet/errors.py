class EngineError(Exception):
    """Base class for engine errors; ``code`` is used in CLI error JSON."""

    code = "engine_error"


class ValidationError(EngineError, ValueError):
    code = "validation_error"


class ConflictError(EngineError):
    code = "conflict"


class IntegrityError(EngineError):
    code = "integrity_error"


class NotFoundError(EngineError, KeyError):
    code = "not_found"

    def __str__(self):
        return str(self.args[0]) if self.args else "not found"


class ConfigError(EngineError):
    code = "config_error"


class BackendError(EngineError):
    code = "backend_error"


class BackendUnavailable(BackendError):
    """Transport failed after all retries; callers degrade instead of aborting."""

    code = "backend_unavailable"
