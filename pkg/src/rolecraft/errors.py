"""Exception hierarchy shared across the engine.

Every error carries a short machine-readable ``code`` so the CLI and the
HTTP service can surface failures uniformly.
"""

from __future__ import annotations


class RolecraftError(Exception):
    """Base class for all engine errors."""

    code = "internal"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class BackendError(RolecraftError):
    """An LLM or embedding backend failed after retries were exhausted."""

    code = "backend"


class ScriptMissError(BackendError):
    """A scripted backend received a prompt no rule matches."""

    code = "script_miss"


class BudgetExceededError(BackendError):
    """A scripted rule was invoked more times than its call budget allows."""

    code = "budget_exceeded"


class ParseError(RolecraftError):
    """A model reply could not be parsed into the expected structure."""

    code = "parse"


class ConfigError(RolecraftError):
    """Invalid configuration value or combination."""

    code = "config"


class StorageError(RolecraftError):
    """Persisted state is missing, unreadable, or has the wrong format."""

    code = "storage"


class NotFoundError(RolecraftError):
    """A named resource (persona, session, trace) does not exist."""

    code = "not_found"


class EvaluationError(RolecraftError):
    """A judge call failed to produce usable scores for a pair."""

    code = "evaluation"
