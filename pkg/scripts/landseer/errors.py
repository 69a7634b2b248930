"""
Landseer exceptions.

Everything the library raises derives from LandseerError so callers
(the CLI in particular) can tell framework errors from bugs.
"""

from pathlib import Path
from typing import Optional


class LandseerError(Exception):
    """Base class for all Landseer errors."""


class ConfigError(LandseerError, ValueError):
    """Invalid environment configuration."""


class RegistryError(LandseerError):
    """A descriptor or record file could not be loaded."""

    def __init__(self, message: str, path: Optional[Path] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line else f"{path}: "
        super().__init__(f"{location}{message}")


class FunnelError(LandseerError):
    """Evidence does not match the record's pending onboarding check."""


class ExperimentError(LandseerError):
    """Malformed experiment file."""


class CapExceededError(LandseerError):
    """A combination or task count exceeds its configured cap."""


class PlanError(LandseerError):
    """The task graph is inconsistent (for example, it contains a cycle)."""


class ArtifactError(LandseerError):
    """An artifact tree is missing or unreadable."""


class IntegrityError(LandseerError):
    """A cache key was re-published with different content."""


class CacheFullError(LandseerError):
    """The local cache cannot free enough space."""


class ResultError(LandseerError):
    """Result vectors are inconsistent."""
