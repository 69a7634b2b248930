"""
Landseer Configuration

Loads environment variables and provides a typed configuration object.
"""

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

try:
    from .errors import ConfigError
except ImportError:
    from errors import ConfigError

PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent

GIB = 1024 ** 3


@dataclass
class LandseerConfig:
    """Landseer runtime configuration."""
    cache_dir: Path
    shared_store: str
    local_cache_bytes: int = 2 * GIB
    task_timeout: float = 600.0
    stderr_tail_bytes: int = 4096
    reproducibility_tolerance: float = 3.0
    combination_cap: int = 10 ** 6
    task_cap: int = 5 * 10 ** 6
    verify_ssl: bool = False
    log_level: str = "INFO"
    worker_tags: tuple[str, ...] = ("cpu",)

    @property
    def local_cache_dir(self) -> Path:
        """Per-worker local cache tier."""
        return self.cache_dir / "local"

    @property
    def work_dir(self) -> Path:
        """Scratch space for task workspaces."""
        return self.cache_dir / "work"

    @property
    def shared_is_remote(self) -> bool:
        """True when the shared store is reached over HTTP."""
        return self.shared_store.startswith(("http://", "https://"))


def _number(name: str, default, cast):
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = cast(raw)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {raw!r}") from None
    if value <= 0:
        raise ConfigError(f"{name} must be positive, got {raw!r}")
    return value


def _tags(name: str, default: tuple[str, ...]) -> tuple[str, ...]:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    tags = tuple(dict.fromkeys(tag.strip() for tag in raw.split(",") if tag.strip()))
    if not tags:
        raise ConfigError(f"{name} must list at least one tag, got {raw!r}")
    return tags


def load_config(env_file: Optional[Path] = None) -> LandseerConfig:
    """
    Load Landseer configuration from environment variables.

    Looks for a .env file in the project root unless env_file is given.
    Nothing is required; every variable has a default.

    Optional variables:
        LANDSEER_CACHE_DIR: Cache root (default: <project>/.landseer-cache)
        LANDSEER_SHARED_STORE: Shared store directory or http(s) URL
        LANDSEER_LOCAL_CACHE_BYTES: Local tier capacity (default: 2 GiB)
        LANDSEER_TASK_TIMEOUT: Per-task timeout in seconds (default: 600)
        LANDSEER_STDERR_TAIL: Bytes of stderr kept for failures (default: 4096)
        LANDSEER_TOLERANCE: Reproducibility tolerance in points (default: 3.0)
        LANDSEER_COMBINATION_CAP: Max enumerated combinations (default: 10^6)
        LANDSEER_TASK_CAP: Max task instances while planning (default: 5*10^6)
        LANDSEER_VERIFY_SSL: Verify TLS for an HTTP shared store (default: false)
        LANDSEER_LOG_LEVEL: Logging level (default: INFO)
        LANDSEER_WORKER_TAGS: Comma-separated resource tags every worker offers (default: cpu)

    Returns:
        LandseerConfig: Configuration object

    Raises:
        ConfigError: If a numeric variable or the tag list is malformed
    """
    env_file = env_file or PROJECT_ROOT / ".env"
    if env_file.exists():
        load_dotenv(env_file)

    cache_dir = Path(os.getenv("LANDSEER_CACHE_DIR") or PROJECT_ROOT / ".landseer-cache")
    shared_store = os.getenv("LANDSEER_SHARED_STORE") or str(cache_dir / "shared")

    return LandseerConfig(
        cache_dir=cache_dir,
        shared_store=shared_store,
        local_cache_bytes=_number("LANDSEER_LOCAL_CACHE_BYTES", 2 * GIB, int),
        task_timeout=_number("LANDSEER_TASK_TIMEOUT", 600.0, float),
        stderr_tail_bytes=_number("LANDSEER_STDERR_TAIL", 4096, int),
        reproducibility_tolerance=_number("LANDSEER_TOLERANCE", 3.0, float),
        combination_cap=_number("LANDSEER_COMBINATION_CAP", 10 ** 6, int),
        task_cap=_number("LANDSEER_TASK_CAP", 5 * 10 ** 6, int),
        verify_ssl=os.getenv("LANDSEER_VERIFY_SSL", "false").lower() == "true",
        log_level=os.getenv("LANDSEER_LOG_LEVEL", "INFO").upper(),
        worker_tags=_tags("LANDSEER_WORKER_TAGS", ("cpu",)),
    )


if __name__ == "__main__":
    # Test configuration loading
    try:
        config = load_config()
        print(f"Cache dir: {config.cache_dir}")
        print(f"Shared store: {config.shared_store}")
        print(f"Local capacity: {config.local_cache_bytes} bytes")
        print(f"Task timeout: {config.task_timeout}s")
        print(f"Tolerance: {config.reproducibility_tolerance}")
        print(f"Worker tags: {', '.join(config.worker_tags)}")
    except ConfigError as e:
        print(f"Configuration error: {e}")
