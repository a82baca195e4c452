"""
Shared helpers: project paths, environment configuration and logging setup.
"""

import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

# Determine project root assuming this file is app/utils.py
PROJECT_ROOT = Path(__file__).resolve().parents[1]

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

DEFAULT_MANAGER_HOST = "127.0.0.1"
DEFAULT_MANAGER_PORT = 7470


def load_env(path: Optional[str] = None) -> None:
    """Loads a .env file (project root by default); existing variables win."""
    load_dotenv(path or PROJECT_ROOT / ".env", override=False)


def env_str(name: str, default: str) -> str:
    value = os.getenv(name)
    return value if value not in (None, "") else default


def env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value in (None, ""):
        return default
    try:
        return int(value)
    except ValueError:
        raise ValueError(f"environment variable {name} must be an integer, got {value!r}") from None


def log_dir() -> Path:
    return Path(env_str("TESHU_LOG_DIR", str(PROJECT_ROOT / "logs")))


def template_dir() -> Path:
    return Path(env_str("TESHU_TEMPLATE_DIR", str(PROJECT_ROOT / "templates")))


def manager_address() -> tuple:
    return (env_str("TESHU_MANAGER_HOST", DEFAULT_MANAGER_HOST),
            env_int("TESHU_MANAGER_PORT", DEFAULT_MANAGER_PORT))


def default_seed() -> int:
    return env_int("TESHU_SEED", 0)


def setup_logging(name: str, level: Optional[str] = None) -> logging.Logger:
    """
    Configures root logging for an entry point: a file under the log
    directory plus the console.

    Args:
        name: Entry point name; also the log file stem.
        level: Level name; defaults to TESHU_LOG_LEVEL or INFO.

    Returns:
        The entry point's named logger.
    """
    directory = log_dir()
    directory.mkdir(parents=True, exist_ok=True)
    level_name = (level or env_str("TESHU_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(directory / f"{name}.log"),
            logging.StreamHandler()
        ]
    )
    # basicConfig is a no-op once configured; the level still applies.
    logging.getLogger().setLevel(getattr(logging, level_name, logging.INFO))
    return logging.getLogger(name)
