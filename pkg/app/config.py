# app/config.py
import os
import logging
from dataclasses import dataclass
from typing import Optional

LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


@dataclass(frozen=True)
class Settings:
    log_level: int = logging.INFO
    max_events: int = 1_000_000


_settings: Optional[Settings] = None


def get_settings() -> Settings:
    """Get (or build) the process settings from AGDLAB_* env vars."""
    global _settings
    if _settings is None:
        level_name = os.getenv("AGDLAB_LOG", "info").strip().lower()
        if level_name not in LOG_LEVELS:
            raise RuntimeError(f"AGDLAB_LOG must be one of {sorted(LOG_LEVELS)}, got {level_name!r}")
        raw_cap = os.getenv("AGDLAB_MAX_EVENTS", "1000000")
        try:
            max_events = int(float(raw_cap))
        except ValueError:
            raise RuntimeError(f"AGDLAB_MAX_EVENTS is not a number: {raw_cap!r}")
        if max_events < 1:
            raise RuntimeError("AGDLAB_MAX_EVENTS must be positive")
        _settings = Settings(log_level=LOG_LEVELS[level_name], max_events=max_events)
    return _settings


def reset_settings() -> None:
    """Forget cached settings (tests change env vars between cases)."""
    global _settings
    _settings = None
