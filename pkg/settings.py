"""
Settings management: loads from / saves to settings.json next to main.py.
These are operator preferences only; everything that changes a run's result
lives in the scenario file.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass

log = logging.getLogger('SC3Sim.settings')


def _app_root() -> str:
    """Directory that holds settings.py (and therefore settings.json)."""
    return os.path.dirname(os.path.abspath(__file__))


SETTINGS_FILE = os.path.join(_app_root(), 'settings.json')


@dataclass
class Settings:
    # Output: run directories are created below this
    out_dir: str = 'runs'

    # Sweeps / compare: runs executed concurrently
    max_workers: int = 4

    # Console verbosity; the log file always records DEBUG
    log_level: str = 'INFO'


def load(path: str = SETTINGS_FILE) -> Settings:
    """Load settings from settings.json, or return defaults if not found."""
    if not os.path.exists(path):
        return Settings()
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        s = Settings()
        for k, v in data.items():
            if hasattr(s, k):
                setattr(s, k, v)
        return s
    except Exception as e:
        log.warning(f'Settings load failed ({e}), using defaults.')
        return Settings()


def save(settings: Settings, path: str = SETTINGS_FILE) -> None:
    """Persist settings to settings.json."""
    try:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(asdict(settings), f, ensure_ascii=False, indent=2)
    except Exception as e:
        log.warning(f'Failed to save settings: {e}')
