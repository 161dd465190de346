"""
logger.py: centralised logging setup for SC3Sim.

Call setup_logging() once at startup (in main.py, before anything else).
Modules use `logging.getLogger('SC3Sim.<module>')`, which routes to the
same handlers. stdout is kept for results (digests, tables), so the console
handler writes to stderr.
"""

import logging
import os
import sys
from logging.handlers import RotatingFileHandler


def _get_log_path() -> str:
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), 'sc3sim.log')


_console: logging.Handler | None = None


def setup_logging(console_level: str | int = logging.INFO, log_path: str | None = None) -> logging.Logger:
    """
    Configure the root logger with:
    - RotatingFileHandler -> sc3sim.log (5 MB × 2 backups, always DEBUG)
    - StreamHandler       -> stderr at `console_level`

    Calling it again only adjusts the console level.
    """
    global _console
    root = logging.getLogger()
    if _console is not None:
        _console.setLevel(console_level)
        return logging.getLogger('SC3Sim')

    log_path = log_path or _get_log_path()

    fmt = logging.Formatter(
        fmt='%(asctime)s [%(levelname)s] %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S',
    )

    try:
        fh = RotatingFileHandler(
            log_path,
            maxBytes=5 * 1024 * 1024,
            backupCount=2,
            encoding='utf-8',
        )
        fh.setFormatter(fmt)
        fh.setLevel(logging.DEBUG)
    except Exception:
        fh = None  # unwritable log dir: console only

    sh = logging.StreamHandler(sys.stderr)
    sh.setFormatter(fmt)
    sh.setLevel(console_level)
    _console = sh

    root.setLevel(logging.DEBUG)
    root.handlers.clear()
    if fh:
        root.addHandler(fh)
    root.addHandler(sh)

    log = logging.getLogger('SC3Sim')
    log.debug(f'Log file: {log_path}')
    return log


log = logging.getLogger('SC3Sim')
