"""
Logging setup for molcom-demod.

Console output goes to stderr so that commands like ``capacity`` keep stdout
for results. A command that writes an output directory also gets a
``run.log`` there, recorded at DEBUG level regardless of ``--verbose``, so
a training run can be inspected after the fact next to its ``run.json``.

Usage:
    from molcom_demod.logging_config import setup_logging, get_logger

    setup_logging(verbose=True, log_file=out_dir / RUN_LOG)
    logger = get_logger(__name__)
"""

import logging
import sys
from pathlib import Path

PACKAGE_NAME = "molcom_demod"
RUN_LOG = "run.log"

CONSOLE_FORMAT = "[%(levelname)s] %(message)s"
DETAILED_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# Font discovery and image backends log at INFO/DEBUG
QUIET_LOGGERS = ["matplotlib", "PIL"]


_owned_handlers: list[logging.Handler] = []


def _reset_handlers(root: logging.Logger) -> None:
    root.handlers.clear()
    while _owned_handlers:
        _owned_handlers.pop().close()


def setup_logging(
    verbose: bool = False,
    level: int | None = None,
    stream=None,
    log_file: Path | None = None,
) -> None:
    """
    Configure console logging and, optionally, a per-run log file.

    Safe to call more than once; handlers from a previous call are closed.

    Args:
        verbose: INFO with timestamps when True, WARNING and terse otherwise.
        level: Explicit console level, overrides verbose.
        stream: Console stream (default sys.stderr).
        log_file: If given, parent directories are created and every package
                  record at DEBUG and above is appended there.
    """
    if level is None:
        level = logging.INFO if verbose else logging.WARNING

    console = logging.StreamHandler(stream if stream is not None else sys.stderr)
    console.setFormatter(
        logging.Formatter(DETAILED_FORMAT if verbose else CONSOLE_FORMAT, datefmt=DATE_FORMAT)
    )
    console.setLevel(level)

    root = logging.getLogger()
    _reset_handlers(root)
    root.addHandler(console)
    root_level = level

    if log_file is not None:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, mode="a", encoding="utf-8")
        file_handler.setFormatter(logging.Formatter(DETAILED_FORMAT, datefmt=DATE_FORMAT))
        file_handler.setLevel(logging.DEBUG)
        root.addHandler(file_handler)
        _owned_handlers.append(file_handler)
        root_level = logging.DEBUG

    root.setLevel(root_level)
    logging.getLogger(PACKAGE_NAME).setLevel(root_level)

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(max(level, logging.WARNING))

    if log_file is not None:
        logging.getLogger(PACKAGE_NAME).debug(f"Run log: {log_file}")


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)
