"""Logging for Metronome. A single ``loguru`` logger is shared by every
module; sinks are configured per level so that informational output goes to
stdout while errors go to stderr.

Adapted from the BSD 3-Clause licensed logging setup of Crescendo,
Copyright (c) 2023, Matthew R. Carbone, Stepan Fomichev & John Sous.
"""

from contextlib import contextmanager
from os import get_terminal_size
import sys
from warnings import warn

from loguru import logger


ALL_LEVELS = ["DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"]
NO_DEBUG_LEVELS = ALL_LEVELS[1:]
STDOUT_LEVELS = ALL_LEVELS[:4]


def generic_filter(names):
    if names == "all":
        return None

    def f(record):
        return record["level"].name in names

    return f


format_mapping = {
    level: f"[<lvl>{level[0]}</>] <lvl>{{message}}</>" for level in ALL_LEVELS
}


def _is_terminal(stream):
    try:
        return stream.isatty()
    except (AttributeError, ValueError):
        return False


def configure_loggers(
    levels=ALL_LEVELS,
    enable_python_standard_warnings=False,
    colorize=None,
):
    """Configures the ``loguru`` loggers, removing every previously attached
    handler first.

    Parameters
    ----------
    levels : list, optional
        The levels for which a sink is attached. DEBUG through WARNING are
        written to stdout, ERROR and CRITICAL to stderr.
    enable_python_standard_warnings : bool, optional
        Raises dummy warnings on ``logger.warning`` and ``logger.error``.
    colorize : bool, optional
        Defaults to colors only when the stream is a terminal, which keeps
        batch logs free of escape codes.
    """

    logger.remove(None)

    for level in levels:
        stream = sys.stdout if level in STDOUT_LEVELS else sys.stderr
        logger.add(
            stream,
            colorize=_is_terminal(stream) if colorize is None else colorize,
            filter=generic_filter([level]),
            format=format_mapping[level],
        )

    if enable_python_standard_warnings:
        logger.add(lambda _: warn("DUMMY WARNING"), level="WARNING")
        logger.add(lambda _: warn("DUMMY ERROR"), level="ERROR")


def log_banner(msg, fill=">", fill_right="<"):
    """Logs ``msg`` centered between arrows spanning the terminal."""

    try:
        width = get_terminal_size().columns
    except OSError:
        width = 20
    L = max((width - len(msg)) // 2 - 3, 1)
    logger.info(f"{fill * L} {msg} {fill_right * L}")


def DEBUG():
    """Quick helper to enable DEBUG mode."""

    configure_loggers()


def _TESTING_MODE():
    """Loggers are configured as usual, but ``logger.warning`` and
    ``logger.error`` also raise a dummy Python warning, which lets unit tests
    assert on them with ``pytest.warns``."""

    configure_loggers(enable_python_standard_warnings=True)


def DISABLE_DEBUG():
    """Quick helper to disable DEBUG mode."""

    configure_loggers(levels=NO_DEBUG_LEVELS)


@contextmanager
def disable_logger():
    """Context manager for disabling the logger."""

    logger.disable("")
    try:
        yield None
    finally:
        logger.enable("")


@contextmanager
def _testing_mode():
    _TESTING_MODE()
    try:
        yield None
    finally:
        DISABLE_DEBUG()


@contextmanager
def debug():
    DEBUG()
    try:
        yield None
    finally:
        DISABLE_DEBUG()


DISABLE_DEBUG()
