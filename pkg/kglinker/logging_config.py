"""
Logging configuration for kg-linker.
Uses structlog for structured logging; console output by default, JSON on request.
"""

import logging
import os
import sys

import colorama
import structlog
from dotenv import load_dotenv

load_dotenv()


def setup_logging(log_level: str = "INFO", json_logs: bool = False):
    """
    Configure structured logging for the application.

    Logs are written to stderr so command output on stdout stays parseable.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR)
        json_logs: If True, output JSON. If False, use pretty console output.
    """
    numeric_level = getattr(logging, log_level.upper(), logging.INFO)

    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=numeric_level,
    )

    processors = [
        structlog.contextvars.merge_contextvars,
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.StackInfoRenderer(),
        structlog.dev.set_exc_info,
    ]

    if json_logs:
        processors.append(structlog.processors.JSONRenderer(sort_keys=True))
    else:
        colors = sys.stderr.isatty()
        if colors:
            colorama.just_fix_windows_console()
        processors.append(
            structlog.dev.ConsoleRenderer(
                colors=colors,
                exception_formatter=structlog.dev.plain_traceback,
            )
        )

    structlog.configure(
        processors=processors,
        wrapper_class=structlog.make_filtering_bound_logger(numeric_level),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )

    return structlog.get_logger()


def _env_flag(name: str) -> bool:
    return os.getenv(name, "").strip().lower() in ("1", "true", "yes", "on")


# KG_LINKER_JSON_LOGS=1 for machine-collected runs
logger = setup_logging(
    log_level=os.getenv("KG_LINKER_LOG_LEVEL", "INFO"),
    json_logs=_env_flag("KG_LINKER_JSON_LOGS"),
)
