"""
Logging configuration for the IDFF toolkit.
"""

import sys
from pathlib import Path
from typing import Optional

from loguru import logger

from src.config.settings import settings

PLAIN_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level} | {name}:{function}:{line} | {message}"
PRETTY_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
)


def setup_logging(level: Optional[str] = None) -> None:
    """Configure loguru sinks; stdout stays free for command output."""

    logger.remove()
    level = (level or settings.LOG_LEVEL).upper()

    pretty = settings.LOG_FORMAT == "pretty"
    logger.add(
        sys.stderr,
        format=PRETTY_FORMAT if pretty else PLAIN_FORMAT,
        level=level,
        colorize=pretty,
        backtrace=False,
        diagnose=False,
    )

    if settings.LOG_DIR:
        logs_dir = Path(settings.LOG_DIR)
        logs_dir.mkdir(parents=True, exist_ok=True)

        # File handler for all logs
        logger.add(
            logs_dir / "application.log",
            format=PLAIN_FORMAT,
            level="DEBUG",
            rotation="1 day",
            retention="30 days",
            compression="gz",
        )

        # Separate file handler for errors
        logger.add(
            logs_dir / "errors.log",
            format=PLAIN_FORMAT,
            level="ERROR",
            rotation="1 week",
            retention="12 weeks",
            compression="gz",
            backtrace=True,
        )

    logger.debug(f"Logging configured - Level: {level}, Format: {settings.LOG_FORMAT}")


def get_logger(name: str):
    """Get a logger instance for a specific module."""
    return logger.bind(name=name)
