"""
Logging utility for the MDC segmentation pipeline.

Console output is colored (colorlog) and goes to stderr; a rotating file under
LOG_DIR keeps DEBUG records. Dataset worker processes ship their records
through a QueueHandler to one QueueListener in the parent process.
"""

import atexit
import logging
import os
from logging.handlers import QueueHandler, QueueListener, RotatingFileHandler
from multiprocessing import Queue
from pathlib import Path
from typing import Optional, Set

import colorlog
from dotenv import load_dotenv

LOG_FILE_NAME = "mdc.log"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
LOG_COLORS = {
    "DEBUG": "cyan",
    "INFO": "green",
    "WARNING": "yellow",
    "ERROR": "red",
    "CRITICAL": "red,bg_white",
}

# Set while a listener drains worker records
_log_listener: Optional[QueueListener] = None

# Names handed out by setup_logger, re-leveled by set_log_level
_configured_names: Set[str] = set()


def _log_dir() -> Path:
    """Directory for the rotating log file (LOG_DIR env, default data/logs)."""
    load_dotenv()
    return Path(os.getenv("LOG_DIR", "data/logs"))


def _file_handler() -> RotatingFileHandler:
    log_dir = _log_dir()
    log_dir.mkdir(parents=True, exist_ok=True)
    handler = RotatingFileHandler(
        log_dir / LOG_FILE_NAME,
        maxBytes=10 * 1024 * 1024,  # 10MB
        backupCount=5,
        delay=True,
    )
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    return handler


def _console_handler() -> logging.Handler:
    # NOTSET: the owning logger's level decides what reaches the console
    handler = colorlog.StreamHandler()
    handler.setLevel(logging.NOTSET)
    handler.setFormatter(colorlog.ColoredFormatter(
        "%(log_color)s" + LOG_FORMAT, datefmt=DATE_FORMAT, log_colors=LOG_COLORS))
    return handler


def setup_logger(name: str = "mdc_seg", log_level: Optional[str] = None,
                 log_queue: Optional[Queue] = None) -> logging.Logger:
    """
    Setup logger with file and console handlers.

    Args:
        name: Logger name (usually the module or stage name)
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL);
            falls back to the LOG_LEVEL environment variable
        log_queue: Queue of a worker process. When given, the logger only gets
            a QueueHandler and the parent's listener owns the real handlers.

    Returns:
        Configured logger instance
    """
    if log_level is None:
        load_dotenv()
        log_level = os.getenv("LOG_LEVEL", "INFO")

    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, log_level.upper()))
    logger.handlers.clear()
    _configured_names.add(name)

    if log_queue is not None:
        queue_handler = QueueHandler(log_queue)
        queue_handler.setLevel(logging.DEBUG)
        logger.addHandler(queue_handler)
        logger.propagate = False
        return logger

    logger.addHandler(_file_handler())
    logger.addHandler(_console_handler())
    return logger


def start_log_listener(log_queue: Queue) -> QueueListener:
    """
    Start the parent-process listener that drains worker log records.

    Args:
        log_queue: Queue shared with the worker processes

    Returns:
        The running listener (stopped automatically at exit)
    """
    global _log_listener
    if _log_listener is not None:
        return _log_listener

    _log_listener = QueueListener(log_queue, _file_handler(), _console_handler(),
                                  respect_handler_level=True)
    _log_listener.start()
    atexit.register(stop_log_listener)
    return _log_listener


def stop_log_listener() -> None:
    """Stop the log listener (also registered via atexit)."""
    global _log_listener
    if _log_listener is not None:
        _log_listener.stop()
        _log_listener = None


def set_log_level(log_level: str) -> None:
    """
    Apply a level to every logger created so far and, through LOG_LEVEL, to later ones.

    Args:
        log_level: Logging level name (DEBUG, INFO, WARNING, ERROR, CRITICAL)

    Raises:
        ValueError: If the name is not a logging level
    """
    level = logging.getLevelName(log_level.upper())
    if not isinstance(level, int):
        raise ValueError(f"unknown log level {log_level!r}")
    os.environ["LOG_LEVEL"] = log_level.upper()
    for name in _configured_names:
        logging.getLogger(name).setLevel(level)
