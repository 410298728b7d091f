"""
Structured logging for the evaluation toolkit
JSON records on stderr (and optionally a file), one event per line
"""

import logging
import json
import sys
from datetime import datetime, timezone
from typing import Any, Dict, Optional, Union
from pathlib import Path
import traceback


class StructuredFormatter(logging.Formatter):
    """
    Formats log records as one JSON object per line
    Keys: timestamp, level, logger, message, module, function, line,
    an optional exception block, and any `extra_data` fields
    """

    def format(self, record: logging.LogRecord) -> str:
        log_data = {
            "timestamp": datetime.fromtimestamp(record.created, timezone.utc).isoformat().replace("+00:00", "Z"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
        }

        if record.exc_info and record.exc_info[0] is not None:
            log_data["exception"] = {
                "type": record.exc_info[0].__name__,
                "message": str(record.exc_info[1]),
                "traceback": traceback.format_exception(*record.exc_info),
            }

        if hasattr(record, "extra_data"):
            log_data.update(record.extra_data)

        return json.dumps(log_data, default=str)


class ContextLogger(logging.LoggerAdapter):
    """
    Adds fixed context to every record
    Usage: logger = ContextLogger(base_logger, {"synthesizer": "cart"})
    """

    def __init__(self, logger: logging.Logger, extra: Optional[Dict[str, Any]] = None):
        super().__init__(logger, extra or {})

    def process(self, msg: str, kwargs: dict) -> tuple:
        extra_data = {**self.extra}
        passed = kwargs.pop("extra", None) or {}
        # callers pass either {"extra_data": {...}} or flat fields
        extra_data.update(passed.get("extra_data", passed))
        kwargs["extra"] = {"extra_data": extra_data}
        return msg, kwargs


def setup_logging(
    level: str = "INFO",
    log_file: Optional[Union[str, Path]] = None,
    json_format: bool = True
) -> logging.Logger:
    """
    Configure the root logger

    Args:
        level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Optional file receiving the same records
        json_format: JSON records (True) or plain text (False)

    Returns:
        Configured root logger
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, level.upper()))
    for handler in list(root_logger.handlers):
        root_logger.removeHandler(handler)

    if json_format:
        formatter = StructuredFormatter()
    else:
        formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    # stdout is reserved for command output
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_path, encoding="utf-8")
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    return root_logger


def get_logger(name: str, context: Optional[Dict[str, Any]] = None) -> Union[logging.Logger, ContextLogger]:
    """Logger for `name`, wrapped in a ContextLogger when context is given"""
    base_logger = logging.getLogger(name)
    if context:
        return ContextLogger(base_logger, context)
    return base_logger


def log_evaluation(
    logger: logging.Logger,
    label: str,
    status: str,
    duration: float,
    **extra
):
    """Log one synthesizer's evaluation with structured data"""
    logger.info(
        f"Evaluation {status}: {label}",
        extra={
            "extra_data": {
                "event_type": "evaluation",
                "synthesizer": label,
                "status": status,
                "duration_seconds": duration,
                **extra
            }
        }
    )


def log_synthesis(
    logger: logging.Logger,
    method: str,
    rows: int,
    seed: int,
    violations_before: int,
    duration: float,
    **extra
):
    """Log a baseline synthesis run with structured data"""
    logger.info(
        f"Synthesis completed: {method}",
        extra={
            "extra_data": {
                "event_type": "synthesis",
                "method": method,
                "rows": rows,
                "seed": seed,
                "rule_violations_before": violations_before,
                "duration_seconds": duration,
                **extra
            }
        }
    )


def log_error(
    logger: logging.Logger,
    error: Exception,
    context: str = None,
    **extra
):
    """Log error with structured data"""
    logger.error(
        f"Error: {str(error)}",
        extra={
            "extra_data": {
                "event_type": "error",
                "error_type": type(error).__name__,
                "error_message": str(error),
                "context": context,
                **extra
            }
        },
        exc_info=True
    )


def log_model_fit(
    logger: logging.Logger,
    kind: str,
    target: str,
    converged: bool,
    iterations: int,
    **extra
):
    """Log a regression fit with structured data"""
    logger.debug(
        f"Model fitted: {kind} {target}",
        extra={
            "extra_data": {
                "event_type": "model_fit",
                "kind": kind,
                "target": target,
                "converged": converged,
                "iterations": iterations,
                **extra
            }
        }
    )
