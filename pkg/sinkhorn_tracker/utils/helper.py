import json
import logging
import sys
from datetime import datetime, timezone

from sinkhorn_tracker.constants import LOG_LEVEL, LOGGER_NAME

_logger = logging.getLogger(LOGGER_NAME)

_LEVELS = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARN": logging.WARNING,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR,
    "CRITICAL": logging.CRITICAL,
}


def configure_logging(level: str = LOG_LEVEL) -> logging.Logger:
    """
    Attach a single stderr handler to the package logger.
    stdout is reserved for command output (matrices, reports).
    """
    if not any(getattr(h, "_sinkhorn_tracker", False) for h in _logger.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        handler._sinkhorn_tracker = True
        _logger.addHandler(handler)
        _logger.propagate = False
    _logger.setLevel(_LEVELS.get(level.upper(), logging.INFO))
    return _logger


def log_json(level: str, msg: str, **kwargs):
    """
    Emit a single JSON line on the package logger.
    Usage: log_json("INFO", "SINKHORN_DONE", rows=3, cols=4, max_row_error=1e-6)
    """
    lvl = _LEVELS.get(level.upper(), logging.INFO)
    if not _logger.isEnabledFor(lvl):
        return
    try:
        payload = {
            "level": level.upper(),
            "message": msg,
            "ts": datetime.now(timezone.utc).isoformat(),
        }
        if kwargs:
            payload.update(kwargs)
        _logger.log(lvl, json.dumps(payload, ensure_ascii=False, default=_json_default))
    except Exception:
        # never fail logging
        _logger.log(lvl, f"{level.upper()} {msg} {kwargs}")


def _json_default(value):
    # numpy / torch scalars and paths
    if hasattr(value, "item"):
        try:
            return value.item()
        except Exception:
            pass
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


def format_number(value: float) -> str:
    """
    Shortest text that parses back to the same float: integral values print
    without a decimal point, everything else uses repr.
    """
    value = float(value)
    if value.is_integer():
        return str(int(value))
    return repr(value)


def debug_enabled() -> bool:
    """Guard for DEBUG events whose fields are costly to compute."""
    return _logger.isEnabledFor(logging.DEBUG)
