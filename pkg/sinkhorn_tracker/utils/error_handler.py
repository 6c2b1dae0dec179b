"""
Error handling framework for the tracker library and CLI

Provides the exception hierarchy, centralized categorization/logging and the
decorator that turns exceptions into process exit codes.
"""

import math
import sys
import time
import traceback
from datetime import datetime, timezone
from enum import Enum
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Dict, Optional

from sinkhorn_tracker.constants import EXIT_DATA, EXIT_INTERNAL, EXIT_OK, EXIT_USAGE
from sinkhorn_tracker.utils import helper


class ErrorSeverity(Enum):
    """Error severity levels for proper escalation"""
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"
    CRITICAL = "CRITICAL"


class ErrorCategory(Enum):
    """Error categories, each mapped to a CLI exit code"""
    USER_INPUT = "USER_INPUT"
    DATA = "DATA"
    CONFIGURATION = "CONFIGURATION"
    INTERNAL_INVARIANT = "INTERNAL_INVARIANT"
    RESOURCE_LIMIT = "RESOURCE_LIMIT"


EXIT_CODES = {
    ErrorCategory.USER_INPUT: EXIT_USAGE,
    ErrorCategory.CONFIGURATION: EXIT_USAGE,
    ErrorCategory.DATA: EXIT_DATA,
    ErrorCategory.INTERNAL_INVARIANT: EXIT_INTERNAL,
    ErrorCategory.RESOURCE_LIMIT: EXIT_INTERNAL,
}


class TrackerError(Exception):
    """Base exception for tracker errors"""

    def __init__(self, message: str, category: ErrorCategory = ErrorCategory.INTERNAL_INVARIANT,
                 severity: ErrorSeverity = ErrorSeverity.MEDIUM, details: Optional[Dict] = None):
        super().__init__(message)
        self.message = message
        self.category = category
        self.severity = severity
        self.details = details or {}
        self.timestamp = datetime.now(timezone.utc).isoformat()


class ValidationError(TrackerError, ValueError):
    """Invalid arguments, flags or config values"""
    def __init__(self, message: str, field: str = None, **kwargs):
        super().__init__(message, ErrorCategory.USER_INPUT, ErrorSeverity.LOW, **kwargs)
        self.field = field


class ConfigurationError(TrackerError, ValueError):
    """Unknown or mistyped configuration keys"""
    def __init__(self, message: str, key: str = None, **kwargs):
        super().__init__(message, ErrorCategory.CONFIGURATION, ErrorSeverity.LOW, **kwargs)
        self.key = key


class DimensionMismatchError(TrackerError, ValueError):
    """Vector or matrix dimensions disagree with what an operation expects"""
    def __init__(self, message: str, expected: Any = None, actual: Any = None, **kwargs):
        super().__init__(message, ErrorCategory.USER_INPUT, ErrorSeverity.LOW, **kwargs)
        self.expected = expected
        self.actual = actual


class DataError(TrackerError):
    """Malformed or missing input data"""
    def __init__(self, message: str, path: Any = None, line: Optional[int] = None, **kwargs):
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None and str(path) not in message:
            message = f"{path}: {message}"
        super().__init__(message, ErrorCategory.DATA, ErrorSeverity.MEDIUM, **kwargs)
        self.path = None if path is None else str(path)
        self.line = line


class MissingEmbeddingError(DataError):
    """File-backed provider has no vector for a key"""
    def __init__(self, key: tuple, path: Any = None):
        super().__init__(f"no embedding for key (sequence={key[0]}, frame={key[1]}, det_index={key[2]})",
                         path=path, details={"key": list(key)})
        self.key = key


class ShapeMismatchError(DataError):
    """Stored shapes disagree with the configured ones, or the file is truncated"""


class CheckpointVersionError(DataError):
    """Checkpoint written by an unsupported format version"""


class InvariantViolation(TrackerError):
    """Internal defect: an invariant that construction should guarantee was broken"""
    def __init__(self, message: str, **kwargs):
        super().__init__(message, ErrorCategory.INTERNAL_INVARIANT, ErrorSeverity.CRITICAL, **kwargs)


class ErrorHandler:
    """Centralized error categorization and logging"""

    def handle_error(self, error: Exception, context: Optional[Dict] = None) -> Dict[str, Any]:
        """Log the error with its category and return the logged record, exit code included"""
        if isinstance(error, TrackerError):
            return self._handle_known_error(error, context)
        return self._handle_unknown_error(error, context)

    def exit_code(self, error: Exception) -> int:
        if isinstance(error, TrackerError):
            return EXIT_CODES[error.category]
        category, _ = self._categorize_error(error)
        return EXIT_CODES[category]

    def _handle_known_error(self, error: TrackerError, context: Optional[Dict]) -> Dict[str, Any]:
        error_data = {
            'error_id': f"ERR_{int(time.time())}",
            'message': error.message,
            'category': error.category.value,
            'severity': error.severity.value,
            'details': error.details,
            'exit_code': self.exit_code(error),
            'context': context or {},
            'timestamp': error.timestamp
        }

        if error.severity in [ErrorSeverity.CRITICAL, ErrorSeverity.HIGH]:
            helper.log_json("ERROR", "APPLICATION_ERROR", **error_data)
        elif error.severity == ErrorSeverity.MEDIUM:
            helper.log_json("WARNING", "APPLICATION_WARNING", **error_data)
        else:
            helper.log_json("INFO", "APPLICATION_INFO", **error_data)

        return error_data

    def _handle_unknown_error(self, error: Exception, context: Optional[Dict]) -> Dict[str, Any]:
        category, severity = self._categorize_error(error)

        error_data = {
            'error_id': f"ERR_{int(time.time())}",
            'message': str(error),
            'error_type': type(error).__name__,
            'category': category.value,
            'severity': severity.value,
            'traceback': traceback.format_exc(),
            'context': context or {},
            'exit_code': EXIT_CODES[category],
            'timestamp': datetime.now(timezone.utc).isoformat()
        }

        helper.log_json("ERROR", "UNHANDLED_ERROR", **error_data)
        return error_data

    def _categorize_error(self, error: Exception) -> tuple[ErrorCategory, ErrorSeverity]:
        """Categorize unknown errors based on type"""
        if isinstance(error, (ValueError, TypeError)):
            return ErrorCategory.USER_INPUT, ErrorSeverity.LOW
        elif isinstance(error, OSError):
            return ErrorCategory.DATA, ErrorSeverity.MEDIUM
        elif isinstance(error, KeyError):
            return ErrorCategory.CONFIGURATION, ErrorSeverity.MEDIUM
        elif isinstance(error, MemoryError):
            return ErrorCategory.RESOURCE_LIMIT, ErrorSeverity.CRITICAL
        else:
            return ErrorCategory.INTERNAL_INVARIANT, ErrorSeverity.HIGH


def cli_error_handler(command_name: str = None):
    """Decorator for CLI commands: exceptions become a stderr diagnostic and an exit code"""

    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs) -> int:
            error_handler = ErrorHandler()
            name = command_name or func.__name__
            helper.log_json("INFO", "COMMAND_STARTED", command=name)
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                record = error_handler.handle_error(e, {'command': name})
                code = record['exit_code']
                message = e.message if isinstance(e, TrackerError) else f"{type(e).__name__}: {e}"
                print(f"error: {message}", file=sys.stderr)
                return code
            helper.log_json("INFO", "COMMAND_COMPLETED", command=name)
            return EXIT_OK if result is None else result

        return wrapper
    return decorator


class InputValidator:
    """Input validation utilities"""

    @staticmethod
    def validate_positive(value: Any, field_name: str) -> float:
        """Finite and strictly positive"""
        try:
            number = float(value)
        except (TypeError, ValueError):
            raise ValidationError(f"{field_name} must be a number", field=field_name)
        if not math.isfinite(number) or number <= 0:
            raise ValidationError(f"{field_name} must be positive and finite, got {value}",
                                  field=field_name, details={'provided_value': value})
        return number

    @staticmethod
    def validate_non_negative(value: Any, field_name: str) -> float:
        try:
            number = float(value)
        except (TypeError, ValueError):
            raise ValidationError(f"{field_name} must be a number", field=field_name)
        if not math.isfinite(number) or number < 0:
            raise ValidationError(f"{field_name} must be non-negative and finite, got {value}",
                                  field=field_name, details={'provided_value': value})
        return number

    @staticmethod
    def validate_positive_int(value: Any, field_name: str) -> int:
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ValidationError(f"{field_name} must be a positive integer, got {value!r}",
                                  field=field_name)
        return value

    @staticmethod
    def validate_existing_file(path: Any, field_name: str = "path") -> Path:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"file not found: {p}", details={'field': field_name})
        return p

    @staticmethod
    def parse_frame_size(text: str) -> tuple[float, float]:
        """Parse a WIDTHxHEIGHT string such as 1920x1080"""
        parts = str(text).lower().replace(",", "x").split("x")
        if len(parts) != 2:
            raise ValidationError(f"frame size must look like WIDTHxHEIGHT, got {text!r}",
                                  field="frames_wh")
        width = InputValidator.validate_positive(parts[0], "frame width")
        height = InputValidator.validate_positive(parts[1], "frame height")
        return width, height
