# -*- coding: utf-8 -*-
import traceback
from typing import Optional, Tuple

from extraflow.errors import DimensionError, ExtraflowException, NumericError, ParameterError, SpecError


class LabException(Exception):
    pass


class ArgumentParsingError(LabException):
    def __init__(self, message):
        self.message = message
        super().__init__(message)


class ConfigError(LabException):
    pass


class OutputPathError(LabException):

    def __init__(self, path: str, reason: Optional[str] = None):
        self.path = path
        self.reason = reason
        super().__init__(f"output path {path} is not writable" + (f": {reason}" if reason else ""))


EXIT_OTHER = 1
EXIT_USAGE = 2
EXIT_SPEC = 3
EXIT_IO = 4
EXIT_NUMERIC = 5


def _line(error: Exception, exit_code: int, text: str) -> str:
    text = " ".join(str(text).split()).replace('"', "'")
    return f'error code={type(error).__name__} exit={exit_code} message="{text}"'


def parse_error(error: Exception) -> Tuple[str, str, int]:
    """Map an exception to (one-line error text, full traceback or "", exit code)."""

    error_txt = None

    exit_code = EXIT_OTHER

    error = getattr(error, 'original', error)

    if isinstance(error, ArgumentParsingError):
        exit_code = EXIT_USAGE
        error_txt = _line(error, exit_code, error.message)

    elif isinstance(error, (ConfigError, SpecError)):
        exit_code = EXIT_SPEC
        error_txt = _line(error, exit_code, error)

    elif isinstance(error, (DimensionError, ParameterError)):
        # invalid values that reached the library from a spec or a flag
        exit_code = EXIT_SPEC
        error_txt = _line(error, exit_code, error)

    elif isinstance(error, OutputPathError):
        exit_code = EXIT_IO
        error_txt = _line(error, exit_code, error)

    elif isinstance(error, OSError):
        exit_code = EXIT_IO
        error_txt = _line(error, exit_code, f"{error.strerror or error}: {error.filename or ''}".strip(": "))

    elif isinstance(error, NumericError):
        exit_code = EXIT_NUMERIC
        error_txt = _line(error, exit_code, error)

    elif isinstance(error, ExtraflowException):
        error_txt = _line(error, exit_code, error)

    if not error_txt:
        full_error_txt = "".join(traceback.format_exception(type(error), error, error.__traceback__))
        error_txt = _line(error, exit_code, error)
    else:
        full_error_txt = ""

    return error_txt, full_error_txt, exit_code
