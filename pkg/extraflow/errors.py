# -*- coding: utf-8 -*-
from __future__ import annotations

from typing import Optional


class ExtraflowException(Exception):
    """Base extraflow exception."""


class DimensionError(ExtraflowException):
    """Exception raised when grid shapes disagree or cannot be resampled."""


class ParameterError(ExtraflowException):
    """Exception raised when an argument is outside its valid range."""


class SpecError(ExtraflowException):
    """A mixture or experiment document could not be parsed."""


class NumericError(ExtraflowException):
    """A non-finite value showed up during a computation."""

    __slots__ = ('t', 'layer', 'detail')

    def __init__(self, detail: str, *, t: Optional[float] = None, layer: Optional[int] = None):
        self.detail = detail
        self.t = t
        self.layer = layer

        where = []
        if t is not None:
            where.append(f"t={t:.6g}")
        if layer is not None:
            where.append(f"layer={layer}")

        self.message = f"{detail} ({', '.join(where)})" if where else detail
        super().__init__(self.message)

    def __str__(self):
        return self.message
