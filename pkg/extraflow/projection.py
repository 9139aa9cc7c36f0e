# -*- coding: utf-8 -*-
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, ParameterError
from .flow import Grid

log = logging.getLogger(__name__)

_FREQ_TOL = 1e-12

FILTER_KINDS = ("ideal", "raised-cosine")

Cutoff = Union[float, Tuple[float, float]]


def _pair(value: Union[int, Sequence[int]]) -> Tuple[int, int]:
    if isinstance(value, (int, np.integer)):
        return int(value), int(value)
    rows, cols = value
    return int(rows), int(cols)


@dataclass(frozen=True)
class ProjectionConfig:
    """Low-pass projection P.

    ``cutoff_fraction`` is the per-axis fraction of the grid's Nyquist frequency
    that is kept. A pair sets rows and columns separately.
    """

    cutoff_fraction: Cutoff = 0.25
    filter_kind: str = "ideal"
    transition_width: float = 0.0

    def __post_init__(self):
        for c in self.cutoffs:
            if not (0.0 < c <= 1.0):
                raise ParameterError(f"cutoff fraction must lie in (0, 1], got {c}")

        if self.filter_kind not in FILTER_KINDS:
            raise ParameterError(
                f"unknown filter kind {self.filter_kind!r}, expected one of {', '.join(FILTER_KINDS)}"
            )

        if self.transition_width < 0:
            raise ParameterError(f"transition width must be >= 0, got {self.transition_width}")

    @property
    def cutoffs(self) -> Tuple[float, float]:
        if isinstance(self.cutoff_fraction, (tuple, list)):
            rows, cols = self.cutoff_fraction
            return float(rows), float(cols)
        return float(self.cutoff_fraction), float(self.cutoff_fraction)

    @property
    def is_identity(self) -> bool:
        return self.filter_kind == "ideal" and self.cutoffs == (1.0, 1.0)

    @classmethod
    def native_band(cls, native: Union[int, Sequence[int]], extra: Union[int, Sequence[int]],
                    filter_kind: str = "ideal", transition_width: float = 0.0) -> ProjectionConfig:
        """Keep exactly the band a ``native`` grid can represent inside an ``extra`` grid."""
        nh, nw = _pair(native)
        eh, ew = _pair(extra)

        if eh % nh or ew % nw:
            raise DimensionError(f"extrapolated grid {eh}x{ew} is not a multiple of native {nh}x{nw}")

        rows, cols = nh / eh, nw / ew
        cutoff = rows if rows == cols else (rows, cols)
        return cls(cutoff, filter_kind, transition_width)

    @classmethod
    def identity(cls) -> ProjectionConfig:
        return cls(1.0, "ideal", 0.0)

    def to_dict(self) -> dict:
        cutoff = list(self.cutoffs) if isinstance(self.cutoff_fraction, (tuple, list)) else self.cutoff_fraction
        return {
            "cutoff_fraction": cutoff,
            "filter_kind": self.filter_kind,
            "transition_width": self.transition_width,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ProjectionConfig:
        cutoff = data.get("cutoff_fraction", 0.25)
        if isinstance(cutoff, list):
            cutoff = tuple(cutoff)
        return cls(cutoff, data.get("filter_kind", "ideal"), float(data.get("transition_width", 0.0)))


def _axis_response(freqs: np.ndarray, cutoff: float, kind: str, width: float) -> np.ndarray:
    # freqs in cycles/sample; the pass band ends at cutoff * Nyquist
    edge = cutoff * 0.5
    mag = np.abs(freqs)
    response = (mag <= edge + _FREQ_TOL).astype(np.float64)

    if kind == "raised-cosine" and width > 0:
        stop = edge * (1.0 + width)
        ramp = (mag > edge + _FREQ_TOL) & (mag < stop)
        response[ramp] = 0.5 * (1.0 + np.cos(np.pi * (mag[ramp] - edge) / (stop - edge)))

    return response


@lru_cache(maxsize=64)
def _mask(height: int, width: int, cutoffs: Tuple[float, float], kind: str, transition: float) -> np.ndarray:
    rows = _axis_response(np.fft.fftfreq(height), cutoffs[0], kind, transition)
    cols = _axis_response(np.fft.rfftfreq(width), cutoffs[1], kind, transition)
    mask = np.outer(rows, cols)
    mask.setflags(write=False)
    return mask


def lowpass(x: Grid, cfg: ProjectionConfig) -> Grid:
    """Same-size low-pass filter, applied per channel in the 2D real DFT domain."""
    if cfg.is_identity:
        return x

    mask = _mask(x.height, x.width, cfg.cutoffs, cfg.filter_kind, cfg.transition_width)
    spectrum = np.fft.rfft2(x.data, axes=(-2, -1))
    out = np.fft.irfft2(spectrum * mask, s=(x.height, x.width), axes=(-2, -1))
    return Grid.wrap(out)


def highpass(x: Grid, cfg: ProjectionConfig) -> Grid:
    return x - lowpass(x, cfg)


def downsample(x: Grid, factor: int) -> Grid:
    """Non-overlapping ``factor`` x ``factor`` average pooling."""
    if factor < 1:
        raise ParameterError(f"downsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    if x.height % factor or x.width % factor:
        raise DimensionError(f"grid {x.height}x{x.width} is not divisible by {factor}")

    c, h, w = x.shape
    pooled = x.data.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))
    return Grid.wrap(pooled)


def _box_response(n: int, factor: int) -> Tuple[np.ndarray, np.ndarray]:
    """Signed bin indices of an ``n``-point grid and the pooling filter's response there.

    Averaging ``factor`` consecutive samples of the ``factor * n`` grid scales
    bin k by (1/factor) * sum_j exp(2*pi*i*k*j / (factor*n)).
    """
    k = np.fft.fftfreq(n, d=1.0 / n)
    j = np.arange(factor)
    response = np.exp(2j * np.pi * np.outer(k, j) / (factor * n)).mean(axis=1)
    return k.astype(np.int64), response


def upsample_bandlimited(x: Grid, factor: int) -> Grid:
    """Frequency zero-padding to ``factor`` times the size.

    The padded spectrum is compensated for the pooling filter, so
    ``downsample(upsample_bandlimited(x, f), f)`` returns ``x`` for any
    grid without energy in its Nyquist bins. Nyquist bins are dropped.
    """
    if factor < 1:
        raise ParameterError(f"upsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return x

    c, h, w = x.shape
    big_h, big_w = h * factor, w * factor

    spectrum = np.fft.fft2(x.data, axes=(-2, -1))
    kh, resp_h = _box_response(h, factor)
    kw, resp_w = _box_response(w, factor)

    keep_h = np.abs(kh) * 2 != h
    keep_w = np.abs(kw) * 2 != w

    compensation = (factor * factor) / np.outer(resp_h, resp_w)
    compensation = compensation * np.outer(keep_h, keep_w)

    padded = np.zeros((c, big_h, big_w), dtype=np.complex128)
    rows = np.mod(kh, big_h)
    cols = np.mod(kw, big_w)
    padded[:, rows[:, None], cols[None, :]] = spectrum * compensation

    out = np.fft.ifft2(padded, axes=(-2, -1)).real
    return Grid.wrap(out)


def resample_factor(native: Union[int, Sequence[int]], extra: Union[int, Sequence[int]]) -> int:
    nh, nw = _pair(native)
    eh, ew = _pair(extra)

    if eh % nh or ew % nw:
        raise DimensionError(f"extrapolated grid {eh}x{ew} is not a multiple of native {nh}x{nw}")
    if eh // nh != ew // nw:
        raise DimensionError("per-axis scaling factors differ; only uniform integer factors are resampled")

    return eh // nh


def band_energy(x: Grid, cfg: ProjectionConfig) -> Tuple[float, float]:
    """Mean squared value of the low and high band of ``x``."""
    low = lowpass(x, cfg)
    high = x - low
    return float(np.mean(low.data ** 2)), float(np.mean(high.data ** 2))
