# -*- coding: utf-8 -*-
"""Raw grid dumps and 8-bit PNG rendering."""
from __future__ import annotations

import io
import struct
from typing import Tuple

import aiofiles
import numpy as np
from PIL import Image

from extraflow.errors import DimensionError, SpecError
from extraflow.flow import Grid

MAGIC = b"XFGR"
HEADER = struct.Struct("<4sIII")

DEFAULT_WINDOW = (-3.0, 3.0)


def encode_grid(grid: Grid) -> bytes:
    """16-byte header (magic, channels, height, width) then little-endian float32, row-major per channel."""
    c, h, w = grid.shape
    return HEADER.pack(MAGIC, c, h, w) + grid.data.astype("<f4").tobytes()


def decode_grid(raw: bytes) -> Grid:
    if len(raw) < HEADER.size:
        raise SpecError("grid dump is shorter than its header")

    magic, c, h, w = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SpecError(f"not a grid dump (magic {magic!r})")

    body = raw[HEADER.size:]
    if len(body) != 4 * c * h * w:
        raise SpecError(f"grid dump holds {len(body)} bytes, expected {4 * c * h * w}")

    return Grid(np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(c, h, w))


async def save_grid(path: str, grid: Grid) -> str:
    async with aiofiles.open(path, "wb") as f:
        await f.write(encode_grid(grid))
    return path


async def load_grid(path: str) -> Grid:
    async with aiofiles.open(path, "rb") as f:
        return decode_grid(await f.read())


def _check_window(window: Tuple[float, float]) -> Tuple[float, float]:
    lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        raise SpecError(f"render window must satisfy min < max, got ({lo}, {hi})")
    return lo, hi


def to_levels(grid: Grid, window: Tuple[float, float] = DEFAULT_WINDOW) -> np.ndarray:
    """uint8 levels, clipped to the window."""
    lo, hi = _check_window(window)
    scaled = (grid.data - lo) / (hi - lo) * 255.0
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def from_levels(levels: np.ndarray, window: Tuple[float, float] = DEFAULT_WINDOW) -> Grid:
    lo, hi = _check_window(window)
    return Grid(lo + levels.astype(np.float64) / 255.0 * (hi - lo))


def to_image(grid: Grid, window: Tuple[float, float] = DEFAULT_WINDOW) -> Image.Image:
    levels = to_levels(grid, window)

    if grid.channels == 1:
        return Image.fromarray(levels[0])
    if grid.channels == 3:
        return Image.fromarray(np.ascontiguousarray(levels.transpose(1, 2, 0)))

    # other channel counts are laid out side by side in grayscale
    return Image.fromarray(np.ascontiguousarray(np.concatenate(list(levels), axis=1)))


def encode_png(grid: Grid, window: Tuple[float, float] = DEFAULT_WINDOW) -> bytes:
    buffer = io.BytesIO()
    to_image(grid, window).save(buffer, format="PNG")
    return buffer.getvalue()


def decode_png(raw: bytes, window: Tuple[float, float] = DEFAULT_WINDOW, channels: int = 0) -> Grid:
    """Inverse of :func:`encode_png` for 1- and 3-channel grids (or ``channels`` side-by-side tiles)."""
    with Image.open(io.BytesIO(raw)) as image:
        arr = np.asarray(image)

    if arr.ndim == 3:
        levels = arr.transpose(2, 0, 1)
    elif channels > 1:
        if arr.shape[1] % channels:
            raise DimensionError(f"image width {arr.shape[1]} does not split into {channels} tiles")
        levels = np.stack(np.split(arr, channels, axis=1))
    else:
        levels = arr[None]

    return from_levels(levels, window)


async def save_png(path: str, grid: Grid, window: Tuple[float, float] = DEFAULT_WINDOW) -> str:
    async with aiofiles.open(path, "wb") as f:
        await f.write(encode_png(grid, window))
    return path
