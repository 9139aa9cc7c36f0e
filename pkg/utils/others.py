# -*- coding: utf-8 -*-
from __future__ import annotations

import argparse
import asyncio
import os
import time
from typing import Awaitable, Callable, List, Optional, Sequence, TypeVar

import humanize

from utils.errors import ArgumentParsingError, OutputPathError

T = TypeVar("T")
R = TypeVar("R")


class LabArgparse(argparse.ArgumentParser):

    def __init__(self, *args, **kwargs):

        kwargs.pop('exit_on_error', None)
        kwargs.pop('allow_abbrev', None)
        kwargs.pop('add_help', None)

        super().__init__(*args, exit_on_error=False, allow_abbrev=False, add_help=False, **kwargs)

    def parse_args(self, args: Optional[Sequence[str]] = None, namespace=None):
        try:
            return super().parse_args(args, namespace)
        except argparse.ArgumentError as e:
            raise ArgumentParsingError(str(e))

    def error(self, message: str):
        raise ArgumentParsingError(message)


def add_common_flags(parser: LabArgparse) -> LabArgparse:
    parser.add_argument("--spec", default=None, help="experiment JSON document; the standard testbed when omitted")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--seed", type=int, default=None, help="run a single seed")
    return parser


def ensure_output_dir(path: str) -> str:
    """Create ``path`` and prove it is writable before any computation starts."""
    try:
        os.makedirs(path, exist_ok=True)
        check = os.path.join(path, ".write-check")
        with open(check, "wb") as f:
            f.write(b"")
        os.remove(check)
    except OSError as e:
        raise OutputPathError(path, e.strerror or str(e)) from e
    return path


async def gather_ordered(items: Sequence[T], func: Callable[[T], R], workers: int = 1,
                         after: Optional[Callable[[R], Awaitable]] = None) -> List:
    """Run ``func`` over ``items`` in worker threads; results keep the order of ``items``.

    ``after`` runs on the event loop for each result as soon as it is ready
    and its return value replaces the result.
    """
    semaphore = asyncio.Semaphore(max(1, workers))

    async def run(item: T):
        async with semaphore:
            result = await asyncio.to_thread(func, item)
            if after is not None:
                result = await after(result)
            return result

    return list(await asyncio.gather(*(run(item) for item in items)))


class Stopwatch:

    def __init__(self):
        self.start = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def __str__(self):
        return humanize.precisedelta(self.elapsed, minimum_unit="milliseconds", format="%0.1f")


def file_size(path: str) -> str:
    try:
        return humanize.naturalsize(os.path.getsize(path))
    except OSError:
        return "?"
