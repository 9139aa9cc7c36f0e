# -*- coding: utf-8 -*-
from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Union

import aiofiles

from extraflow import __title__, __version__

UNDEFINED = "undefined"

METRIC_HEADER = ("experiment", "variant", "seed", "metric", "t", "value")

Cell = Union[str, int, float, None]


@dataclass(frozen=True)
class MetricRow:
    experiment: str
    seed: Union[int, str]
    metric: str
    value: float
    t: Optional[float] = None
    variant: str = ""

    @property
    def defined(self) -> bool:
        return math.isfinite(self.value)

    def cells(self) -> tuple:
        return self.experiment, self.variant, self.seed, self.metric, self.t, self.value


def format_cell(value: Cell) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if not math.isfinite(value):
            return UNDEFINED
        return repr(value)
    return str(value)


def provenance(digest: str) -> str:
    return f"# {__title__}-lab {__version__} spec={digest}"


def render_csv(header: Sequence[str], rows: Iterable[Sequence[Cell]], digest: str) -> str:
    buffer = io.StringIO()
    buffer.write(provenance(digest) + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(c) for c in row])
    return buffer.getvalue()


async def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Cell]], digest: str) -> str:
    async with aiofiles.open(path, "w", encoding="utf-8", newline="") as f:
        await f.write(render_csv(header, rows, digest))
    return path


async def write_metrics(path: str, rows: Iterable[MetricRow], digest: str) -> str:
    return await write_csv(path, METRIC_HEADER, (r.cells() for r in rows), digest)


def read_csv(text: str) -> List[Dict[str, str]]:
    """Parse a file written by :func:`render_csv`, skipping the provenance line."""
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))


def medians(rows: Iterable[MetricRow], metric: str) -> Dict[str, float]:
    """Median of ``metric`` per variant, over defined values, in first-seen variant order."""
    groups: Dict[str, List[float]] = {}
    for row in rows:
        if row.metric == metric and row.defined:
            groups.setdefault(row.variant, []).append(row.value)
    return {variant: statistics.median(values) for variant, values in groups.items()}
