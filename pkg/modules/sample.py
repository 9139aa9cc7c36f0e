# -*- coding: utf-8 -*-
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import List, Tuple

from extraflow.flow import Grid
from extraflow.guidance import TwoStageResult, high_band_energy, projection_error, two_stage_sample
from extraflow.oracle import nearest_mean_error
from utils.client import LabCommand, LabCore
from utils.experiment import ExperimentSpec, save_spec
from utils.gridio import DEFAULT_WINDOW, save_grid, save_png
from utils.metrics import MetricRow, medians, write_metrics
from utils.others import LabArgparse, Stopwatch, add_common_flags, ensure_output_dir, file_size, gather_ordered


@dataclass
class SeedOutcome:
    seed: int
    result: TwoStageResult
    magnitudes: List[Tuple[float, float]] = field(default_factory=list)


@dataclass
class SampleReport:
    rows: List[MetricRow]
    metrics_path: str
    artifacts: List[str]

    def median(self, metric: str) -> float:
        return next(iter(medians(self.rows, metric).values()))


def sample_seed(spec: ExperimentSpec, seed: int) -> SeedOutcome:
    magnitudes = []

    def observe(step: int, t: float, v: Grid, guided: Grid):
        magnitudes.append((t, (guided - v).rms()))

    result = two_stage_sample(
        spec.mixture, spec.native_res, spec.extra_res,
        (spec.native_schedule, spec.extra_schedule), spec.guidance, seed,
        degradation=spec.degradation, observer=observe,
    )
    return SeedOutcome(seed, result, magnitudes)


def seed_rows(spec: ExperimentSpec, outcome: SeedOutcome, variant: str) -> List[MetricRow]:
    res = outcome.result
    seed = outcome.seed

    rows = [
        MetricRow(spec.name, seed, "projection_error", projection_error(res.x1_extra, res.context, res.projection),
                  variant=variant),
        MetricRow(spec.name, seed, "high_band_energy", high_band_energy(res.x1_extra, res.projection),
                  variant=variant),
        MetricRow(spec.name, seed, "nearest_mean_error", nearest_mean_error(res.x1_extra, spec.mixture)[0],
                  variant=variant),
        MetricRow(spec.name, seed, "native_nearest_mean_error", nearest_mean_error(res.x1_native, spec.mixture)[0],
                  variant=variant),
    ]
    rows.extend(
        MetricRow(spec.name, seed, "guidance_magnitude", mag, t=t, variant=variant)
        for t, mag in outcome.magnitudes
    )
    return rows


async def run_sample(spec: ExperimentSpec, *, workers: int = 1,
                     window: Tuple[float, float] = DEFAULT_WINDOW) -> SampleReport:
    out_dir = ensure_output_dir(os.path.join(spec.run_dir, "sample"))
    digest = spec.digest()
    artifacts = []

    async def write(outcome: SeedOutcome) -> List[MetricRow]:
        stem = os.path.join(out_dir, f"seed_{outcome.seed:04d}")
        for label, grid in (("native", outcome.result.x1_native), ("extra", outcome.result.x1_extra)):
            artifacts.append(await save_grid(f"{stem}_{label}.xfgr", grid))
            artifacts.append(await save_png(f"{stem}_{label}.png", grid, window))
        return seed_rows(spec, outcome, spec.guidance.mode)

    per_seed = await gather_ordered(spec.seeds, lambda s: sample_seed(spec, s), workers, after=write)
    rows = [row for seed_rows_ in per_seed for row in seed_rows_]

    metrics_path = await write_metrics(os.path.join(out_dir, "metrics.csv"), rows, digest)

    await save_spec(os.path.join(out_dir, "spec.json"), spec)

    return SampleReport(rows, metrics_path, sorted(artifacts))


async def sample_command(lab: LabCore, args):
    spec = lab.resolve_spec(args)
    window = (lab.config["RENDER_WINDOW_MIN"], lab.config["RENDER_WINDOW_MAX"])

    lab.log.info(f"Sampling {len(spec.seeds)} seed(s) of {spec.name!r}: "
                 f"{spec.native_res}px -> {spec.extra_res}px, guidance {spec.guidance.mode}")

    watch = Stopwatch()
    report = await run_sample(spec, workers=lab.workers, window=window)

    lab.log.info(f"Median projection error {report.median('projection_error'):.6g} "
                 f"({len(report.artifacts)} artifacts, metrics {file_size(report.metrics_path)}) in {watch}")


def setup(lab: LabCore):
    parser = add_common_flags(LabArgparse(prog="sample"))
    lab.add_command(LabCommand("sample", "two-stage sampling with the configured guidance", parser, sample_command))
