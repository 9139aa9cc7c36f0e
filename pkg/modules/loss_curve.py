# -*- coding: utf-8 -*-
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List, Optional, Sequence

from extraflow.flow import TimeSchedule
from extraflow.oracle import LossRatioPoint, loss_ratio_curve
from utils.client import LabCommand, LabCore
from utils.experiment import ExperimentSpec, save_spec
from utils.metrics import write_csv
from utils.others import LabArgparse, Stopwatch, add_common_flags, ensure_output_dir, gather_ordered

LOSS_HEADER = ("resolution", "t", "loss", "ratio")


@dataclass
class LossCurveReport:
    points: List[LossRatioPoint]
    path: str
    native_res: int
    extra_res: int

    def rows(self) -> List[tuple]:
        out = []
        for p in self.points:
            out.append((self.native_res, p.t, p.loss_native, 1.0 if p.loss_native else float("nan")))
        for p in self.points:
            out.append((self.extra_res, p.t, p.loss_extra, p.ratio))
        return out

    @property
    def ratios(self) -> List[float]:
        return [p.ratio for p in self.points]


def _point(spec: ExperimentSpec, t: float) -> LossRatioPoint:
    # one interior time per call so timesteps fan out across workers
    schedule = TimeSchedule((0.0, t, 1.0))
    return loss_ratio_curve(spec.diagnostic_mixture, spec.native_res, spec.extra_res, schedule,
                            spec.degradation, spec.loss_samples, spec.seeds[0])[0]


async def run_loss_curve(spec: ExperimentSpec, timesteps: Optional[Sequence[float]] = None, *,
                         workers: int = 1) -> LossCurveReport:
    timesteps = tuple(timesteps or spec.loss_timesteps)
    out_dir = ensure_output_dir(os.path.join(spec.run_dir, "loss-curve"))

    points = await gather_ordered(timesteps, lambda t: _point(spec, t), workers)
    report = LossCurveReport(points, os.path.join(out_dir, "loss_curve.csv"), spec.native_res, spec.extra_res)

    await write_csv(report.path, LOSS_HEADER, report.rows(), spec.digest())
    await save_spec(os.path.join(out_dir, "spec.json"), spec)
    return report


async def loss_curve_command(lab: LabCore, args):
    spec = lab.resolve_spec(args)

    watch = Stopwatch()
    report = await run_loss_curve(spec, workers=lab.workers)

    defined = [(p.ratio, p.t) for p in report.points if p.defined]
    if defined:
        peak, at = max(defined)
        lab.log.info(f"Peak loss ratio {peak:.4g} at t={at:.3g}")
    lab.log.info(f"Loss curve over {len(report.points)} timesteps written in {watch}: {report.path}")


def setup(lab: LabCore):
    parser = add_common_flags(LabArgparse(prog="loss-curve"))
    lab.add_command(LabCommand("loss-curve", "velocity loss per timestep, native vs extrapolated", parser,
                               loss_curve_command))
