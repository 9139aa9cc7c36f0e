# -*- coding: utf-8 -*-
from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from extraflow.guidance import MODES, AlphaSchedule, GuidanceConfig, StageSources, sample_native, two_stage_sample
from modules.sample import SeedOutcome, seed_rows
from utils.client import LabCommand, LabCore
from utils.errors import ArgumentParsingError
from utils.experiment import ExperimentSpec, save_spec
from utils.metrics import MetricRow, medians, write_metrics
from utils.others import LabArgparse, Stopwatch, add_common_flags, ensure_output_dir, gather_ordered

PRIMARY = "projection_error"

FIXED_ALPHA = "projected_flow_fixed_alpha"
COSINE_ALPHA = "projected_flow_cosine_alpha"


@dataclass
class ComparisonReport:
    rows: List[MetricRow]
    medians: Dict[str, float]
    wins_vs_none: Dict[str, int]
    metrics_path: str
    modes: Tuple[str, ...] = ()
    # projected flow rerun with the other alpha schedule, when projected flow was compared
    alpha_variant: Optional[str] = None

    def ordering(self) -> List[str]:
        modes = [m for m in self.medians if m in self.modes] if self.modes else list(self.medians)
        return sorted(modes, key=self.medians.get)


def alpha_counterpart(guidance: GuidanceConfig) -> Tuple[str, GuidanceConfig]:
    """Projected flow with fixed alpha 1 against cosine decay, whichever the experiment does not use."""
    if guidance.alpha_schedule.kind == "cosine_decay":
        return FIXED_ALPHA, replace(guidance, mode="projected_flow", alpha_schedule=AlphaSchedule.constant(1.0))
    return COSINE_ALPHA, replace(guidance, mode="projected_flow", alpha_schedule=AlphaSchedule.cosine_decay())


def compare_seed(spec: ExperimentSpec, modes: Sequence[str], seed: int) -> List[MetricRow]:
    """All modes on one seed; the native stage is sampled once and shared."""
    sources = StageSources.from_mixture(spec.mixture, spec.degradation)
    x1_native = sample_native(sources, spec.native_res, spec.native_schedule, seed)

    runs = [(mode, spec.guidance.with_mode(mode)) for mode in modes]
    if "projected_flow" in modes:
        runs.append(alpha_counterpart(spec.guidance))

    rows = []
    for variant, guidance in runs:
        result = two_stage_sample(
            sources, spec.native_res, spec.extra_res,
            (spec.native_schedule, spec.extra_schedule), guidance, seed,
            x1_native=x1_native,
        )
        rows.extend(seed_rows(spec, SeedOutcome(seed, result), variant))
    return rows


def _wins(rows: List[MetricRow], modes: Sequence[str]) -> Dict[str, int]:
    by_seed: Dict[object, Dict[str, float]] = {}
    for row in rows:
        if row.metric == PRIMARY:
            by_seed.setdefault(row.seed, {})[row.variant] = row.value

    if "none" not in modes:
        return {}

    return {
        mode: sum(1 for errors in by_seed.values() if errors[mode] < errors["none"])
        for mode in modes if mode != "none"
    }


async def run_guidance_comparison(spec: ExperimentSpec, modes: Optional[Sequence[str]] = None, *,
                                  workers: int = 1) -> ComparisonReport:
    modes = tuple(modes or spec.modes)
    if any(m not in MODES for m in modes):
        raise ArgumentParsingError(f"modes must be drawn from {', '.join(MODES)}")

    out_dir = ensure_output_dir(os.path.join(spec.run_dir, "compare-guidance"))

    per_seed = await gather_ordered(spec.seeds, lambda s: compare_seed(spec, modes, s), workers)
    rows = [row for seed_rows_ in per_seed for row in seed_rows_]

    summary = medians(rows, PRIMARY)
    wins = _wins(rows, modes)

    rows.extend(MetricRow(spec.name, "median", PRIMARY, value, variant=mode) for mode, value in summary.items())
    rows.extend(MetricRow(spec.name, "count", "wins_vs_none", float(n), variant=mode) for mode, n in wins.items())

    metrics_path = await write_metrics(os.path.join(out_dir, "metrics.csv"), rows, spec.digest())
    await save_spec(os.path.join(out_dir, "spec.json"), spec)

    alpha_variant = alpha_counterpart(spec.guidance)[0] if "projected_flow" in modes else None
    return ComparisonReport(rows, summary, wins, metrics_path, modes, alpha_variant)


async def compare_command(lab: LabCore, args):
    spec = lab.resolve_spec(args)
    modes = tuple(args.modes.split(",")) if args.modes else None

    if modes is not None and len(modes) < 2:
        raise ArgumentParsingError("--modes needs at least two guidance modes")

    watch = Stopwatch()
    report = await run_guidance_comparison(spec, modes, workers=lab.workers)

    for mode in report.ordering():
        lab.log.info(f"{mode:<16} median projection error {report.medians[mode]:.6g}")
    for mode, n in report.wins_vs_none.items():
        lab.log.info(f"{mode:<16} beats none on {n}/{len(spec.seeds)} seeds")
    if report.alpha_variant:
        lab.log.info(f"{report.alpha_variant} median projection error {report.medians[report.alpha_variant]:.6g} "
                     f"(spec alpha {report.medians['projected_flow']:.6g})")

    lab.log.info(f"Comparison finished in {watch}: {report.metrics_path}")


def setup(lab: LabCore):
    parser = add_common_flags(LabArgparse(prog="compare-guidance"))
    parser.add_argument("--modes", default=None, help="comma-separated guidance modes")
    lab.add_command(LabCommand("compare-guidance", "paired comparison of guidance modes", parser, compare_command))
