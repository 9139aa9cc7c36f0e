# -*- coding: utf-8 -*-
"""Component ablation: projected flow plus the toolkit parts, removed one at a
time (cumulatively or singly) across resolution ratios."""
from __future__ import annotations

import math
import os
import statistics
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from extraflow.flow import ScalePair, uniform_schedule
from extraflow.guidance import GuidanceConfig, StageSources, projection_error, sample_native, two_stage_sample
from extraflow.oracle import nearest_mean_error
from extraflow.toolkit import ToolkitConfig
from extraflow.toy_mmdit import build_model
from modules.entropy_audit import audit_seed, entropy_gaps, text_mass
from utils.client import LabCommand, LabCore
from utils.errors import ArgumentParsingError
from utils.experiment import ExperimentSpec, save_spec
from utils.metrics import write_csv
from utils.others import LabArgparse, Stopwatch, add_common_flags, ensure_output_dir, gather_ordered

ABLATION_HEADER = ("study", "variant", "ratio", "projection_error", "nearest_mean_error", "entropy_gap",
                   "text_mass_ratio")

PROJECTED_FLOW = "projected_flow"
FULL = "full"


@dataclass(frozen=True)
class Variant:
    study: str
    removed: Tuple[str, ...]

    @property
    def name(self) -> str:
        return "w/o " + "+".join(self.removed) if self.removed else FULL

    def toolkit(self, preset: str, scale: ScalePair, head_dim: int = 64) -> ToolkitConfig:
        parts = [c for c in self.removed if c != PROJECTED_FLOW]
        return ToolkitConfig.preset(preset, scale, head_dim=head_dim).without(*parts)

    def guidance(self, base: GuidanceConfig) -> GuidanceConfig:
        return base.with_mode("none" if PROJECTED_FLOW in self.removed else PROJECTED_FLOW)


@dataclass
class AblationCell:
    variant: Variant
    ratio: int
    projection_error: float
    nearest_mean_error: float
    entropy_gap: float
    text_mass_ratio: float

    def cells(self) -> tuple:
        return (self.variant.study, self.variant.name, self.ratio, self.projection_error,
                self.nearest_mean_error, self.entropy_gap, self.text_mass_ratio)


@dataclass
class AblationReport:
    cells: List[AblationCell]
    path: str
    preset: str

    def cell(self, study: str, name: str, ratio: int) -> AblationCell:
        return next(c for c in self.cells if c.variant.study == study and c.variant.name == name and c.ratio == ratio)


def ablation_variants(preset: str) -> List[Variant]:
    """The full method, then each part removed cumulatively, then each part removed alone."""
    parts = (PROJECTED_FLOW,) + ToolkitConfig.preset(preset).components()

    variants = [Variant("sequential", ())]
    variants.extend(Variant("sequential", parts[:i]) for i in range(1, len(parts) + 1))
    variants.extend(Variant("single", (part,)) for part in parts)
    return variants


def default_ratios(native_res: int, extra_res: int) -> Tuple[int, ...]:
    ratios = []
    r = 2
    while r <= extra_res // native_res:
        ratios.append(r)
        r *= 2
    return tuple(ratios)


def _median(values: Sequence[float]) -> float:
    values = [v for v in values if math.isfinite(v)]
    return statistics.median(values) if values else math.nan


def sample_seed(spec: ExperimentSpec, variants: Sequence[Variant], ratios: Sequence[int], preset: str,
                seed: int) -> Dict[Tuple[str, int], Tuple[float, float]]:
    """(projection error, nearest-mean error) per (variant, ratio); one native sample feeds every cell."""
    sources = StageSources.from_mixture(spec.mixture, spec.degradation)
    x1_native = sample_native(sources, spec.native_res, spec.native_schedule, seed)

    out = {}
    for ratio in ratios:
        extra_res = spec.native_res * ratio
        scale = ScalePair.from_grids(spec.native_res, extra_res)
        for variant in variants:
            schedule = variant.toolkit(preset, scale).shifted(uniform_schedule(spec.steps_extra))
            res = two_stage_sample(sources, spec.native_res, extra_res, (spec.native_schedule, schedule),
                                   variant.guidance(spec.guidance), seed, x1_native=x1_native)
            out[(variant.name, ratio)] = (
                projection_error(res.x1_extra, res.context, res.projection),
                nearest_mean_error(res.x1_extra, spec.mixture)[0],
            )
    return out


def audit_seed_cells(spec: ExperimentSpec, model, variants: Sequence[Variant], ratios: Sequence[int], preset: str,
                     seed: int, chunk: int) -> Dict[Tuple[str, int], Tuple[List[float], float, float]]:
    """(entropy gaps, text mass, native text mass) per (variant, ratio) on the toy transformer."""
    out = {}
    for ratio in ratios:
        model_spec = replace(spec.model, extra_grid=spec.model.native_grid * ratio)
        toolkits = {v.name: v.toolkit(preset, model_spec.scale, model_spec.head_dim) for v in variants}
        native, extra = audit_seed(model, model_spec, toolkits, seed, chunk)
        for name, stats in extra.items():
            out[(name, ratio)] = (entropy_gaps(native, stats), text_mass(stats), text_mass(native))
    return out


async def run_ablation(spec: ExperimentSpec, preset: str = "flux", ratios: Optional[Sequence[int]] = None, *,
                       workers: int = 1, chunk: int = 256) -> AblationReport:
    if preset not in ToolkitConfig.PRESETS:
        raise ArgumentParsingError(f"unknown preset {preset!r}, expected one of {', '.join(ToolkitConfig.PRESETS)}")
    ratios = tuple(ratios or default_ratios(spec.native_res, spec.extra_res))
    if not ratios or any(r < 1 or spec.mixture.canonical_resolution % (spec.native_res * r) for r in ratios):
        raise ArgumentParsingError(f"ratios {ratios} do not fit the {spec.mixture.canonical_resolution}px mixture")

    variants = ablation_variants(preset)
    out_dir = ensure_output_dir(os.path.join(spec.run_dir, "ablation"))

    samples = await gather_ordered(spec.audit_seeds,
                                   lambda s: sample_seed(spec, variants, ratios, preset, s), workers)

    model = build_model(0, spec.model.model_dim, spec.model.head_dim, spec.model.n_heads, spec.model.n_layers)
    audits = await gather_ordered(spec.audit_seeds,
                                  lambda s: audit_seed_cells(spec, model, variants, ratios, preset, s, chunk), workers)

    cells = []
    for variant in variants:
        for ratio in ratios:
            key = (variant.name, ratio)
            gaps = [g for per_seed in audits for g in per_seed[key][0]]
            mass = statistics.fmean(per_seed[key][1] for per_seed in audits)
            native_mass = statistics.fmean(per_seed[key][2] for per_seed in audits)
            cells.append(AblationCell(
                variant, ratio,
                _median([per_seed[key][0] for per_seed in samples]),
                _median([per_seed[key][1] for per_seed in samples]),
                _median(gaps),
                mass / native_mass if native_mass else math.nan,
            ))

    digest = spec.digest(preset=preset, ratios=list(ratios))
    path = os.path.join(out_dir, f"ablation_{preset}.csv")
    await write_csv(path, ABLATION_HEADER, (c.cells() for c in cells), digest)
    await save_spec(os.path.join(out_dir, "spec.json"), spec, digest)

    return AblationReport(cells, path, preset)


async def ablation_command(lab: LabCore, args):
    spec = lab.resolve_spec(args)
    try:
        ratios = tuple(int(r) for r in args.ratios.split(",")) if args.ratios else None
    except ValueError as e:
        raise ArgumentParsingError(f"--ratios must be comma-separated integers, got {args.ratios!r}") from e

    watch = Stopwatch()
    report = await run_ablation(spec, args.preset, ratios, workers=lab.workers, chunk=lab.config["ATTENTION_CHUNK"])

    for c in report.cells:
        lab.log.info(f"{c.variant.study:<10} {c.variant.name:<48} x{c.ratio:<3} "
                     f"projection {c.projection_error:.4g}  entropy gap {c.entropy_gap:.4f}  "
                     f"text mass x{c.text_mass_ratio:.3f}")
    lab.log.info(f"Ablation ({report.preset}) finished in {watch}: {report.path}")


def setup(lab: LabCore):
    parser = add_common_flags(LabArgparse(prog="ablation"))
    parser.add_argument("--preset", choices=ToolkitConfig.PRESETS, default="flux",
                        help="toolkit whose parts are removed; lumina has no text duplication")
    parser.add_argument("--ratios", default=None,
                        help="comma-separated resolution ratios; powers of two up to extra/native when omitted")
    lab.add_command(LabCommand("ablation", "remove projected flow and toolkit parts, sequentially and singly",
                               parser, ablation_command))
