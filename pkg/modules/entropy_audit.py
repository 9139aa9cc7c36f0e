# -*- coding: utf-8 -*-
from __future__ import annotations

import math
import os
import statistics
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

from extraflow.flow import ScalePair
from extraflow.toolkit import ToolkitConfig
from extraflow.toy_mmdit import AttnStats, ToyMMDiT, build_model, build_sequence, forward_audit, zero_sequence
from modules.rope_audit import audit_toolkit
from utils.client import LabCommand, LabCore
from utils.experiment import ModelSpec, save_spec
from utils.metrics import write_csv
from utils.others import LabArgparse, Stopwatch, add_common_flags, ensure_output_dir, gather_ordered

ENTROPY_HEADER = ("variant", "seed", "grid", "layer", "head", "entropy", "text_mass")
SUMMARY_HEADER = ("variant", "median_entropy_gap", "mean_text_mass", "native_text_mass", "text_mass_ratio")

NATIVE = "native"
UNIFORM = "uniform"


@dataclass
class VariantSummary:
    variant: str
    median_entropy_gap: float
    mean_text_mass: float
    native_text_mass: float

    @property
    def text_mass_ratio(self) -> float:
        return self.mean_text_mass / self.native_text_mass if self.native_text_mass else math.nan


@dataclass
class EntropyReport:
    rows: List[tuple]
    summaries: Dict[str, VariantSummary]
    path: str
    summary_path: str


def default_variants(model: ModelSpec) -> Dict[str, ToolkitConfig]:
    return {
        name: ToolkitConfig.preset(name, model.scale, head_dim=model.head_dim)
        for name in ToolkitConfig.PRESETS
    }


def _stat_rows(variant: str, seed, grid: str, stats: Sequence[AttnStats]) -> List[tuple]:
    return [
        (variant, seed, grid, s.layer, head, s.per_head_entropy[head], s.text_mass_per_image_token[head])
        for s in stats
        for head in range(len(s.per_head_entropy))
    ]


def audit_seed(model: ToyMMDiT, spec: ModelSpec, variants: Mapping[str, ToolkitConfig], seed: int,
               chunk: int) -> Tuple[List[AttnStats], Dict[str, List[AttnStats]]]:
    """Native reference run plus one extrapolated run per toolkit variant."""
    n_len = spec.native_grid ** 2
    native_toolkit = ToolkitConfig.plain(ScalePair(n_len, n_len), head_dim=spec.head_dim)
    native_seq = build_sequence(spec.text_len, spec.native_grid, spec.model_dim, seed)
    native = forward_audit(model, native_seq, native_toolkit, chunk)

    extra = {}
    for name, toolkit in variants.items():
        toolkit = toolkit.with_scale(spec.scale)
        seq = build_sequence(spec.text_len, spec.extra_grid, spec.model_dim, seed,
                             scale=spec.scale, duplicate=toolkit.text_duplication)
        extra[name] = forward_audit(model, seq, toolkit, chunk)

    return native, extra


def entropy_gaps(native: Sequence[AttnStats], extra: Sequence[AttnStats]) -> List[float]:
    return [
        abs(e - n)
        for ns, es in zip(native, extra)
        for n, e in zip(ns.per_head_entropy, es.per_head_entropy)
    ]


def text_mass(stats: Sequence[AttnStats]) -> float:
    return statistics.fmean(s.mean_text_mass for s in stats) if stats else 0.0


async def run_entropy_audit(spec: ModelSpec, variants: Mapping[str, ToolkitConfig], seeds: Sequence[int],
                            out_dir: str, digest: str, *, model_seed: int = 0, workers: int = 1,
                            chunk: int = 256) -> EntropyReport:
    model = build_model(model_seed, spec.model_dim, spec.head_dim, spec.n_heads, spec.n_layers)
    variants = dict(variants)

    per_seed = await gather_ordered(seeds, lambda s: audit_seed(model, spec, variants, s, chunk), workers)

    rows = []
    gaps: Dict[str, List[float]] = {name: [] for name in variants}
    masses: Dict[str, List[float]] = {name: [] for name in variants}
    native_masses = []

    for seed, (native, extra) in zip(seeds, per_seed):
        rows.extend(_stat_rows(NATIVE, seed, f"{spec.native_grid}x{spec.native_grid}", native))
        native_masses.append(text_mass(native))
        for name, stats in extra.items():
            rows.extend(_stat_rows(name, seed, f"{spec.extra_grid}x{spec.extra_grid}", stats))
            gaps[name].extend(entropy_gaps(native, stats))
            masses[name].append(text_mass(stats))

    # uniform smoke input: every row of attention is flat
    smoke = zero_sequence(spec.text_len, spec.extra_grid, spec.model_dim)
    smoke_toolkit = ToolkitConfig.plain(ScalePair(len(smoke), len(smoke)), head_dim=spec.head_dim)
    rows.extend(_stat_rows(UNIFORM, "", f"{spec.extra_grid}x{spec.extra_grid}",
                           forward_audit(model, smoke, smoke_toolkit, chunk)))

    native_mass = statistics.fmean(native_masses)
    summaries = {
        name: VariantSummary(name, statistics.median(gaps[name]) if gaps[name] else 0.0,
                             statistics.fmean(masses[name]), native_mass)
        for name in variants
    }

    path = os.path.join(out_dir, "entropy.csv")
    summary_path = os.path.join(out_dir, "entropy_summary.csv")
    await write_csv(path, ENTROPY_HEADER, rows, digest)
    await write_csv(summary_path, SUMMARY_HEADER, [
        (s.variant, s.median_entropy_gap, s.mean_text_mass, s.native_text_mass, s.text_mass_ratio)
        for s in summaries.values()
    ], digest)

    return EntropyReport(rows, summaries, path, summary_path)


async def entropy_audit_command(lab: LabCore, args):
    spec = lab.resolve_spec(args)

    if args.variants:
        variants = {name: audit_toolkit(spec, name) for name in args.variants.split(",")}
    else:
        variants = default_variants(spec.model)

    out_dir = ensure_output_dir(os.path.join(spec.run_dir, "entropy-audit"))

    digest = spec.digest(variants=args.variants)
    watch = Stopwatch()
    report = await run_entropy_audit(spec.model, variants, spec.audit_seeds, out_dir, digest,
                                     workers=lab.workers, chunk=lab.config["ATTENTION_CHUNK"])
    await save_spec(os.path.join(out_dir, "spec.json"), spec, digest)

    for s in report.summaries.values():
        lab.log.info(f"{s.variant:<8} entropy gap {s.median_entropy_gap:.4f}, "
                     f"text mass {s.mean_text_mass:.4f} (native {s.native_text_mass:.4f})")
    lab.log.info(f"Entropy audit finished in {watch}: {report.path}")


def setup(lab: LabCore):
    parser = add_common_flags(LabArgparse(prog="entropy-audit"))
    parser.add_argument("--variants", default=None,
                        help=f"comma-separated toolkit presets ({', '.join(ToolkitConfig.PRESETS)})")
    lab.add_command(LabCommand("entropy-audit", "attention entropy and text share at extrapolated length", parser,
                               entropy_audit_command))
