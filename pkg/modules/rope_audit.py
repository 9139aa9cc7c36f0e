# -*- coding: utf-8 -*-
from __future__ import annotations

import os
from typing import List, Sequence, Tuple

from extraflow.toolkit import ToolkitConfig
from extraflow.toy_mmdit import rope_angle_audit
from utils.client import LabCommand, LabCore
from utils.experiment import ExperimentSpec, save_spec
from utils.metrics import write_csv
from utils.others import LabArgparse, add_common_flags, ensure_output_dir

ROPE_HEADER = (
    "native_grid", "extra_grid", "dim", "theta", "effective_base",
    "max_native_angle", "max_extra_angle_scaled", "max_extra_angle_unscaled",
    "delta_scaled", "delta_unscaled",
)


def audit_rows(toolkit: ToolkitConfig, grids: Sequence[Tuple[int, int]]) -> List[tuple]:
    rows = []
    for native, extra in grids:
        for r in rope_angle_audit(toolkit.rope, native, extra):
            rows.append((
                native, extra, r.dim, r.theta, r.effective_base,
                r.max_native_angle, r.max_extra_angle_scaled, r.max_extra_angle_unscaled,
                r.max_extra_angle_scaled - r.max_native_angle,
                r.max_extra_angle_unscaled - r.max_native_angle,
            ))
    return rows


def default_grids(native: int, extra: int) -> List[Tuple[int, int]]:
    """(native, native * 2^k) up to ``extra``, starting with the identity pair."""
    grids = []
    size = native
    while size <= extra:
        grids.append((native, size))
        size *= 2
    if grids[-1][1] != extra:
        grids.append((native, extra))
    return grids


async def run_rope_audit(toolkit: ToolkitConfig, grids: Sequence[Tuple[int, int]], path: str,
                         digest: str) -> List[tuple]:
    rows = audit_rows(toolkit, grids)
    await write_csv(path, ROPE_HEADER, rows, digest)
    return rows


def audit_toolkit(spec: ExperimentSpec, preset=None) -> ToolkitConfig:
    data = spec.toolkit_preset if preset is None else preset
    if isinstance(data, str):
        data = {"preset": data}
    data = {"head_dim": spec.model.head_dim, **data}
    return ToolkitConfig.from_dict(data, spec.model.scale)


async def rope_audit_command(lab: LabCore, args):
    spec = lab.resolve_spec(args)
    toolkit = audit_toolkit(spec, args.preset)
    grids = default_grids(spec.model.native_grid, spec.model.extra_grid)

    out_dir = ensure_output_dir(os.path.join(spec.run_dir, "rope-audit"))
    path = os.path.join(out_dir, f"rope_{args.preset or 'spec'}.csv")

    digest = spec.digest(preset=args.preset)
    rows = await run_rope_audit(toolkit, grids, path, digest)
    await save_spec(os.path.join(out_dir, "spec.json"), spec, digest)

    lab.log.info(f"RoPE angle table ({len(rows)} rows, base {toolkit.rope.base:g}, "
                 f"multiplier {toolkit.rope.base_multiplier:g}) written to {path}")


def setup(lab: LabCore):
    parser = add_common_flags(LabArgparse(prog="rope-audit"))
    parser.add_argument("--preset", choices=ToolkitConfig.PRESETS, default=None,
                        help="toolkit preset; the experiment file's toolkit when omitted")
    lab.add_command(LabCommand("rope-audit", "rotary angle ranges per frequency", parser, rope_audit_command))
