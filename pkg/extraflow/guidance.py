# -*- coding: utf-8 -*-
"""Low-resolution guidance for extrapolated sampling.

A native-size result is upsampled into a band-limited guide. Projected flow
steers only the low band of the extrapolated flow along the straight line to
that guide; SDEdit and skip-residual are the baselines it is compared with.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple, Union

import numpy as np

from .errors import DimensionError, ParameterError, SpecError
from .flow import (
    FlowState, Grid, ScalePair, StepObserver, TimeSchedule, VelocitySource,
    SeedKey, VelocityTransform, interpolate, sample, seed_key, seeded_rng,
)
from .oracle import DegradationConfig, MixtureSpec, bind_source, degraded_source, exact_source
from .projection import ProjectionConfig, lowpass, resample_factor, upsample_bandlimited

log = logging.getLogger(__name__)

MODES = ("none", "projected_flow", "sdedit", "skip_residual")

# seed streams: (seed, stream)
NATIVE_NOISE = 0
EXTRA_NOISE = 1
SDEDIT_NOISE = 3


def alpha_cosine(t: float) -> float:
    if not (0.0 <= t <= 1.0):
        raise ParameterError(f"t must lie in [0, 1], got {t}")
    return 1.0 + 0.5 * math.cos(math.pi * t)


@dataclass(frozen=True)
class AlphaSchedule:
    kind: str = "cosine_decay"
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("cosine_decay", "constant"):
            raise ParameterError(f"unknown alpha schedule {self.kind!r}")

    @classmethod
    def cosine_decay(cls) -> AlphaSchedule:
        return cls("cosine_decay")

    @classmethod
    def constant(cls, value: float) -> AlphaSchedule:
        return cls("constant", float(value))

    def __call__(self, t: float) -> float:
        if self.kind == "constant":
            return self.value
        return alpha_cosine(t)


@dataclass(frozen=True)
class WeightSchedule:
    """Skip-residual weight: ``scale * (1 + cos(pi t)) / 2`` or a constant ``scale``."""

    kind: str = "cosine"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("cosine", "constant"):
            raise ParameterError(f"unknown weight schedule {self.kind!r}")
        if self.scale < 0:
            raise ParameterError(f"weight scale must be >= 0, got {self.scale}")

    def __call__(self, t: float) -> float:
        if self.kind == "constant":
            return self.scale
        return self.scale * 0.5 * (1.0 + math.cos(math.pi * t))


@dataclass(frozen=True)
class GuidanceConfig:
    mode: str = "projected_flow"
    alpha_schedule: AlphaSchedule = field(default_factory=AlphaSchedule)
    sdedit_start_t: float = 0.6
    skip_residual_weight: WeightSchedule = field(default_factory=WeightSchedule)
    # None means the native band of the run
    projection: Optional[ProjectionConfig] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"unknown guidance mode {self.mode!r}, expected one of {', '.join(MODES)}")
        if not (0.0 < self.sdedit_start_t < 1.0):
            raise ParameterError(f"sdedit_start_t must lie in (0, 1), got {self.sdedit_start_t}")

    def with_mode(self, mode: str) -> GuidanceConfig:
        return replace(self, mode=mode)

    def projection_for(self, native_res: int, extra_res: int) -> ProjectionConfig:
        if self.projection is not None:
            return self.projection
        return ProjectionConfig.native_band(native_res, extra_res)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "alpha": {"kind": self.alpha_schedule.kind, "value": self.alpha_schedule.value},
            "sdedit_start_t": self.sdedit_start_t,
            "skip_residual_weight": {"kind": self.skip_residual_weight.kind,
                                     "scale": self.skip_residual_weight.scale},
            "projection": None if self.projection is None else self.projection.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Union[str, dict]) -> GuidanceConfig:
        if isinstance(data, str):
            data = {"mode": data}
        if not isinstance(data, dict):
            raise SpecError("guidance must be a mode name or a JSON object")

        try:
            alpha = data.get("alpha", {})
            weight = data.get("skip_residual_weight", {})
            proj = data.get("projection")
            return cls(
                mode=data.get("mode", "projected_flow"),
                alpha_schedule=AlphaSchedule(alpha.get("kind", "cosine_decay"), float(alpha.get("value", 1.0))),
                sdedit_start_t=float(data.get("sdedit_start_t", 0.6)),
                skip_residual_weight=WeightSchedule(weight.get("kind", "cosine"), float(weight.get("scale", 1.0))),
                projection=None if proj is None else ProjectionConfig.from_dict(proj),
            )
        except (AttributeError, TypeError, ValueError, ParameterError) as e:
            raise SpecError(f"invalid guidance: {e}") from e


@dataclass(frozen=True)
class GuidanceContext:
    x1_native_up: Grid
    x0_extra: Grid
    scale: ScalePair

    def __post_init__(self):
        if self.x1_native_up.shape != self.x0_extra.shape:
            raise DimensionError(
                f"guide {self.x1_native_up.shape} and initial noise {self.x0_extra.shape} differ in shape"
            )

    @classmethod
    def from_native(cls, x1_native: Grid, x0_extra: Grid) -> GuidanceContext:
        factor = resample_factor((x1_native.height, x1_native.width), (x0_extra.height, x0_extra.width))
        up = upsample_bandlimited(x1_native, factor)
        scale = ScalePair(x1_native.height * x1_native.width, x0_extra.height * x0_extra.width)
        return cls(up, x0_extra, scale)


def _check_t(t: float):
    if not (0.0 <= t < 1.0):
        raise ParameterError(f"guidance is defined for t in [0, 1), got {t}")


def projected_flow_velocity(v: Grid, x_t: Grid, ctx: GuidanceContext, t: float, alpha: float,
                            proj: ProjectionConfig) -> Grid:
    """v + alpha * ((guide - P x_t) / (1 - t) - P v)."""
    _check_t(t)
    if v.shape != x_t.shape or v.shape != ctx.x1_native_up.shape:
        raise DimensionError("velocity, state and guide must share the extrapolated shape")
    if alpha == 0.0:
        return v

    target = (ctx.x1_native_up.data - lowpass(x_t, proj).data) / (1.0 - t)
    return Grid.wrap(v.data + alpha * (target - lowpass(v, proj).data))


def skip_residual_velocity(v: Grid, x_t: Grid, ctx: GuidanceContext, t: float, weight: float) -> Grid:
    """v + weight * (r_t - x_t) / (1 - t), with r_t on the line from the run's own noise to the guide."""
    _check_t(t)
    if v.shape != x_t.shape or v.shape != ctx.x1_native_up.shape:
        raise DimensionError("velocity, state and guide must share the extrapolated shape")
    if weight == 0.0:
        return v

    reference = interpolate(ctx.x0_extra, ctx.x1_native_up, t)
    return Grid.wrap(v.data + weight * (reference.data - x_t.data) / (1.0 - t))


def sdedit_start(ctx: GuidanceContext, start_t: float, seed: SeedKey) -> FlowState:
    if not (0.0 < start_t < 1.0):
        raise ParameterError(f"start_t must lie in (0, 1), got {start_t}")

    noise = Grid.noise(ctx.x1_native_up.shape, seeded_rng(*seed_key(seed), SDEDIT_NOISE))
    return FlowState(interpolate(noise, ctx.x1_native_up, start_t), start_t)


def make_guide(cfg: GuidanceConfig, ctx: GuidanceContext, proj: ProjectionConfig) -> Optional[VelocityTransform]:
    """Bind a guidance config to a run; None when the mode leaves velocities alone."""
    if cfg.mode == "projected_flow":
        def guide(v: Grid, x_t: Grid, t: float) -> Grid:
            return projected_flow_velocity(v, x_t, ctx, t, cfg.alpha_schedule(t), proj)
        return guide

    if cfg.mode == "skip_residual":
        def guide(v: Grid, x_t: Grid, t: float) -> Grid:
            return skip_residual_velocity(v, x_t, ctx, t, cfg.skip_residual_weight(t))
        return guide

    return None


def projection_error(x1_extra: Grid, ctx: GuidanceContext, proj: ProjectionConfig) -> float:
    """RMS of P(x1_extra) - guide, per pixel."""
    return (lowpass(x1_extra, proj) - ctx.x1_native_up).rms()


def high_band_energy(x: Grid, proj: ProjectionConfig) -> float:
    high = x.data - lowpass(x, proj).data
    return float(np.mean(high ** 2))


@dataclass(frozen=True)
class StageSources:
    """Velocity sources for the native and the extrapolated stage."""

    native: VelocitySource
    extra: VelocitySource
    channels: int

    @classmethod
    def from_mixture(cls, spec: MixtureSpec, deg: Optional[DegradationConfig] = None) -> StageSources:
        extra = exact_source(spec) if deg is None else degraded_source(spec, deg)
        return cls(exact_source(spec), extra, spec.channels)


@dataclass(frozen=True)
class TwoStageResult:
    x1_native: Grid
    x1_extra: Grid
    context: GuidanceContext
    projection: ProjectionConfig


def sample_native(sources: StageSources, native_res: int, schedule: TimeSchedule, seed: SeedKey) -> Grid:
    shape = (sources.channels, native_res, native_res)
    x0 = Grid.noise(shape, seeded_rng(*seed_key(seed), NATIVE_NOISE))
    return sample(sources.native, schedule, x0)


def two_stage_sample(
        sources: Union[StageSources, MixtureSpec],
        native_res: int,
        extra_res: int,
        schedules: Tuple[TimeSchedule, TimeSchedule],
        guidance: GuidanceConfig,
        seed: SeedKey,
        *,
        degradation: Optional[DegradationConfig] = None,
        x1_native: Optional[Grid] = None,
        observer: Optional[StepObserver] = None,
) -> TwoStageResult:
    """Sample at native size, then at extrapolated size under ``guidance``.

    A mixture spec is turned into exact native and (optionally degraded)
    extrapolated sources. ``x1_native`` skips stage one when the caller
    already has it for this seed.
    """
    if isinstance(sources, MixtureSpec):
        sources = StageSources.from_mixture(sources, degradation)

    factor = resample_factor(native_res, extra_res)
    native_schedule, extra_schedule = schedules
    key = seed_key(seed)

    if x1_native is None:
        x1_native = sample_native(sources, native_res, native_schedule, key)
    elif x1_native.shape != (sources.channels, native_res, native_res):
        raise DimensionError(f"native result has shape {x1_native.shape}")

    x0_extra = Grid.noise((sources.channels, extra_res, extra_res), seeded_rng(*key, EXTRA_NOISE))
    ctx = GuidanceContext.from_native(x1_native, x0_extra)
    proj = guidance.projection_for(native_res, extra_res)

    extra = bind_source(sources.extra, key, native_res)

    if guidance.mode == "sdedit":
        start = sdedit_start(ctx, guidance.sdedit_start_t, key)
        x1_extra = sample(extra, extra_schedule, start.x, start_t=start.t, observer=observer)
    else:
        guide = make_guide(guidance, ctx, proj)
        x1_extra = sample(extra, extra_schedule, x0_extra, guide, observer=observer)

    log.debug("two-stage sample seed=%s mode=%s factor=%d", key, guidance.mode, factor)
    return TwoStageResult(x1_native, x1_extra, ctx, proj)
