# -*- coding: utf-8 -*-
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import aiofiles
import orjson

from extraflow.errors import ExtraflowException, SpecError
from extraflow.flow import ScalePair, TimeSchedule, uniform_schedule
from extraflow.guidance import MODES, GuidanceConfig
from extraflow.oracle import DegradationConfig, MixtureSpec
from extraflow.toolkit import ToolkitConfig

DEFAULT_LOSS_TIMESTEPS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class ModelSpec:
    """Toy transformer and token grids used by the attention audits."""

    model_dim: int = 256
    head_dim: int = 64
    n_heads: int = 4
    n_layers: int = 2
    text_len: int = 32
    native_grid: int = 16
    extra_grid: int = 64

    def __post_init__(self):
        if self.extra_grid < self.native_grid or self.extra_grid % self.native_grid:
            raise SpecError(f"model extra_grid {self.extra_grid} must be a multiple of native_grid {self.native_grid}")

    @property
    def scale(self) -> ScalePair:
        return ScalePair.from_grids(self.native_grid, self.extra_grid)

    def to_dict(self) -> dict:
        return {
            "model_dim": self.model_dim,
            "head_dim": self.head_dim,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "text_len": self.text_len,
            "native_grid": self.native_grid,
            "extra_grid": self.extra_grid,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ModelSpec:
        base = cls().to_dict()
        unknown = set(data) - set(base)
        if unknown:
            raise SpecError(f"unknown model fields: {', '.join(sorted(unknown))}")
        base.update(data)
        try:
            return cls(**{k: int(v) for k, v in base.items()})
        except (TypeError, ValueError) as e:
            raise SpecError(f"invalid model: {e}") from e


def _seeds(value) -> Tuple[int, ...]:
    if isinstance(value, dict):
        try:
            start, count = int(value.get("start", 0)), int(value["count"])
        except (KeyError, TypeError, ValueError) as e:
            raise SpecError("seeds object needs an integer 'count' and optional 'start'") from e
        seeds = tuple(range(start, start + count))
    elif isinstance(value, (list, tuple)):
        try:
            seeds = tuple(int(s) for s in value)
        except (TypeError, ValueError) as e:
            raise SpecError("seeds must be integers") from e
    else:
        raise SpecError("seeds must be a list or a {start, count} object")

    if not seeds:
        raise SpecError("seeds must not be empty")
    if len(set(seeds)) != len(seeds):
        raise SpecError("seeds must be distinct")
    return seeds


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    mixture: MixtureSpec
    native_res: int = 32
    extra_res: int = 128
    steps_native: int = 30
    steps_extra: int = 30
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    toolkit_preset: object = "plain"
    degradation: DegradationConfig = field(default_factory=DegradationConfig.default)
    seeds: Tuple[int, ...] = tuple(range(64))
    output_dir: str = "runs"
    modes: Tuple[str, ...] = MODES
    loss_samples: int = 64
    loss_timesteps: Tuple[float, ...] = DEFAULT_LOSS_TIMESTEPS
    model: ModelSpec = field(default_factory=ModelSpec)
    audit_seeds: Tuple[int, ...] = tuple(range(8))
    # mixture for the loss diagnostic; None means the sampling mixture
    loss_mixture: Optional[MixtureSpec] = None

    def __post_init__(self):
        if not self.name or any(c in self.name for c in "/\\"):
            raise SpecError(f"invalid experiment name {self.name!r}")
        if self.native_res < 1 or self.extra_res < 1:
            raise SpecError("resolutions must be positive")
        if self.extra_res % self.native_res:
            raise SpecError(f"extra_res {self.extra_res} is not a multiple of native_res {self.native_res}")
        if self.steps_native < 1 or self.steps_extra < 1:
            raise SpecError("step counts must be positive")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise SpecError("seeds must be nonempty and distinct")
        if not self.audit_seeds:
            raise SpecError("audit_seeds must not be empty")
        if any(m not in MODES for m in self.modes) or not self.modes:
            raise SpecError(f"modes must be drawn from {', '.join(MODES)}")
        if self.loss_samples < 1:
            raise SpecError("loss_samples must be positive")
        if any(not (0.0 < t < 1.0) for t in self.loss_timesteps) or \
                list(self.loss_timesteps) != sorted(set(self.loss_timesteps)):
            raise SpecError("loss_timesteps must be strictly increasing and inside (0, 1)")

        # resolve now so a bad preset fails before any computation
        _ = self.toolkit

    @classmethod
    def testbed(cls, name: str = "testbed") -> ExperimentSpec:
        return cls(
            name=name,
            mixture=MixtureSpec.testbed(),
            loss_mixture=MixtureSpec.loss_testbed(),
        )

    @property
    def scale(self) -> ScalePair:
        return ScalePair.from_grids(self.native_res, self.extra_res)

    @property
    def toolkit(self) -> ToolkitConfig:
        try:
            return ToolkitConfig.from_dict(self.toolkit_preset, self.scale)
        except ExtraflowException as e:
            raise SpecError(str(e)) from e

    @property
    def native_schedule(self) -> TimeSchedule:
        return uniform_schedule(self.steps_native)

    @property
    def extra_schedule(self) -> TimeSchedule:
        return self.toolkit.shifted(uniform_schedule(self.steps_extra))

    @property
    def diagnostic_mixture(self) -> MixtureSpec:
        return self.mixture if self.loss_mixture is None else self.loss_mixture

    @property
    def run_dir(self) -> str:
        return os.path.join(self.output_dir, self.name)

    def with_overrides(self, out: Optional[str] = None, seed: Optional[int] = None) -> ExperimentSpec:
        spec = self
        if out is not None:
            spec = replace(spec, output_dir=out)
        if seed is not None:
            spec = replace(spec, seeds=(seed,), audit_seeds=(seed,))
        return spec

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mixture": self.mixture.to_dict(),
            "native_res": self.native_res,
            "extra_res": self.extra_res,
            "steps_native": self.steps_native,
            "steps_extra": self.steps_extra,
            "guidance": self.guidance.to_dict(),
            "toolkit": self.toolkit_preset,
            "degradation": self.degradation.to_dict(),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "modes": list(self.modes),
            "loss_samples": self.loss_samples,
            "loss_timesteps": list(self.loss_timesteps),
            "model": self.model.to_dict(),
            "audit_seeds": list(self.audit_seeds),
            "loss_mixture": None if self.loss_mixture is None else self.loss_mixture.to_dict(),
        }

    def digest(self, **overrides) -> str:
        """sha256 of the canonical document, output directory excluded.

        Command-line overrides that change an output (a preset, a variant
        list) are folded in; ``None`` values are left out.
        """
        data = self.to_dict()
        data.pop("output_dir")
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if overrides:
            data["overrides"] = overrides
        return hashlib.sha256(orjson.dumps(data, option=orjson.OPT_SORT_KEYS)).hexdigest()

    @classmethod
    def from_dict(cls, data: dict, base_dir: str = ".") -> ExperimentSpec:
        if not isinstance(data, dict):
            raise SpecError("experiment spec must be a JSON object")

        known = set(cls.testbed().to_dict())
        unknown = set(data) - known
        if unknown:
            raise SpecError(f"unknown experiment fields: {', '.join(sorted(unknown))}")

        default = cls.testbed(str(data.get("name", "testbed")))
        kwargs = {"name": default.name}

        if "mixture" in data:
            kwargs["mixture"] = _mixture(data["mixture"], base_dir)
            # a custom mixture is its own loss mixture unless one is named
            kwargs["loss_mixture"] = None
        else:
            kwargs["mixture"] = default.mixture
            kwargs["loss_mixture"] = default.loss_mixture
        if "loss_mixture" in data:
            value = data["loss_mixture"]
            kwargs["loss_mixture"] = None if value is None else _mixture(value, base_dir)

        try:
            for key in ("native_res", "extra_res", "steps_native", "steps_extra", "loss_samples"):
                kwargs[key] = int(data.get(key, getattr(default, key)))
            kwargs["loss_timesteps"] = tuple(float(t) for t in data.get("loss_timesteps", default.loss_timesteps))
        except (TypeError, ValueError) as e:
            raise SpecError(f"invalid experiment field: {e}") from e

        kwargs["guidance"] = _guidance(data.get("guidance"), default.guidance)
        kwargs["toolkit_preset"] = data.get("toolkit", default.toolkit_preset)
        kwargs["degradation"] = DegradationConfig.from_dict(data.get("degradation", "default"))
        kwargs["seeds"] = _seeds(data["seeds"]) if "seeds" in data else default.seeds
        kwargs["audit_seeds"] = _seeds(data["audit_seeds"]) if "audit_seeds" in data else default.audit_seeds
        kwargs["output_dir"] = str(data.get("output_dir", default.output_dir))
        kwargs["modes"] = tuple(data.get("modes", default.modes))
        kwargs["model"] = ModelSpec.from_dict(data["model"]) if "model" in data else default.model

        return cls(**kwargs)


def read_json(path: str):
    try:
        with open(path, "rb") as f:
            return orjson.loads(f.read())
    except FileNotFoundError as e:
        raise SpecError(f"spec file not found: {path}") from e
    except orjson.JSONDecodeError as e:
        raise SpecError(f"{path} is not valid JSON: {e}") from e


def _mixture(value, base_dir: str) -> MixtureSpec:
    # inline object or a path relative to the experiment file
    if isinstance(value, str):
        return MixtureSpec.from_dict(read_json(os.path.join(base_dir, value)))
    return MixtureSpec.from_dict(value)


def _guidance(value, default: GuidanceConfig) -> GuidanceConfig:
    # fields left out keep the testbed's values
    if value is None:
        return default
    if isinstance(value, str):
        value = {"mode": value}
    if not isinstance(value, dict):
        raise SpecError("guidance must be a mode name or a JSON object")
    return GuidanceConfig.from_dict({**default.to_dict(), **value})


async def save_spec(path: str, spec: ExperimentSpec, digest: Optional[str] = None) -> str:
    """Resolved spec next to the outputs it produced, stamped with its digest."""
    document = {"digest": digest or spec.digest(), "spec": spec.to_dict()}
    async with aiofiles.open(path, "wb") as f:
        await f.write(orjson.dumps(document, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
    return path
