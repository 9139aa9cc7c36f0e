# -*- coding: utf-8 -*-
"""Inference-time knobs for running a model beyond its native size.

Scaled rotary bases, the time-shift factor, attention logit scaling and text
duplication. The schedule shift itself lives in :func:`extraflow.flow.shift_schedule`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import List, NamedTuple, Sequence, Tuple, Union

import numpy as np
from scipy.special import entr, softmax

from .errors import DimensionError, ParameterError, SpecError
from .flow import ScalePair, TimeSchedule, shift_schedule

log = logging.getLogger(__name__)

ATTENTION_MODES = ("off", "entropy_matching")

# switchable parts of the toolkit, in the order an ablation strips them
COMPONENTS = ("text_duplication", "attention_scale", "time_shift", "ntk_rope")


@dataclass(frozen=True)
class RopeConfig:
    head_dim: int = 64
    base: float = 10000.0
    base_multiplier: float = 1.0
    scale: ScalePair = ScalePair(1, 1)
    # off: the base stays b at any scale
    ntk_scaling: bool = True

    def __post_init__(self):
        if self.head_dim < 4 or self.head_dim % 4:
            raise ParameterError(f"head_dim must be a positive multiple of 4, got {self.head_dim}")
        if self.base <= 1:
            raise ParameterError(f"rotary base must be > 1, got {self.base}")
        if self.base_multiplier <= 0:
            raise ParameterError(f"base multiplier must be > 0, got {self.base_multiplier}")

    @property
    def effective_base(self) -> float:
        if not self.ntk_scaling:
            return self.base
        return ntk_scaled_base(self)


@dataclass(frozen=True)
class ToolkitConfig:
    rope: RopeConfig = RopeConfig()
    s_star_multiplier: float = 1.0
    attention_scale_mode: str = "off"
    text_duplication: bool = False
    time_shift: bool = False

    def __post_init__(self):
        if self.s_star_multiplier <= 0:
            raise ParameterError(f"s* multiplier must be > 0, got {self.s_star_multiplier}")
        if self.attention_scale_mode not in ATTENTION_MODES:
            raise ParameterError(f"unknown attention scale mode {self.attention_scale_mode!r}")

    PRESETS = ("plain", "lumina", "flux")

    @property
    def scale(self) -> ScalePair:
        return self.rope.scale

    @property
    def s_star(self) -> float:
        return self.s_star_multiplier * self.scale.s

    @classmethod
    def plain(cls, scale: ScalePair = ScalePair(1, 1), head_dim: int = 64, base: float = 10000.0) -> ToolkitConfig:
        return cls(RopeConfig(head_dim, base, 1.0, scale), 1.0, "off", False, False)

    @classmethod
    def lumina(cls, scale: ScalePair = ScalePair(1, 1), head_dim: int = 64, base: float = 10000.0) -> ToolkitConfig:
        return cls(RopeConfig(head_dim, base, 1.0, scale), 1.0, "entropy_matching", False, True)

    @classmethod
    def flux(cls, scale: ScalePair = ScalePair(1, 1), head_dim: int = 64, base: float = 10000.0) -> ToolkitConfig:
        return cls(RopeConfig(head_dim, base, 2.5, scale), 1.5, "entropy_matching", True, True)

    @classmethod
    def preset(cls, name: str, scale: ScalePair = ScalePair(1, 1), head_dim: int = 64,
               base: float = 10000.0) -> ToolkitConfig:
        if name not in cls.PRESETS:
            raise SpecError(f"unknown toolkit preset {name!r}, expected one of {', '.join(cls.PRESETS)}")
        return getattr(cls, name)(scale, head_dim, base)

    def with_scale(self, scale: ScalePair) -> ToolkitConfig:
        return replace(self, rope=replace(self.rope, scale=scale))

    def components(self) -> Tuple[str, ...]:
        """Toolkit parts switched on, in ablation order."""
        active = {
            "text_duplication": self.text_duplication,
            "attention_scale": self.attention_scale_mode != "off",
            "time_shift": self.time_shift,
            "ntk_rope": self.rope.ntk_scaling,
        }
        return tuple(name for name in COMPONENTS if active[name])

    def without(self, *components: str) -> ToolkitConfig:
        unknown = set(components) - set(COMPONENTS)
        if unknown:
            raise ParameterError(f"unknown toolkit components: {', '.join(sorted(unknown))}")

        cfg = self
        if "text_duplication" in components:
            cfg = replace(cfg, text_duplication=False)
        if "attention_scale" in components:
            cfg = replace(cfg, attention_scale_mode="off")
        if "time_shift" in components:
            cfg = replace(cfg, time_shift=False)
        if "ntk_rope" in components:
            cfg = replace(cfg, rope=replace(cfg.rope, ntk_scaling=False))
        return cfg

    def shifted(self, schedule: TimeSchedule) -> TimeSchedule:
        """The extrapolated-stage schedule, shifted by s* when enabled."""
        if not self.time_shift:
            return schedule
        return shift_schedule(schedule, max(1.0, self.s_star))

    def to_dict(self) -> dict:
        return {
            "head_dim": self.rope.head_dim,
            "base": self.rope.base,
            "base_multiplier": self.rope.base_multiplier,
            "ntk_scaling": self.rope.ntk_scaling,
            "s_star_multiplier": self.s_star_multiplier,
            "attention_scale_mode": self.attention_scale_mode,
            "text_duplication": self.text_duplication,
            "time_shift": self.time_shift,
        }

    @classmethod
    def from_dict(cls, data: Union[str, dict], scale: ScalePair = ScalePair(1, 1)) -> ToolkitConfig:
        if isinstance(data, str):
            return cls.preset(data, scale)
        if not isinstance(data, dict):
            raise SpecError("toolkit must be a preset name or a JSON object")

        fields = cls.preset(data.get("preset", "plain"), scale).to_dict()
        unknown = set(data) - set(fields) - {"preset"}
        if unknown:
            raise SpecError(f"unknown toolkit fields: {', '.join(sorted(unknown))}")
        fields.update({k: v for k, v in data.items() if k != "preset"})

        try:
            rope = RopeConfig(int(fields["head_dim"]), float(fields["base"]), float(fields["base_multiplier"]), scale,
                              bool(fields["ntk_scaling"]))
            return cls(
                rope,
                float(fields["s_star_multiplier"]),
                str(fields["attention_scale_mode"]),
                bool(fields["text_duplication"]),
                bool(fields["time_shift"]),
            )
        except (TypeError, ValueError, ParameterError) as e:
            raise SpecError(f"invalid toolkit: {e}") from e


def rope_frequencies(head_dim: int, base: float) -> np.ndarray:
    """theta_d = base^(-4d/head_dim) for d = 1 .. head_dim/4."""
    if head_dim < 4 or head_dim % 4:
        raise ParameterError(f"head_dim must be a positive multiple of 4, got {head_dim}")
    if base <= 1:
        raise ParameterError(f"rotary base must be > 1, got {base}")

    d = np.arange(1, head_dim // 4 + 1, dtype=np.float64)
    return base ** (-4.0 * d / head_dim)


def ntk_scaled_base(cfg: RopeConfig) -> float:
    """b' = multiplier * b * s."""
    if cfg.scale.s < 1:
        raise ParameterError(f"scale must be >= 1, got {cfg.scale.s}")
    return cfg.base_multiplier * cfg.base * cfg.scale.s


def _rotate_pairs(vectors: np.ndarray, angles: np.ndarray) -> np.ndarray:
    # vectors (..., 2n), angles broadcastable to (..., n); pairs are (2i, 2i+1)
    even = vectors[..., 0::2]
    odd = vectors[..., 1::2]
    cos, sin = np.cos(angles), np.sin(angles)

    out = np.empty_like(vectors)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def apply_rope(vectors: np.ndarray, positions: np.ndarray, base: float) -> np.ndarray:
    """2D rotary embedding of ``vectors`` (..., N, D) at ``positions`` (N, 2).

    The first D/2 dimensions rotate with the row index, the rest with the column.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64)
    head_dim = vectors.shape[-1]

    if positions.ndim != 2 or positions.shape[1] != 2:
        raise DimensionError(f"positions must have shape (N, 2), got {positions.shape}")
    if vectors.shape[-2] != positions.shape[0]:
        raise DimensionError(f"{vectors.shape[-2]} vectors but {positions.shape[0]} positions")

    theta = rope_frequencies(head_dim, base)
    half = head_dim // 2

    row_angles = positions[:, 0:1] * theta
    col_angles = positions[:, 1:2] * theta

    out = np.empty_like(vectors)
    out[..., :half] = _rotate_pairs(vectors[..., :half], row_angles)
    out[..., half:] = _rotate_pairs(vectors[..., half:], col_angles)
    return out


def rope_rotate(position: Tuple[float, float], vector: Sequence[float], cfg: RopeConfig) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (cfg.head_dim,):
        raise DimensionError(f"vector has length {vector.size}, expected {cfg.head_dim}")

    return apply_rope(vector[None], np.asarray([position], dtype=np.float64), cfg.effective_base)[0]


def attn_scale(scale: ScalePair, mode: str) -> float:
    """Logit multiplier keeping softmax entropy comparable across sequence lengths."""
    if mode not in ATTENTION_MODES:
        raise ParameterError(f"unknown attention scale mode {mode!r}")
    if scale.native_len < 2:
        raise ParameterError(f"sequence lengths must be >= 2, got {scale.native_len}")
    if mode == "off":
        return 1.0
    return math.sqrt(math.log(scale.extra_len) / math.log(scale.native_len))


def softmax_entropy(logits: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Entropy in nats of softmax(scale * logits) along the last axis."""
    p = softmax(scale * np.asarray(logits, dtype=np.float64), axis=-1)
    return entr(p).sum(axis=-1)


class TextToken(NamedTuple):
    role: str
    copy_index: int
    position: Tuple[int, int]


def integer_axis_scale(scale: ScalePair) -> int:
    """Per-axis integer factor s, for scalings where s^2 is a perfect square."""
    ratio = scale.extra_len / scale.native_len
    s2 = round(ratio)
    if scale.extra_len % scale.native_len or s2 < 1:
        raise ParameterError(f"text duplication needs an integer s^2, got {ratio:g}")

    s = math.isqrt(s2)
    if s * s != s2:
        raise ParameterError(f"text duplication needs an integer per-axis s, s^2 = {s2}")
    return s


def duplicate_text(text_len: int, scale: ScalePair, image_grid: Tuple[int, int]) -> List[TextToken]:
    """s^2 copies of the text block, copy k anchored at its block of an s x s grid.

    Copy 0 sits at (0, 0) like native text tokens; blocks run row-major.
    """
    if text_len < 0:
        raise ParameterError(f"text length must be >= 0, got {text_len}")

    s = integer_axis_scale(scale)
    rows, cols = image_grid
    block_h, block_w = rows // s, cols // s

    tokens = []
    for k in range(s * s):
        anchor = ((k // s) * block_h, (k % s) * block_w)
        tokens.extend(TextToken("text", k, anchor) for _ in range(text_len))

    log.debug("duplicated %d text tokens x%d over a %dx%d grid", text_len, s * s, rows, cols)
    return tokens
