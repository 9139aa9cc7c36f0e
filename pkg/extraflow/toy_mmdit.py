# -*- coding: utf-8 -*-
"""A forward-only joint text/image attention stack with random weights.

Nothing here generates images. The stack exists to measure what the toolkit
does to attention at longer sequence lengths: entropy, the share of attention
image tokens spend on text, and rotary angle ranges.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import entr, softmax

from .errors import DimensionError, NumericError, ParameterError
from .flow import ScalePair, seeded_rng
from .toolkit import RopeConfig, ToolkitConfig, apply_rope, attn_scale, duplicate_text, rope_frequencies

log = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-6
RMS_EPS = 1e-6


def _square(grid: Union[int, Sequence[int]]) -> Tuple[int, int]:
    if isinstance(grid, (int, np.integer)):
        return int(grid), int(grid)
    rows, cols = grid
    return int(rows), int(cols)


@dataclass(frozen=True, eq=False)
class TokenSequence:
    is_text: np.ndarray
    positions: np.ndarray
    features: np.ndarray
    image_grid: Tuple[int, int]

    def __post_init__(self):
        n = self.features.shape[0]
        if n == 0:
            raise ParameterError("token sequence is empty")
        if self.is_text.shape != (n,) or self.positions.shape != (n, 2):
            raise DimensionError("roles, positions and features disagree in length")

        rows, cols = self.image_grid
        image = self.positions[~self.is_text]
        if len(image) != rows * cols:
            raise DimensionError(f"{len(image)} image tokens for a {rows}x{cols} grid")
        flat = image[:, 0] * cols + image[:, 1]
        if len(np.unique(flat)) != rows * cols or flat.min() < 0 or flat.max() >= rows * cols:
            raise DimensionError("image token positions must cover the grid exactly once")

        for arr in (self.is_text, self.positions, self.features):
            arr.setflags(write=False)

    def __len__(self):
        return self.features.shape[0]

    @property
    def model_dim(self) -> int:
        return self.features.shape[1]

    @property
    def text_count(self) -> int:
        return int(self.is_text.sum())

    @property
    def image_count(self) -> int:
        return len(self) - self.text_count


def _layout(text_len: int, image_grid: Tuple[int, int], scale: Optional[ScalePair],
            duplicate: bool) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = image_grid

    if duplicate and scale is not None:
        text = duplicate_text(text_len, scale, image_grid)
        text_pos = [tok.position for tok in text]
    else:
        text_pos = [(0, 0)] * text_len

    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    image_pos = np.stack([r.ravel(), c.ravel()], axis=1)

    positions = np.concatenate([np.asarray(text_pos, dtype=np.int64).reshape(-1, 2), image_pos])
    is_text = np.zeros(len(positions), dtype=bool)
    is_text[:len(text_pos)] = True
    return is_text, positions


def build_sequence(text_len: int, image_grid: Union[int, Sequence[int]], model_dim: int, seed: int,
                   scale: Optional[ScalePair] = None, duplicate: bool = False) -> TokenSequence:
    """Text block (repeated when ``duplicate``) followed by a row-major image grid.

    Text features depend only on ``seed``, so native and extrapolated
    sequences built from one seed share their prompt.
    """
    grid = _square(image_grid)
    is_text, positions = _layout(text_len, grid, scale, duplicate)

    prompt = seeded_rng(seed, 0).standard_normal((text_len, model_dim))
    copies = is_text.sum() // text_len if text_len else 0
    image = seeded_rng(seed, 1, *grid).standard_normal((grid[0] * grid[1], model_dim))

    features = np.concatenate([np.tile(prompt, (copies, 1)), image])
    return TokenSequence(is_text, positions, features, grid)


def zero_sequence(text_len: int, image_grid: Union[int, Sequence[int]], model_dim: int,
                  scale: Optional[ScalePair] = None, duplicate: bool = False) -> TokenSequence:
    grid = _square(image_grid)
    is_text, positions = _layout(text_len, grid, scale, duplicate)
    return TokenSequence(is_text, positions, np.zeros((len(positions), model_dim)), grid)


class LayerWeights(NamedTuple):
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray


@dataclass(frozen=True, eq=False)
class ToyMMDiT:
    seed: int
    model_dim: int
    head_dim: int
    n_heads: int
    layers: Tuple[LayerWeights, ...]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def checksum(self, layer: int = 0) -> float:
        return float(sum(np.sum(w) for w in self.layers[layer]))


def build_model(seed: int = 0, model_dim: int = 256, head_dim: int = 64, n_heads: int = 4,
                n_layers: int = 2) -> ToyMMDiT:
    if model_dim != head_dim * n_heads:
        raise ParameterError(f"model_dim {model_dim} != head_dim {head_dim} x n_heads {n_heads}")
    if head_dim % 4:
        raise ParameterError(f"head_dim must be a multiple of 4 for 2D rotary embedding, got {head_dim}")
    if n_layers < 0:
        raise ParameterError(f"n_layers must be >= 0, got {n_layers}")

    std = model_dim ** -0.5
    layers = []
    for i in range(n_layers):
        rng = seeded_rng(seed, i)
        mats = [rng.normal(0.0, std, (model_dim, model_dim)) for _ in range(4)]
        for m in mats:
            m.setflags(write=False)
        layers.append(LayerWeights(*mats))

    return ToyMMDiT(seed, model_dim, head_dim, n_heads, tuple(layers))


@dataclass(frozen=True)
class AttnStats:
    layer: int
    per_head_entropy: Tuple[float, ...]
    text_mass_per_image_token: Tuple[float, ...]
    max_logit: float

    @property
    def mean_entropy(self) -> float:
        return float(np.mean(self.per_head_entropy))

    @property
    def mean_text_mass(self) -> float:
        return float(np.mean(self.text_mass_per_image_token))


def _rms_norm(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x ** 2, axis=-1, keepdims=True) + RMS_EPS)


def _logit_scale(toolkit: ToolkitConfig) -> float:
    if toolkit.attention_scale_mode == "off":
        return 1.0
    return attn_scale(toolkit.scale, toolkit.attention_scale_mode)


def forward(model: ToyMMDiT, seq: TokenSequence, toolkit: ToolkitConfig,
            chunk: int = 256) -> Tuple[np.ndarray, List[AttnStats]]:
    """Run every layer, returning the output features and per-layer attention statistics."""
    if seq.model_dim != model.model_dim:
        raise DimensionError(f"sequence features have width {seq.model_dim}, model expects {model.model_dim}")
    if toolkit.rope.head_dim != model.head_dim:
        raise DimensionError(f"toolkit head_dim {toolkit.rope.head_dim} != model head_dim {model.head_dim}")

    chunk = max(1, int(chunk))
    n, h, hd = len(seq), model.n_heads, model.head_dim
    base = toolkit.rope.effective_base
    scale = _logit_scale(toolkit) / np.sqrt(hd)
    text_cols = seq.is_text
    image_rows = ~seq.is_text

    x = np.array(seq.features, dtype=np.float64)
    stats = []

    for li, w in enumerate(model.layers):
        q = apply_rope((x @ w.wq).reshape(n, h, hd).transpose(1, 0, 2), seq.positions, base)
        k = apply_rope((x @ w.wk).reshape(n, h, hd).transpose(1, 0, 2), seq.positions, base)
        v = (x @ w.wv).reshape(n, h, hd).transpose(1, 0, 2)

        out = np.empty_like(v)
        entropy = np.zeros(h)
        text_mass = np.zeros(h)
        max_logit = -np.inf

        for head in range(h):
            for start in range(0, n, chunk):
                stop = min(start + chunk, n)
                logits = scale * (q[head, start:stop] @ k[head].T)
                p = softmax(logits, axis=-1)

                if not np.all(np.abs(p.sum(axis=-1) - 1.0) <= ROW_SUM_TOL):
                    raise NumericError("attention rows do not sum to 1", layer=li)

                entropy[head] += entr(p).sum()
                rows = image_rows[start:stop]
                text_mass[head] += p[rows][:, text_cols].sum()
                max_logit = max(max_logit, float(logits.max()))
                out[head, start:stop] = p @ v[head]

        entropy /= n
        text_mass /= max(1, seq.image_count)

        merged = out.transpose(1, 0, 2).reshape(n, h * hd) @ w.wo
        x = _rms_norm(x + merged)

        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite features", layer=li)

        stats.append(AttnStats(li, tuple(entropy.tolist()), tuple(text_mass.tolist()), max_logit))
        log.debug("layer %d: entropy %.4f, text mass %.4f", li, stats[-1].mean_entropy, stats[-1].mean_text_mass)

    return x, stats


def forward_audit(model: ToyMMDiT, seq: TokenSequence, toolkit: ToolkitConfig, chunk: int = 256) -> List[AttnStats]:
    return forward(model, seq, toolkit, chunk)[1]


class AngleRow(NamedTuple):
    dim: int
    theta: float
    max_native_angle: float
    max_extra_angle_scaled: float
    max_extra_angle_unscaled: float
    effective_base: float


def rope_angle_audit(cfg: RopeConfig, native_grid: Union[int, Sequence[int]],
                     extra_grid: Union[int, Sequence[int]]) -> List[AngleRow]:
    """Largest rotation angle per frequency, with the grid side as the largest position."""
    nh, nw = _square(native_grid)
    eh, ew = _square(extra_grid)
    if nh != nw or eh != ew:
        raise ParameterError("the angle audit takes square grids")

    scaled = replace(cfg, scale=ScalePair(nh * nw, eh * ew))
    b_scaled = scaled.effective_base

    theta = rope_frequencies(cfg.head_dim, cfg.base)
    theta_scaled = rope_frequencies(cfg.head_dim, b_scaled)

    return [
        AngleRow(d + 1, float(theta[d]), float(nh * theta[d]), float(eh * theta_scaled[d]),
                 float(eh * theta[d]), b_scaled)
        for d in range(len(theta))
    ]
