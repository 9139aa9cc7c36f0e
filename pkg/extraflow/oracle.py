# -*- coding: utf-8 -*-
"""Closed-form velocity oracles standing in for a trained flow model.

The image distribution is a Gaussian mixture whose component means are
band-limited procedural fields. Its marginal velocity is available in closed
form at any resolution that divides the canonical one.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax

from .errors import DimensionError, ParameterError, SpecError
from .flow import Grid, SeedKey, TimeSchedule, interpolate, seed_key, seeded_rng, time_key
from .projection import ProjectionConfig, downsample, highpass

log = logging.getLogger(__name__)

PROFILES = ("flat", "midband")


def band_limited_field(seed: int, channels: int, resolution: int, band: int, amplitude: float = 1.0) -> np.ndarray:
    """Smooth random field with no energy at or above the Nyquist bin of a ``band`` grid.

    Seeded white noise is shaped by a Gaussian envelope, cut hard at
    |k| < band/2 per axis and rescaled to RMS ``amplitude``.
    """
    if band > resolution or resolution % band:
        raise ParameterError(f"band resolution {band} must divide canonical resolution {resolution}")

    rng = np.random.default_rng([int(seed), 0x6d65616e])
    white = rng.standard_normal((channels, resolution, resolution))

    k = np.fft.fftfreq(resolution, d=1.0 / resolution)
    kr, kc = np.meshgrid(k, k, indexing="ij")
    envelope = np.exp(-(kr ** 2 + kc ** 2) / (2.0 * (band / 6.0) ** 2))
    envelope *= (np.abs(kr) * 2 < band) & (np.abs(kc) * 2 < band)

    smooth = np.fft.ifft2(np.fft.fft2(white, axes=(-2, -1)) * envelope, axes=(-2, -1)).real
    rms = float(np.sqrt(np.mean(smooth ** 2)))
    if rms == 0.0:
        return smooth
    return smooth * (amplitude / rms)


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Gaussian mixture "image distribution".

    Means come either from ``mean_seeds`` (regenerated on demand, serialisable)
    or from explicit arrays passed through :meth:`from_means`.
    """

    weights: Tuple[float, ...]
    data_spread: float = 0.1
    canonical_resolution: int = 128
    channels: int = 3
    band_resolution: int = 32
    amplitude: float = 1.0
    mean_seeds: Optional[Tuple[int, ...]] = None
    means: Optional[np.ndarray] = field(default=None, repr=False)
    _cache: Dict[int, np.ndarray] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "weights", weights)

        if not weights:
            raise ParameterError("a mixture needs at least one component")
        if any(w <= 0 for w in weights):
            raise ParameterError("component weights must be positive")
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ParameterError(f"component weights must sum to 1, got {math.fsum(weights)!r}")
        if self.data_spread < 0:
            raise ParameterError(f"data spread must be >= 0, got {self.data_spread}")
        if self.canonical_resolution < 1 or self.channels < 1:
            raise ParameterError("canonical resolution and channel count must be positive")

        if self.means is not None:
            means = np.array(self.means, dtype=np.float64)
            expected = (len(weights), self.channels, self.canonical_resolution, self.canonical_resolution)
            if means.shape != expected:
                raise DimensionError(f"mean images have shape {means.shape}, expected {expected}")
            means.setflags(write=False)
            object.__setattr__(self, "means", means)
        else:
            if self.mean_seeds is None or len(self.mean_seeds) != len(weights):
                raise ParameterError("mean_seeds must name one seed per component")
            object.__setattr__(self, "mean_seeds", tuple(int(s) for s in self.mean_seeds))
            if self.band_resolution < 1 or self.canonical_resolution % self.band_resolution:
                raise ParameterError(
                    f"band resolution {self.band_resolution} must divide canonical resolution {self.canonical_resolution}"
                )

    @property
    def k(self) -> int:
        return len(self.weights)

    @classmethod
    def testbed(cls) -> MixtureSpec:
        return cls(
            weights=(1 / 3, 1 / 3, 1 / 3),
            data_spread=0.1,
            canonical_resolution=128,
            channels=3,
            band_resolution=32,
            amplitude=1.0,
            mean_seeds=(11, 23, 37),
        )

    @classmethod
    def loss_testbed(cls) -> MixtureSpec:
        """Testbed means under a wide spread, for the loss diagnostic.

        With spread s the exact loss s^2 / (t^2 s^2 + (1-t)^2) falls on
        (1 / (1 + s^2), 1); at s = 3 that covers every timestep past 0.1.
        """
        return cls(
            weights=(1 / 3, 1 / 3, 1 / 3),
            data_spread=3.0,
            canonical_resolution=128,
            channels=3,
            band_resolution=32,
            amplitude=1.0,
            mean_seeds=(11, 23, 37),
        )

    @classmethod
    def from_means(cls, weights: Sequence[float], means, data_spread: float = 0.0) -> MixtureSpec:
        """In-memory mixture with explicit mean images of shape (K, C, N, N)."""
        arr = np.asarray(means, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None, None, None]
        if arr.ndim != 4 or arr.shape[2] != arr.shape[3]:
            raise DimensionError(f"mean images must be square (K, C, N, N), got {arr.shape}")

        return cls(
            weights=tuple(weights),
            data_spread=data_spread,
            canonical_resolution=arr.shape[2],
            channels=arr.shape[1],
            band_resolution=arr.shape[2],
            amplitude=float(np.sqrt(np.mean(arr ** 2))),
            means=arr,
        )

    def mean_images(self, resolution: Optional[int] = None) -> np.ndarray:
        """Component means as an array (K, C, r, r), pooled down from canonical size."""
        resolution = self.canonical_resolution if resolution is None else int(resolution)
        self._check_resolution(resolution)

        cached = self._cache.get(resolution)
        if cached is not None:
            return cached

        if resolution == self.canonical_resolution:
            if self.means is not None:
                out = self.means
            else:
                out = np.stack([
                    band_limited_field(seed, self.channels, self.canonical_resolution,
                                       self.band_resolution, self.amplitude)
                    for seed in self.mean_seeds
                ])
        else:
            factor = self.canonical_resolution // resolution
            full = self.mean_images()
            out = np.stack([downsample(Grid.wrap(m), factor).data for m in full])

        out = np.array(out, dtype=np.float64)
        out.setflags(write=False)
        self._cache[resolution] = out
        return out

    def _check_resolution(self, resolution: int):
        if resolution < 1 or resolution > self.canonical_resolution:
            raise ParameterError(
                f"resolution {resolution} is outside (0, {self.canonical_resolution}]"
            )
        if self.canonical_resolution % resolution:
            raise DimensionError(
                f"resolution {resolution} does not divide canonical resolution {self.canonical_resolution}"
            )

    def to_dict(self) -> dict:
        if self.means is not None:
            raise SpecError("mixtures with explicit mean images cannot be serialised")
        return {
            "weights": list(self.weights),
            "data_spread": self.data_spread,
            "canonical_resolution": self.canonical_resolution,
            "channels": self.channels,
            "band_resolution": self.band_resolution,
            "amplitude": self.amplitude,
            "mean_seeds": list(self.mean_seeds),
        }

    @classmethod
    def from_dict(cls, data: dict) -> MixtureSpec:
        if not isinstance(data, dict):
            raise SpecError("mixture must be a JSON object")
        try:
            return cls(
                weights=tuple(data["weights"]),
                data_spread=float(data.get("data_spread", 0.1)),
                canonical_resolution=int(data.get("canonical_resolution", 128)),
                channels=int(data.get("channels", 3)),
                band_resolution=int(data.get("band_resolution", 32)),
                amplitude=float(data.get("amplitude", 1.0)),
                mean_seeds=tuple(data["mean_seeds"]),
            )
        except KeyError as e:
            raise SpecError(f"mixture is missing the field {e.args[0]!r}") from e
        except (TypeError, ValueError, ParameterError, DimensionError) as e:
            raise SpecError(f"invalid mixture: {e}") from e


@dataclass(frozen=True)
class DegradationConfig:
    """Simulated generalisation gap of a model run beyond its native size."""

    gap: float = 1.0
    hf_noise_scale: float = 4.0
    # logits of a full-size grid grow with its pixel count; at 128px this keeps
    # the corrupted posterior undecided until the state itself commits
    posterior_temperature: float = 1000.0
    seed: int = 0
    profile: str = "midband"

    def __post_init__(self):
        if not (0.0 <= self.gap <= 1.0):
            raise ParameterError(f"gap must lie in [0, 1], got {self.gap}")
        if self.hf_noise_scale < 0:
            raise ParameterError(f"hf_noise_scale must be >= 0, got {self.hf_noise_scale}")
        if self.posterior_temperature <= 0:
            raise ParameterError(f"posterior temperature must be > 0, got {self.posterior_temperature}")
        if self.profile not in PROFILES:
            raise ParameterError(f"unknown noise profile {self.profile!r}")

    @classmethod
    def default(cls) -> DegradationConfig:
        return cls(gap=1.0, hf_noise_scale=4.0, posterior_temperature=1000.0, seed=0, profile="midband")

    @classmethod
    def exact(cls) -> DegradationConfig:
        return cls(gap=0.0, hf_noise_scale=0.0, posterior_temperature=1.0, seed=0, profile="flat")

    PRESETS = ("default", "exact")

    @classmethod
    def preset(cls, name: str) -> DegradationConfig:
        if name not in cls.PRESETS:
            raise SpecError(f"unknown degradation preset {name!r}")
        return getattr(cls, name)()

    def profile_at(self, t: float) -> float:
        if self.profile == "midband":
            return math.sin(math.pi * t)
        return 1.0

    def to_dict(self) -> dict:
        return {
            "gap": self.gap,
            "hf_noise_scale": self.hf_noise_scale,
            "posterior_temperature": self.posterior_temperature,
            "seed": self.seed,
            "profile": self.profile,
        }

    @classmethod
    def from_dict(cls, data: Union[str, dict]) -> DegradationConfig:
        if isinstance(data, str):
            return cls.preset(data)
        if not isinstance(data, dict):
            raise SpecError("degradation must be a preset name or a JSON object")

        base = cls.preset(data.get("preset", "default")).to_dict()
        unknown = set(data) - set(base) - {"preset"}
        if unknown:
            raise SpecError(f"unknown degradation fields: {', '.join(sorted(unknown))}")
        base.update({k: v for k, v in data.items() if k != "preset"})

        try:
            return cls(
                gap=float(base["gap"]),
                hf_noise_scale=float(base["hf_noise_scale"]),
                posterior_temperature=float(base["posterior_temperature"]),
                seed=int(base["seed"]),
                profile=str(base["profile"]),
            )
        except (TypeError, ValueError, ParameterError) as e:
            raise SpecError(f"invalid degradation: {e}") from e


def sample_pair(spec: MixtureSpec, resolution: int, seed: SeedKey) -> Tuple[Grid, Grid]:
    """Draw (noise, image) at ``resolution``; both depend only on ``seed``."""
    means = spec.mean_images(resolution)
    key = seed_key(seed)
    shape = (spec.channels, resolution, resolution)

    x0 = Grid.noise(shape, seeded_rng(*key, 0))

    rng = seeded_rng(*key, 1)
    component = int(rng.choice(spec.k, p=np.asarray(spec.weights)))
    x1 = means[component]
    if spec.data_spread > 0:
        x1 = x1 + spec.data_spread * rng.standard_normal(shape)

    return x0, Grid.wrap(x1)


def _check_state(x: Grid, t: float, spec: MixtureSpec) -> np.ndarray:
    if not (0.0 <= t < 1.0):
        raise ParameterError(f"velocity is defined for t in [0, 1), got {t}")
    if x.height != x.width:
        raise DimensionError(f"oracle grids must be square, got {x.height}x{x.width}")
    if x.channels != spec.channels:
        raise DimensionError(f"grid has {x.channels} channels, mixture has {spec.channels}")
    return spec.mean_images(x.height)


def _marginal_variance(t: float, spread: float) -> float:
    return t * t * spread * spread + (1.0 - t) ** 2


def posterior_weights(x: Grid, t: float, spec: MixtureSpec, temperature: float = 1.0) -> np.ndarray:
    """Component posterior p(k | X_t = x), optionally flattened by ``temperature``."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")

    means = _check_state(x, t, spec)
    var = _marginal_variance(t, spec.data_spread)

    flat = means.reshape(spec.k, -1)
    diff = x.data.reshape(1, -1) - t * flat
    logits = np.log(np.asarray(spec.weights)) - np.einsum("kp,kp->k", diff, diff) / (2.0 * var)

    return softmax(logits / temperature)


def _conditional_velocity(x: Grid, t: float, spec: MixtureSpec, weights: np.ndarray) -> np.ndarray:
    means = spec.mean_images(x.height)
    var = _marginal_variance(t, spec.data_spread)
    gain = t * spec.data_spread ** 2 / var

    m_bar = np.tensordot(weights, means, axes=1)
    expected = m_bar + gain * (x.data - t * m_bar)
    return (expected - x.data) / (1.0 - t)


def conditional_mean(x: Grid, t: float, spec: MixtureSpec) -> Grid:
    """E[X_1 | X_t = x]."""
    w = posterior_weights(x, t, spec)
    v = _conditional_velocity(x, t, spec, w)
    return Grid.wrap(x.data + (1.0 - t) * v)


def mixture_velocity(x: Grid, t: float, spec: MixtureSpec) -> Grid:
    """(E[X_1 | X_t = x] - x) / (1 - t)."""
    w = posterior_weights(x, t, spec)
    return Grid.wrap(_conditional_velocity(x, t, spec, w))


def _hf_noise(x: Grid, t: float, deg: DegradationConfig, key: Tuple[int, ...], native_res: int) -> np.ndarray:
    cutoff = min(1.0, native_res / x.height)
    if cutoff >= 1.0:
        return np.zeros(x.shape)

    rng = seeded_rng(deg.seed, *key, time_key(t))
    noise = Grid.noise(x.shape, rng)
    return highpass(noise, ProjectionConfig(cutoff)).data


def degraded_velocity(x: Grid, t: float, spec: MixtureSpec, deg: DegradationConfig, *,
                      key: SeedKey = (), native_res: Optional[int] = None) -> Grid:
    """Exact velocity blended with a temperature-corrupted one, plus seeded high-band noise.

    The noise sits above the native band of the run (``native_res``, the
    mixture's own band by default) and is seeded by ``key`` and ``t``.
    """
    exact_w = posterior_weights(x, t, spec)
    exact = _conditional_velocity(x, t, spec, exact_w)

    if deg.gap == 0.0:
        return Grid.wrap(exact)

    corrupt_w = posterior_weights(x, t, spec, deg.posterior_temperature)
    corrupt = _conditional_velocity(x, t, spec, corrupt_w)
    out = (1.0 - deg.gap) * exact + deg.gap * corrupt

    strength = deg.hf_noise_scale * deg.gap * deg.profile_at(t)
    if strength > 0:
        band = spec.band_resolution if native_res is None else native_res
        out = out + strength * _hf_noise(x, t, deg, seed_key(key), band)

    return Grid.wrap(out)


def exact_source(spec: MixtureSpec) -> Callable[[Grid, float], Grid]:
    def source(x: Grid, t: float) -> Grid:
        return mixture_velocity(x, t, spec)
    return source


@dataclass(frozen=True)
class DegradedSource:
    """Degraded velocity of one run: its seed key and native resolution are bound in."""

    spec: MixtureSpec
    deg: DegradationConfig
    key: Tuple[int, ...] = ()
    native_res: Optional[int] = None

    def bind(self, key: SeedKey, native_res: Optional[int] = None) -> DegradedSource:
        return replace(self, key=seed_key(key), native_res=self.native_res if native_res is None else native_res)

    def __call__(self, x: Grid, t: float) -> Grid:
        return degraded_velocity(x, t, self.spec, self.deg, key=self.key, native_res=self.native_res)


def degraded_source(spec: MixtureSpec, deg: DegradationConfig,
                    native_res: Optional[int] = None) -> Union[DegradedSource, Callable[[Grid, float], Grid]]:
    if deg.gap == 0.0:
        return exact_source(spec)
    return DegradedSource(spec, deg, native_res=native_res)


def bind_source(source, key: SeedKey, native_res: Optional[int] = None):
    """``source`` with its per-run noise keyed by ``key``; keyless sources pass through."""
    if isinstance(source, DegradedSource):
        return source.bind(key, native_res)
    return source


def pair_loss(velocity_source, x0: Grid, x1: Grid, t: float) -> float:
    target = x1.data - x0.data
    v = velocity_source(interpolate(x0, x1, t), t)
    return float(np.mean((v.data - target) ** 2))


def velocity_loss(velocity_source, spec: MixtureSpec, resolution: int, t: float, n_samples: int, seed: int) -> float:
    """Mean per-pixel squared error against the per-pair target X_1 - X_0.

    A degraded source draws its high-band noise from the pair key (seed, i).
    """
    if not (0.0 <= t < 1.0):
        raise ParameterError(f"loss time must lie in [0, 1), got {t}")
    if n_samples < 1:
        raise ParameterError(f"n_samples must be >= 1, got {n_samples}")

    losses = np.empty(n_samples)
    for i in range(n_samples):
        x0, x1 = sample_pair(spec, resolution, (seed, i))
        losses[i] = pair_loss(bind_source(velocity_source, (seed, i)), x0, x1, t)

    return float(np.sum(losses) / n_samples)


@dataclass(frozen=True)
class LossRatioPoint:
    t: float
    loss_native: float
    loss_extra: float
    ratio: float

    @property
    def defined(self) -> bool:
        return math.isfinite(self.ratio)


def loss_ratio(loss_extra: float, loss_native: float) -> float:
    if loss_native == 0.0:
        return math.nan
    return loss_extra / loss_native


def loss_ratio_curve(spec: MixtureSpec, native_res: int, extra_res: int, schedule: TimeSchedule,
                     deg: DegradationConfig, n_samples: int, seed: int) -> List[LossRatioPoint]:
    """Degraded-extrapolated over exact-native loss at every interior schedule time."""
    if extra_res <= native_res:
        raise ParameterError(f"extrapolated resolution {extra_res} must exceed native {native_res}")

    native = exact_source(spec)
    extra = degraded_source(spec, deg, native_res)

    points = []
    for t in schedule.interior:
        ln = velocity_loss(native, spec, native_res, t, n_samples, seed)
        le = velocity_loss(extra, spec, extra_res, t, n_samples, seed)
        point = LossRatioPoint(t, ln, le, loss_ratio(le, ln))
        if not point.defined:
            log.warning("native loss vanished at t=%.4f; ratio left undefined", t)
        points.append(point)

    return points


def nearest_mean_error(x: Grid, spec: MixtureSpec) -> Tuple[float, int]:
    """RMS distance to the closest component mean and that component's index."""
    if x.height != x.width or x.channels != spec.channels:
        raise DimensionError(f"grid {x.shape} does not match the mixture")

    means = spec.mean_images(x.height)
    rms = np.sqrt(np.mean((means - x.data[None]) ** 2, axis=(1, 2, 3)))
    best = int(np.argmin(rms))
    return float(rms[best]), best
