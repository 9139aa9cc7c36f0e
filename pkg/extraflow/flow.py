# -*- coding: utf-8 -*-
"""Rectified-flow state, schedules and the Euler sampler.

Time runs from noise (t=0) to data (t=1). Velocities are only evaluated at the
left endpoint of every step, so nothing downstream ever sees t=1.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, NumericError, ParameterError

log = logging.getLogger(__name__)

_T_EPS = 1e-9


class Grid:
    """A channels x height x width field of finite real values.

    The wrapped array is read-only; every operation returns a new grid.
    """

    __slots__ = ('data',)

    def __init__(self, data, *, validate: bool = True):
        arr = np.array(data, dtype=np.float64)

        if arr.ndim == 2:
            arr = arr[None]

        if arr.ndim != 3 or 0 in arr.shape:
            raise DimensionError(f"a grid needs shape (channels, height, width), got {arr.shape}")

        if validate and not np.all(np.isfinite(arr)):
            raise NumericError("grid holds non-finite values")

        arr.setflags(write=False)
        self.data = arr

    @classmethod
    def wrap(cls, arr: np.ndarray) -> Grid:
        # trusted path for arrays produced by our own arithmetic
        grid = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3:
            raise DimensionError(f"a grid needs shape (channels, height, width), got {arr.shape}")
        if arr.flags.writeable:
            # never freeze an array the caller still holds
            arr = arr.copy()
            arr.setflags(write=False)
        grid.data = arr
        return grid

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> Grid:
        return cls.wrap(np.zeros((channels, height, width)))

    @classmethod
    def full(cls, channels: int, height: int, width: int, value: float) -> Grid:
        return cls.wrap(np.full((channels, height, width), float(value)))

    @classmethod
    def noise(cls, shape: Tuple[int, int, int], rng: np.random.Generator) -> Grid:
        return cls.wrap(rng.standard_normal(shape))

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> int:
        return self.data.size

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.data ** 2)))

    def _other(self, other) -> Union[np.ndarray, float]:
        if isinstance(other, Grid):
            if other.shape != self.shape:
                raise DimensionError(f"grid shapes differ: {self.shape} vs {other.shape}")
            return other.data
        return float(other)

    def __add__(self, other) -> Grid:
        return Grid.wrap(self.data + self._other(other))

    __radd__ = __add__

    def __sub__(self, other) -> Grid:
        return Grid.wrap(self.data - self._other(other))

    def __rsub__(self, other) -> Grid:
        return Grid.wrap(self._other(other) - self.data)

    def __mul__(self, other) -> Grid:
        return Grid.wrap(self.data * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other) -> Grid:
        return Grid.wrap(self.data / self._other(other))

    def __neg__(self) -> Grid:
        return Grid.wrap(-self.data)

    def __repr__(self):
        return f"<Grid {self.channels}x{self.height}x{self.width}>"


@dataclass(frozen=True)
class FlowState:
    x: Grid
    t: float

    def __post_init__(self):
        if not (0.0 <= self.t <= 1.0):
            raise ParameterError(f"flow time must lie in [0, 1], got {self.t}")


@dataclass(frozen=True)
class TimeSchedule:
    """Discretisation of [0, 1], noise to data."""

    times: Tuple[float, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)

        if len(times) < 2:
            raise ParameterError("a schedule needs at least two times")
        if times[-1] != 1.0:
            raise ParameterError(f"a schedule must end at 1, got {times[-1]}")
        if times[0] < 0.0:
            raise ParameterError(f"a schedule must start at or after 0, got {times[0]}")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ParameterError("schedule times must be strictly increasing")

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def interior(self) -> Tuple[float, ...]:
        return self.times[1:-1]

    def tail(self, start_t: float) -> TimeSchedule:
        """The part of the schedule from ``start_t`` on, with ``start_t`` as first point."""
        if not (0.0 <= start_t < 1.0):
            raise ParameterError(f"start time must lie in [0, 1), got {start_t}")
        rest = [t for t in self.times if t > start_t + _T_EPS]
        return TimeSchedule((start_t, *rest))


def uniform_schedule(n_steps: int = 30) -> TimeSchedule:
    if n_steps < 1:
        raise ParameterError(f"step count must be positive, got {n_steps}")
    times = np.linspace(0.0, 1.0, n_steps + 1)
    times[-1] = 1.0
    return TimeSchedule(tuple(times))


@dataclass(frozen=True)
class ScalePair:
    """Token (or pixel) counts at the native and the extrapolated size."""

    native_len: int
    extra_len: int

    def __post_init__(self):
        if self.native_len < 1 or self.extra_len < 1:
            raise ParameterError("sequence lengths must be positive")
        if self.extra_len < self.native_len:
            raise ParameterError(
                f"extrapolated length {self.extra_len} is smaller than native length {self.native_len}"
            )

    @classmethod
    def from_grids(cls, native: Union[int, Sequence[int]], extra: Union[int, Sequence[int]]) -> ScalePair:
        def count(g):
            if isinstance(g, int):
                return g * g
            rows, cols = g
            return int(rows) * int(cols)

        return cls(count(native), count(extra))

    @property
    def s(self) -> float:
        return math.sqrt(self.extra_len / self.native_len)

    @property
    def s_squared(self) -> float:
        return self.extra_len / self.native_len


def interpolate(x0: Grid, x1: Grid, t: float) -> Grid:
    """X_t = t*X_1 + (1-t)*X_0."""
    if x0.shape != x1.shape:
        raise DimensionError(f"cannot interpolate grids of shape {x0.shape} and {x1.shape}")
    if not (0.0 <= t <= 1.0):
        raise ParameterError(f"interpolation time must lie in [0, 1], got {t}")
    if t == 0.0:
        return x0
    if t == 1.0:
        return x1
    return Grid.wrap(t * x1.data + (1.0 - t) * x0.data)


def euler_step(state: FlowState, v: Grid, dt: float) -> FlowState:
    if dt <= 0:
        raise ParameterError(f"step size must be positive, got {dt}")
    if v.shape != state.x.shape:
        raise DimensionError(f"velocity shape {v.shape} does not match state shape {state.x.shape}")

    t_next = state.t + dt
    if t_next > 1.0 + _T_EPS:
        raise ParameterError(f"step from t={state.t} by dt={dt} overshoots t=1")

    return FlowState(Grid.wrap(state.x.data + dt * v.data), min(t_next, 1.0))


VelocitySource = Callable[[Grid, float], Grid]
# (v, x_t, t) -> guided velocity
VelocityTransform = Callable[[Grid, Grid, float], Grid]
StepObserver = Callable[[int, float, Grid, Grid], None]


def _as_grid(v) -> Grid:
    if isinstance(v, Grid):
        return v
    return Grid.wrap(np.asarray(v, dtype=np.float64))


def sample(
        velocity_source: VelocitySource,
        schedule: TimeSchedule,
        x0: Grid,
        guidance: Optional[VelocityTransform] = None,
        *,
        start_t: float = 0.0,
        observer: Optional[StepObserver] = None,
) -> Grid:
    """Integrate the flow ODE with Euler steps and return the state at t=1.

    ``x0`` is the state at ``start_t``; the schedule is cut to start there.
    """
    if not x0.is_finite():
        raise NumericError("initial state is not finite", t=start_t)

    times = schedule.tail(start_t).times if start_t > 0.0 else schedule.times
    state = FlowState(x0, times[0])

    for step, (t, t_next) in enumerate(zip(times, times[1:])):
        v = _as_grid(velocity_source(state.x, t))
        if not v.is_finite():
            raise NumericError(f"velocity source returned non-finite values at step {step}", t=t)

        guided = v
        if guidance is not None:
            guided = _as_grid(guidance(v, state.x, t))
            if not guided.is_finite():
                raise NumericError(f"guided velocity is non-finite at step {step}", t=t)

        if observer is not None:
            observer(step, t, v, guided)

        state = euler_step(FlowState(state.x, t), guided, t_next - t)

    return state.x


def shift_schedule(schedule: TimeSchedule, s_star: float) -> TimeSchedule:
    """Map interior times through t / (s* - s*t + t); endpoints stay put."""
    if s_star < 1.0:
        raise ParameterError(f"time-shift factor must be >= 1, got {s_star}")
    if s_star == 1.0:
        return schedule

    shifted = []
    for t in schedule.times:
        if t == 0.0 or t == 1.0:
            shifted.append(t)
        else:
            shifted.append(t / (s_star - s_star * t + t))

    log.debug("shifted %d-step schedule with s*=%.4g", schedule.steps, s_star)
    return TimeSchedule(tuple(shifted))


SeedKey = Union[int, Sequence[int]]


def seed_key(seed: SeedKey) -> Tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def seeded_rng(*key: int) -> np.random.Generator:
    """Independent stream per key tuple, e.g. (master_seed, item_index, stream)."""
    return np.random.default_rng([int(k) for k in key])


def time_key(t: float) -> int:
    # stable integer for seeding per-timestep noise
    return int(round(float(t) * 2 ** 40))
