"""Unicycle kinematics, bounded control actions, and displacement metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidArgumentError
from .rotary import wrap_angle

__all__ = [
    "ACCEL_LIMIT",
    "YAW_RATE_LIMIT",
    "AgentState",
    "ControlAction",
    "ZERO_ACTION",
    "check_action_bounds",
    "ActionGrid",
    "kinematic_step",
    "min_ade",
]

ACCEL_LIMIT = 4.0      # m/s^2
YAW_RATE_LIMIT = 1.0   # rad/s
_BOUND_SLACK = 1e-12


@dataclass(frozen=True)
class AgentState:
    """Planar state: position (m), heading (canonical rad), speed (m/s >= 0)."""

    x: float
    y: float
    yaw: float
    v: float

    def __post_init__(self):
        for name in ("x", "y", "yaw", "v"):
            if not math.isfinite(float(getattr(self, name))):
                raise InvalidArgumentError(f"state field {name} must be finite")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        if self.v < 0.0:
            raise InvalidArgumentError(f"speed must be non-negative, got {self.v}")
        object.__setattr__(self, "v", float(self.v))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw, self.v])

    @classmethod
    def from_array(cls, arr) -> "AgentState":
        x, y, yaw, v = (float(value) for value in arr)
        return cls(x, y, yaw, v)


@dataclass(frozen=True)
class ControlAction:
    """Acceleration (m/s^2) and yaw rate (rad/s).

    Magnitude bounds are configuration-level: actions decoded from an
    ActionGrid respect that grid's limits by construction, and
    ``check_action_bounds`` validates against explicit limits.
    """

    accel: float
    yaw_rate: float

    def __post_init__(self):
        accel, yaw_rate = float(self.accel), float(self.yaw_rate)
        if not (math.isfinite(accel) and math.isfinite(yaw_rate)):
            raise InvalidArgumentError("control action must be finite")
        object.__setattr__(self, "accel", accel)
        object.__setattr__(self, "yaw_rate", yaw_rate)


ZERO_ACTION = ControlAction(0.0, 0.0)


def check_action_bounds(
    action: ControlAction,
    accel_limit: float = ACCEL_LIMIT,
    yaw_rate_limit: float = YAW_RATE_LIMIT,
) -> ControlAction:
    if abs(action.accel) > accel_limit + _BOUND_SLACK:
        raise InvalidArgumentError(
            f"|accel| = {abs(action.accel)} exceeds the {accel_limit} m/s^2 limit"
        )
    if abs(action.yaw_rate) > yaw_rate_limit + _BOUND_SLACK:
        raise InvalidArgumentError(
            f"|yaw_rate| = {abs(action.yaw_rate)} exceeds the {yaw_rate_limit} rad/s limit"
        )
    return action


@dataclass(frozen=True)
class ActionGrid:
    """Discrete (accel, yaw rate) bins; odd counts put an exact zero bin in both axes.

    Flat indices enumerate accel bins in the outer loop:
    ``index = accel_index * n_yaw + yaw_index``.
    """

    accel_centers: tuple
    yaw_rate_centers: tuple

    @classmethod
    def default(
        cls,
        n_accel: int = 9,
        n_yaw: int = 9,
        accel_limit: float = ACCEL_LIMIT,
        yaw_rate_limit: float = YAW_RATE_LIMIT,
    ) -> "ActionGrid":
        return cls(
            accel_centers=tuple(np.linspace(-accel_limit, accel_limit, n_accel)),
            yaw_rate_centers=tuple(np.linspace(-yaw_rate_limit, yaw_rate_limit, n_yaw)),
        )

    @property
    def n_accel(self) -> int:
        return len(self.accel_centers)

    @property
    def n_yaw(self) -> int:
        return len(self.yaw_rate_centers)

    @property
    def n_actions(self) -> int:
        return self.n_accel * self.n_yaw

    def action(self, index: int) -> ControlAction:
        if not 0 <= index < self.n_actions:
            raise InvalidArgumentError(f"action index {index} out of range")
        return ControlAction(
            self.accel_centers[index // self.n_yaw],
            self.yaw_rate_centers[index % self.n_yaw],
        )

    @property
    def zero_action_index(self) -> int:
        accel_index = self.accel_centers.index(0.0)
        yaw_index = self.yaw_rate_centers.index(0.0)
        return accel_index * self.n_yaw + yaw_index


def kinematic_step(state: AgentState, action: ControlAction, dt: float) -> AgentState:
    """Semi-implicit unicycle update: speed and heading first, then position."""
    dt = float(dt)
    if not math.isfinite(dt) or dt <= 0.0:
        raise InvalidArgumentError(f"dt must be a positive finite number, got {dt}")
    v = max(0.0, state.v + action.accel * dt)
    yaw = wrap_angle(state.yaw + action.yaw_rate * dt)
    x = state.x + v * math.cos(yaw) * dt
    y = state.y + v * math.sin(yaw) * dt
    return AgentState(x, y, yaw, v)


def min_ade(samples, truth) -> float:
    """Minimum over samples of the mean Euclidean displacement per step.

    ``samples`` is (K, T, 2) or a single (T, 2) trajectory; ``truth`` is (T, 2).
    """
    samples = np.asarray(samples, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples[None]
    if samples.ndim != 3 or samples.shape[-1] != 2 or truth.shape != samples.shape[1:]:
        raise DimensionMismatchError(
            f"sample horizon {samples.shape} mismatches truth {truth.shape}"
        )
    displacement = np.sqrt(np.sum((samples - truth) ** 2, axis=-1))
    return float(displacement.mean(axis=-1).min())
