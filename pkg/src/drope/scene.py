"""Synthetic driving scenes: agent tracks, segmented map polylines, JSON I/O.

A scene holds ``n_agents`` state tracks sampled at ``dt`` seconds (default
0.5 s, i.e. 2 Hz) and a set of map segments. Long polylines are split into
segments of bounded arc length; each segment is anchored at its middle
point with the heading toward the next point, and stores its shape
re-expressed in that anchor frame so the shape carries no absolute pose.
Single-point segments (stop signs) get heading 0.

Scene files are JSON::

    {
      "dt": 0.5,
      "agents": [{"states": [[x, y, yaw, v], ...]}, ...],
      "map": [{"points": [[x, y], ...]}, ...]
    }
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .attention import PoseSet
from .errors import ConfigurationError, InvalidArgumentError
from .kinematics import (
    ACCEL_LIMIT,
    YAW_RATE_LIMIT,
    AgentState,
    ControlAction,
    ZERO_ACTION,
    kinematic_step,
)
from .rotary import wrap_angle

__all__ = [
    "DEFAULT_MAX_SEGMENT_LENGTH",
    "DEFAULT_DT",
    "MapSegment",
    "Scene",
    "polyline_arc_length",
    "segment_polyline",
    "make_straight_polyline",
    "make_arc_polyline",
    "make_scene",
    "make_constant_velocity_scene",
    "save_scene",
    "load_scene",
    "scene_to_dict",
    "scene_from_dict",
]

DEFAULT_MAX_SEGMENT_LENGTH = 25.0  # meters
DEFAULT_DT = 0.5                   # seconds (2 Hz)


def polyline_arc_length(points) -> float:
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))


@dataclass(frozen=True)
class MapSegment:
    """A short polyline with an anchor pose and its anchor-frame shape."""

    points: np.ndarray        # (P, 2) global coordinates
    anchor_xy: np.ndarray     # (2,)
    anchor_heading: float     # canonical; 0.0 for single-point segments
    local_shape: np.ndarray   # (P, 2); the anchor maps to the origin, heading 0

    @classmethod
    def from_points(cls, points, max_arc_length: float = DEFAULT_MAX_SEGMENT_LENGTH):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 2 or len(points) == 0:
            raise InvalidArgumentError(f"segment points must be (P, 2), got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise InvalidArgumentError("segment points must be finite")
        if polyline_arc_length(points) > max_arc_length + 1e-9:
            raise InvalidArgumentError(
                f"segment arc length {polyline_arc_length(points):.3f} exceeds "
                f"{max_arc_length} m; split the polyline first"
            )
        mid = (len(points) - 1) // 2
        if len(points) == 1:
            heading = 0.0
        else:
            step = points[mid + 1] - points[mid]
            heading = wrap_angle(math.atan2(step[1], step[0]))
        anchor = points[mid].copy()
        c, s = math.cos(heading), math.sin(heading)
        rel = points - anchor
        local = np.column_stack([c * rel[:, 0] + s * rel[:, 1],
                                 -s * rel[:, 0] + c * rel[:, 1]])
        return cls(points=points, anchor_xy=anchor, anchor_heading=heading,
                   local_shape=local)

    @property
    def arc_length(self) -> float:
        return polyline_arc_length(self.points)

    def translated(self, dx: float, dy: float) -> "MapSegment":
        return MapSegment.from_points(
            self.points + np.array([dx, dy]), max_arc_length=np.inf
        )


def segment_polyline(points, max_arc_length: float = DEFAULT_MAX_SEGMENT_LENGTH):
    """Split a polyline into segments of arc length at most ``max_arc_length``.

    Cut points are interpolated exactly on the polyline, so consecutive
    segments share their boundary point and jointly cover the input.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or len(points) == 0:
        raise InvalidArgumentError(f"polyline must be (P, 2), got {points.shape}")
    if max_arc_length <= 0.0:
        raise InvalidArgumentError("max_arc_length must be positive")
    if len(points) == 1:
        return [MapSegment.from_points(points, max_arc_length)]

    segments = []
    current = [points[0]]
    used = 0.0
    for start, end in zip(points[:-1], points[1:]):
        cursor = start
        remaining = float(np.linalg.norm(end - cursor))
        while used + remaining > max_arc_length + 1e-12:
            fraction = (max_arc_length - used) / remaining
            cut = cursor + fraction * (end - cursor)
            current.append(cut)
            segments.append(np.array(current))
            current = [cut]
            used = 0.0
            cursor = cut
            remaining = float(np.linalg.norm(end - cursor))
        current.append(end)
        used += remaining
    if len(current) >= 2:
        segments.append(np.array(current))
    return [MapSegment.from_points(seg, max_arc_length) for seg in segments]


@dataclass
class Scene:
    """Agent tracks (n_agents, n_steps, 4) as [x, y, yaw, v], plus map segments."""

    agent_states: np.ndarray
    segments: list = field(default_factory=list)
    dt: float = DEFAULT_DT

    def __post_init__(self):
        states = np.asarray(self.agent_states, dtype=np.float64)
        if states.ndim != 3 or states.shape[-1] != 4:
            raise InvalidArgumentError(
                f"agent states must be (n_agents, n_steps, 4), got {states.shape}"
            )
        if not np.all(np.isfinite(states)):
            raise InvalidArgumentError("agent states must be finite")
        if np.any(states[:, :, 3] < 0.0):
            raise InvalidArgumentError("agent speeds must be non-negative")
        states[:, :, 2] = wrap_angle(states[:, :, 2])
        self.agent_states = states
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")

    @property
    def n_agents(self) -> int:
        return self.agent_states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.agent_states.shape[1]

    def state(self, agent: int, step: int) -> AgentState:
        return AgentState.from_array(self.agent_states[agent, step])

    def agent_poses(self, step: int) -> PoseSet:
        return PoseSet(
            positions=self.agent_states[:, step, :2],
            headings=self.agent_states[:, step, 2],
        )

    def map_poses(self) -> PoseSet:
        if not self.segments:
            raise InvalidArgumentError("the scene has no map segments")
        return PoseSet(
            positions=np.array([seg.anchor_xy for seg in self.segments]),
            headings=np.array([seg.anchor_heading for seg in self.segments]),
        )

    def prefix(self, n_steps: int) -> "Scene":
        if not 1 <= n_steps <= self.n_steps:
            raise InvalidArgumentError(
                f"prefix length {n_steps} outside 1..{self.n_steps}"
            )
        return Scene(self.agent_states[:, :n_steps].copy(), self.segments, self.dt)

    def with_appended_states(self, states) -> "Scene":
        """A new scene with one more timestep of (n_agents, 4) states."""
        states = np.asarray(states, dtype=np.float64).reshape(self.n_agents, 1, 4)
        return Scene(
            np.concatenate([self.agent_states, states], axis=1), self.segments, self.dt
        )

    def translated(self, dx: float, dy: float) -> "Scene":
        states = self.agent_states.copy()
        states[:, :, 0] += dx
        states[:, :, 1] += dy
        return Scene(states, [seg.translated(dx, dy) for seg in self.segments], self.dt)


def make_straight_polyline(start, heading: float, length: float, spacing: float = 5.0):
    n_points = max(2, int(math.ceil(length / spacing)) + 1)
    distances = np.linspace(0.0, length, n_points)
    direction = np.array([math.cos(heading), math.sin(heading)])
    return np.asarray(start, dtype=np.float64) + distances[:, None] * direction[None, :]


def make_arc_polyline(center, radius: float, start_angle: float, span: float,
                      spacing: float = 5.0):
    arc = abs(span) * radius
    n_points = max(2, int(math.ceil(arc / spacing)) + 1)
    angles = start_angle + np.linspace(0.0, span, n_points)
    return np.asarray(center, dtype=np.float64) + radius * np.column_stack(
        [np.cos(angles), np.sin(angles)]
    )


def _default_map(rng) -> list:
    polylines = [
        make_straight_polyline((-40.0, 0.0), 0.0, 80.0),
        make_straight_polyline((-40.0, 3.5), 0.0, 80.0),
        make_arc_polyline((40.0, 30.0), 30.0, -math.pi / 2.0, math.pi / 2.0),
    ]
    segments = []
    for polyline in polylines:
        segments.extend(segment_polyline(polyline))
    # a stop sign: a single-point segment with heading 0
    segments.append(MapSegment.from_points(np.array([[35.0, -2.0]])))
    return segments


def _roll_states(initial: list, actions, dt: float) -> np.ndarray:
    """Iterate the kinematic update so stored tracks replay exactly."""
    n_agents = len(initial)
    n_steps = len(actions[0]) + 1
    states = np.empty((n_agents, n_steps, 4))
    for i, state in enumerate(initial):
        states[i, 0] = state.as_array()
        for t, action in enumerate(actions[i]):
            state = kinematic_step(state, action, dt)
            states[i, t + 1] = state.as_array()
    return states


def make_scene(
    seed: int = 0,
    n_agents: int = 4,
    n_steps: int = 12,
    dt: float = DEFAULT_DT,
    action_scale: float = 0.3,
) -> Scene:
    """A random scene: agents near straight and curved lanes, bounded actions."""
    if not 2 <= n_agents <= 8:
        raise ConfigurationError(f"n_agents must be in 2..8, got {n_agents}")
    if n_steps < 2:
        raise ConfigurationError(f"need at least 2 steps, got {n_steps}")
    rng = np.random.default_rng(seed)
    initial = [
        AgentState(
            x=float(rng.uniform(-35.0, 25.0)),
            y=float(rng.uniform(-1.0, 4.5)),
            yaw=float(wrap_angle(rng.normal(0.0, 0.2))),
            v=float(rng.uniform(3.0, 12.0)),
        )
        for _ in range(n_agents)
    ]
    actions = [
        [
            ControlAction(
                accel=float(np.clip(rng.normal(0.0, action_scale * ACCEL_LIMIT),
                                    -ACCEL_LIMIT, ACCEL_LIMIT)),
                yaw_rate=float(np.clip(rng.normal(0.0, action_scale * YAW_RATE_LIMIT),
                                       -YAW_RATE_LIMIT, YAW_RATE_LIMIT)),
            )
            for _ in range(n_steps - 1)
        ]
        for _ in range(n_agents)
    ]
    return Scene(_roll_states(initial, actions, dt), _default_map(rng), dt)


def make_constant_velocity_scene(
    seed: int = 0, n_agents: int = 3, n_steps: int = 20, dt: float = DEFAULT_DT
) -> Scene:
    """Agents coasting at constant speed; tracks are exact zero-action rollouts."""
    if not 2 <= n_agents <= 8:
        raise ConfigurationError(f"n_agents must be in 2..8, got {n_agents}")
    rng = np.random.default_rng(seed)
    initial = [
        AgentState(
            x=float(rng.uniform(-35.0, 5.0)),
            y=float(rng.uniform(-1.0, 4.5)),
            yaw=float(wrap_angle(rng.normal(0.0, 0.3))),
            v=float(rng.uniform(4.0, 10.0)),
        )
        for _ in range(n_agents)
    ]
    actions = [[ZERO_ACTION] * (n_steps - 1) for _ in range(n_agents)]
    return Scene(_roll_states(initial, actions, dt), _default_map(rng), dt)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "dt": scene.dt,
        "agents": [{"states": agent.tolist()} for agent in scene.agent_states],
        "map": [{"points": seg.points.tolist()} for seg in scene.segments],
    }


def scene_from_dict(payload: dict) -> Scene:
    try:
        dt = float(payload["dt"])
        states = np.array([agent["states"] for agent in payload["agents"]],
                          dtype=np.float64)
        segments = [
            MapSegment.from_points(np.asarray(entry["points"], dtype=np.float64))
            for entry in payload["map"]
        ]
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"malformed scene payload: {exc}") from exc
    return Scene(states, segments, dt)


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)
        fh.write("\n")


def load_scene(path) -> Scene:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"scene file {path} is not valid JSON: {exc}") from exc
    return scene_from_dict(payload)
