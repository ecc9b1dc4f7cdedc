"""Scripted hazard scenarios and trajectory evaluation.

A scenario is a timed script of agents (waypoints in world coordinates)
sampled at a fixed frame rate. Trajectories are linear or cubic-spline
interpolations of the waypoints, held at the endpoints outside the scripted
interval. The world -> camera transform is a planar rigid motion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import DEFAULT_CLASS_DIMS

AGENT_CLASSES = ("pedestrian", "wheelchair", "child", "cyclist", "ebike", "car")
CATEGORIES = ("safe", "standard", "high_speed", "accessibility",
              "multi_agent", "edge_case", "nonlinear")

# Classes that can be the threatening / threatened side of a ground-truth pair.
GT_CYCLIST_CLASSES = frozenset({"cyclist", "ebike"})
GT_PEDESTRIAN_CLASSES = frozenset({"pedestrian", "wheelchair", "child"})


@dataclass
class Agent:
    """One scripted road user: class, box dims and timed waypoints."""

    agent_id: str
    agent_class: str
    waypoints: np.ndarray  # (T, 3) rows of (t_s, x_m, y_m), strictly increasing t
    interpolation: str = "linear"
    dims: tuple[float, float, float] | None = None
    occlusion: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.agent_class not in AGENT_CLASSES:
            raise ValueError(f"unknown agent class {self.agent_class!r}")
        if self.interpolation not in ("linear", "cubic"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        self.waypoints = np.asarray(self.waypoints, dtype=float)
        if self.waypoints.ndim != 2 or self.waypoints.shape[1] != 3:
            raise ValueError("waypoints must be (T, 3) rows of (t, x, y)")
        if len(self.waypoints) < 2:
            raise ValueError("need at least 2 waypoints")
        if not (np.diff(self.waypoints[:, 0]) > 0).all():
            raise ValueError("waypoint times must be strictly increasing")
        if self.dims is None:
            self.dims = DEFAULT_CLASS_DIMS[self.agent_class]

    def positions(self, times: np.ndarray) -> np.ndarray:
        """Interpolated (len(times), 2) positions; held at the endpoints."""
        t = np.clip(times, self.waypoints[0, 0], self.waypoints[-1, 0])
        if self.interpolation == "cubic" and len(self.waypoints) >= 3:
            spline = CubicSpline(self.waypoints[:, 0], self.waypoints[:, 1:],
                                 bc_type="natural")
            return spline(t)
        out = np.empty((len(t), 2))
        for j in range(2):
            out[:, j] = np.interp(t, self.waypoints[:, 0],
                                  self.waypoints[:, 1 + j])
        return out


@dataclass
class Scenario:
    """A conformance case: agents plus duration, category and frame rate."""

    scenario_id: str
    category: str
    duration_s: float
    agents: list[Agent]
    fps: int = 30
    name: str | None = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.duration_s <= 0 or self.fps <= 0:
            raise ValueError("duration and fps must be positive")
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate agent ids")
        self._traj = None

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.fps))

    @property
    def frame_times(self) -> np.ndarray:
        return np.arange(self.n_frames) / self.fps

    def trajectories(self):
        """(positions, velocities) arrays of shape (F, A, 2) in world metres.

        Velocity is the central difference at the frame rate (one-sided at
        the ends). Cached; scenarios are immutable after construction.
        """
        if self._traj is None:
            times = self.frame_times
            pos = np.stack([a.positions(times) for a in self.agents], axis=1)
            vel = np.gradient(pos, 1.0 / self.fps, axis=0)
            self._traj = (pos, vel)
        return self._traj

    def agent_index(self) -> dict[str, int]:
        return {a.agent_id: i for i, a in enumerate(self.agents)}


def positions_at(scenario: Scenario, frame: int):
    """Per-agent world position and velocity (m/s) at one frame."""
    if not 0 <= frame < scenario.n_frames:
        raise IndexError(f"frame {frame} outside 0..{scenario.n_frames - 1}")
    pos, vel = scenario.trajectories()
    return {a.agent_id: (tuple(pos[frame, i]), tuple(vel[frame, i]))
            for i, a in enumerate(scenario.agents)}


@dataclass(frozen=True)
class CameraPose:
    """Planar placement of a camera in the world: position and yaw.

    The world frame shares the camera ground-frame convention (x forward of
    a yaw-0 camera, y to its right), so the identity pose is the identity
    transform. Yaw rotates the forward axis from world +x toward world +y.
    """

    x: float = 0.0
    y: float = 0.0
    yaw_deg: float = 0.0

    def forward(self):
        a = math.radians(self.yaw_deg)
        return math.cos(a), math.sin(a)

    def right(self):
        a = math.radians(self.yaw_deg)
        return -math.sin(a), math.cos(a)


def world_to_camera(pose: CameraPose, p_world) -> tuple[float, float]:
    """World point to camera-centred ground coordinates (x forward, y right)."""
    px, py = float(p_world[0]) - pose.x, float(p_world[1]) - pose.y
    fx, fy = pose.forward()
    rx, ry = pose.right()
    return (px * fx + py * fy, px * rx + py * ry)


def camera_to_world(pose: CameraPose, p_cam) -> tuple[float, float]:
    fx, fy = pose.forward()
    rx, ry = pose.right()
    cx, cy = float(p_cam[0]), float(p_cam[1])
    return (pose.x + cx * fx + cy * rx, pose.y + cx * fy + cy * ry)


def world_to_camera_array(pose: CameraPose, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    rel = pts - [pose.x, pose.y]
    fx, fy = pose.forward()
    rx, ry = pose.right()
    return np.stack([rel[..., 0] * fx + rel[..., 1] * fy,
                     rel[..., 0] * rx + rel[..., 1] * ry], axis=-1)


def camera_to_world_array(pose: CameraPose, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    fx, fy = pose.forward()
    rx, ry = pose.right()
    return np.stack([pose.x + pts[..., 0] * fx + pts[..., 1] * rx,
                     pose.y + pts[..., 0] * fy + pts[..., 1] * ry], axis=-1)


def scenario_from_dict(data: dict) -> Scenario:
    agents = []
    for spec in data["agents"]:
        agents.append(Agent(
            agent_id=spec["id"],
            agent_class=spec["class"],
            waypoints=np.asarray(spec["waypoints"], dtype=float),
            interpolation=spec.get("interpolation", "linear"),
            dims=tuple(spec["dims"]) if "dims" in spec else None,
            occlusion=[tuple(w) for w in spec.get("occlusion", [])],
        ))
    return Scenario(
        scenario_id=data["id"],
        category=data["category"],
        duration_s=float(data["duration_s"]),
        fps=int(data.get("fps", 30)),
        agents=agents,
        name=data.get("name"),
    )


def scenario_to_dict(s: Scenario) -> dict:
    out = {
        "id": s.scenario_id,
        "category": s.category,
        "duration_s": s.duration_s,
        "fps": s.fps,
        "agents": [],
    }
    if s.name:
        out["name"] = s.name
    for a in s.agents:
        spec = {
            "id": a.agent_id,
            "class": a.agent_class,
            "interpolation": a.interpolation,
            "waypoints": [[round(float(v), 6) for v in row]
                          for row in a.waypoints],
        }
        if a.dims != DEFAULT_CLASS_DIMS[a.agent_class]:
            spec["dims"] = list(a.dims)
        if a.occlusion:
            spec["occlusion"] = [list(w) for w in a.occlusion]
        out["agents"].append(spec)
    return out


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def load_suite(suite_dir) -> list[Scenario]:
    """Load the scenario suite listed in <suite_dir>/manifest.json, in order."""
    suite_dir = Path(suite_dir)
    with open(suite_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    scenarios = []
    for entry in manifest["scenarios"]:
        s = load_scenario(suite_dir / entry["file"])
        if s.category != entry["category"]:
            raise ValueError(
                f"{entry['file']}: category {s.category!r} does not match "
                f"manifest tag {entry['category']!r}")
        scenarios.append(s)
    return scenarios


def default_suite_dir() -> Path:
    return Path(__file__).parent / "data" / "scenarios"
