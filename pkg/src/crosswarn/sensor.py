"""Sensor simulation: what the pipeline sees instead of ground truth.

Converts true agent states into per-camera observations with the systematic
fisheye bounding-box localization error, size-dependent stochastic dropout
driven by a measured recall curve, scenario-authored occlusion windows,
multi-camera fusion and a frame-delay buffer for camera latency.

Detection draws use one counter-based RNG stream per (trial, camera, agent),
so results are bit-reproducible and independent of iteration order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    Box3D,
    CameraModel,
    forward_lens_map,
    inverse_lens_map,
    project_ground_points,
)
from .scenarios import CameraPose, Scenario, camera_to_world_array, world_to_camera_array

MAX_LATENCY_FRAMES = 15  # 500 ms at 30 fps


@dataclass(frozen=True)
class RecallCurve:
    """Detection recall as a function of projected box area (px^2).

    Piecewise-linear between sorted breakpoints; clamped outside the range.
    """

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(a), float(r)) for a, r in self.breakpoints)
        if len(pts) < 2:
            raise ValueError("need at least two breakpoints")
        areas = [a for a, _ in pts]
        recalls = [r for _, r in pts]
        if sorted(areas) != areas:
            raise ValueError("breakpoints must be sorted by area")
        if any(b < a for a, b in zip(recalls, recalls[1:])):
            raise ValueError("recall must be non-decreasing in area")
        if min(recalls) < 0 or max(recalls) > 1:
            raise ValueError("recall must lie in [0, 1]")
        object.__setattr__(self, "breakpoints", pts)

    def __call__(self, area):
        areas = np.array([a for a, _ in self.breakpoints])
        recalls = np.array([r for _, r in self.breakpoints])
        return np.interp(np.asarray(area, dtype=float), areas, recalls)

    @classmethod
    def from_json(cls, path) -> "RecallCurve":
        with open(path) as fh:
            return cls(tuple((a, r) for a, r in json.load(fh)))


@dataclass(frozen=True)
class CameraChannel:
    """One installed camera: world placement plus calibrated model."""

    pose: CameraPose
    model: CameraModel


@dataclass
class Observation:
    frame: int
    agent_id: str
    agent_class: str
    detected: bool
    observed_xy: tuple[float, float] | None  # world frame
    localization_error_m: float | None
    camera_index: int | None


@dataclass
class SensorConfig:
    cameras: list[CameraChannel]
    apply_loc_error: bool = True
    stochastic: bool = False
    curve: RecallCurve | None = None
    latency_frames: int = 0
    occlusion_windows: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    seed: int = 0
    dropout_scale: float = 1.0  # 0 = never drop, 1 = full measured curve
    yolo_input_px: int = 1280

    def __post_init__(self):
        if not self.cameras:
            raise ValueError("need at least one camera")
        if not 0 <= self.latency_frames <= MAX_LATENCY_FRAMES:
            raise ValueError(f"latency_frames must be in 0..{MAX_LATENCY_FRAMES}")
        if self.stochastic and self.curve is None:
            raise ValueError("stochastic mode needs a recall curve")
        if not 0.0 <= self.dropout_scale <= 1.0:
            raise ValueError("dropout_scale must lie in [0, 1]")

    def with_(self, **kw) -> "SensorConfig":
        return replace(self, **kw)


def fused_detection_probability(per_camera_probs) -> float:
    """Independent-detection fusion: 1 - prod(1 - p_i)."""
    p = np.asarray(per_camera_probs, dtype=float)
    return float(1.0 - np.prod(1.0 - p))


def _project_pixels_to_ground(cam: CameraModel, uv: np.ndarray):
    """Vectorized pixel -> camera-ground map (no crop bounds check).

    Returns (xy, valid); invalid where the lens inverse fails, the angle
    leaves the FOV, or the pitched ray does not hit the ground.
    """
    dx = uv[..., 0] - cam.optical_center[0]
    dy = uv[..., 1] - cam.optical_center[1]
    r = np.sqrt(dx * dx + dy * dy)
    phi = np.arctan2(dy, dx)
    theta, dom_ok = inverse_lens_map(cam.projection_variant, r / cam.focal_px)
    st = np.sin(theta)
    d = np.stack([np.cos(theta), st * np.cos(phi), -st * np.sin(phi)], axis=-1)
    dp = d @ cam.pitch_matrix().T
    ok = dom_ok & (theta <= cam.theta_max) & (dp[..., 2] < 0.0)
    t = np.where(ok, cam.height_m / np.where(ok, -dp[..., 2], 1.0), np.nan)
    return np.stack([t * dp[..., 0], t * dp[..., 1]], axis=-1), ok


class CameraView:
    """Per-(scenario, camera) precomputed detection geometry.

    For every frame and agent: whether the agent's box is visible, the world
    position a bbox detector would report (bottom centre of the projected
    box, inverse-projected to the ground), the systematic localization error
    and the projected box area at detector input scale.
    """

    def __init__(self, scenario: Scenario, channel: CameraChannel,
                 yolo_input_px: int = 1280):
        pos, vel = scenario.trajectories()
        n_frames, n_agents = pos.shape[:2]
        cam = channel.model
        self.in_fov = np.zeros((n_frames, n_agents), dtype=bool)
        self.observed_world = np.full((n_frames, n_agents, 2), np.nan)
        self.loc_error = np.full((n_frames, n_agents), np.nan)
        self.area_px2 = np.zeros((n_frames, n_agents))

        scale2 = (yolo_input_px / cam.crop_size[0]) ** 2
        for ai, agent in enumerate(scenario.agents):
            length, width, height = agent.dims
            speed = np.linalg.norm(vel[:, ai, :], axis=1)
            heading = np.where(speed > 1e-6,
                               np.arctan2(vel[:, ai, 1], vel[:, ai, 0]), 0.0)
            c, s = np.cos(heading), np.sin(heading)
            sx = np.array([-length, -length, length, length]) / 2.0
            sy = np.array([-width, width, -width, width]) / 2.0
            foot_x = pos[:, ai, 0:1] + sx[None, :] * c[:, None] - sy[None, :] * s[:, None]
            foot_y = pos[:, ai, 1:2] + sx[None, :] * s[:, None] + sy[None, :] * c[:, None]
            cam_xy = world_to_camera_array(
                channel.pose, np.stack([foot_x, foot_y], axis=-1))
            corners = np.concatenate([
                np.concatenate([cam_xy, np.zeros((n_frames, 4, 1))], axis=-1),
                np.concatenate([cam_xy, np.full((n_frames, 4, 1), height)], axis=-1),
            ], axis=1)  # (F, 8, 3)
            uv, vis = project_ground_points(cam, corners.reshape(-1, 3),
                                            require_front=True)
            uv = uv.reshape(n_frames, 8, 2)
            vis = vis.reshape(n_frames, 8)
            any_vis = vis.any(axis=1)
            u_mask = np.where(vis, uv[..., 0], np.nan)
            v_mask = np.where(vis, uv[..., 1], np.nan)
            with np.errstate(invalid="ignore"):
                u0 = np.nanmin(u_mask, axis=1)
                u1 = np.nanmax(u_mask, axis=1)
                v0 = np.nanmin(v_mask, axis=1)
                v1 = np.nanmax(v_mask, axis=1)
            bottom = np.stack([(u0 + u1) / 2.0, v1], axis=-1)
            bottom[~any_vis] = 0.0
            ground_cam, ok = _project_pixels_to_ground(cam, bottom)
            usable = any_vis & ok
            obs_world = camera_to_world_array(channel.pose, ground_cam)
            err = np.linalg.norm(obs_world - pos[:, ai, :], axis=1)
            self.in_fov[:, ai] = usable
            self.observed_world[usable, ai] = obs_world[usable]
            self.loc_error[usable, ai] = err[usable]
            area = np.where(any_vis, (u1 - u0) * (v1 - v0) * scale2, 0.0)
            self.area_px2[:, ai] = np.where(usable, area, 0.0)


def _occlusion_mask(scenario: Scenario, cfg: SensorConfig) -> np.ndarray:
    """(F, A) True where the agent is hidden; union of scenario-authored and
    config-supplied windows."""
    times = scenario.frame_times
    mask = np.zeros((scenario.n_frames, len(scenario.agents)), dtype=bool)
    for ai, agent in enumerate(scenario.agents):
        windows = list(agent.occlusion)
        windows += cfg.occlusion_windows.get(agent.agent_id, [])
        for t0, t1 in windows:
            mask[(times >= t0) & (times < t1), ai] = True
    return mask


class SensorSimulator:
    """Observation generator for one scenario under one sensor configuration."""

    def __init__(self, scenario: Scenario, cfg: SensorConfig):
        self.scenario = scenario
        self.cfg = cfg
        self.views = [CameraView(scenario, ch, cfg.yolo_input_px)
                      for ch in cfg.cameras]
        self.occluded = _occlusion_mask(scenario, cfg)
        self._true_pos = scenario.trajectories()[0]

    def _per_camera_detected(self, trial: int) -> np.ndarray:
        """(C, F, A) detection outcomes before fusion."""
        n_frames = self.scenario.n_frames
        n_agents = len(self.scenario.agents)
        out = np.zeros((len(self.views), n_frames, n_agents), dtype=bool)
        for ci, view in enumerate(self.views):
            visible = view.in_fov & ~self.occluded
            if not self.cfg.stochastic:
                out[ci] = visible
                continue
            recall = self.cfg.curve(view.area_px2)
            p = 1.0 - self.cfg.dropout_scale * (1.0 - recall)
            for ai in range(n_agents):
                seq = np.random.SeedSequence(
                    entropy=self.cfg.seed, spawn_key=(trial, ci, ai))
                draws = np.random.Generator(np.random.Philox(seq)).random(n_frames)
                out[ci, :, ai] = visible[:, ai] & (draws < p[:, ai])
        return out

    def detection_arrays(self, trial: int = 0):
        """Fused (detected, positions, errors, camera_index) arrays.

        positions are world-frame observed coordinates: the reporting camera
        is the detecting one with the smallest systematic localization error.
        With apply_loc_error off, detected agents report their true position
        and zero error.
        """
        per_cam = self._per_camera_detected(trial)
        err = np.stack([v.loc_error for v in self.views])  # (C, F, A)
        err = np.where(per_cam, err, np.inf)
        cam_idx = err.argmin(axis=0)  # (F, A)
        detected = per_cam.any(axis=0)
        obs = np.stack([v.observed_world for v in self.views])
        take = np.take_along_axis(obs, cam_idx[None, ..., None], axis=0)[0]
        take_err = np.take_along_axis(err, cam_idx[None, ...], axis=0)[0]
        if not self.cfg.apply_loc_error:
            take = self._true_pos.copy()
            take_err = np.zeros_like(take_err)
        positions = np.where(detected[..., None], take, np.nan)
        errors = np.where(detected, take_err, np.nan)
        return detected, positions, errors, np.where(detected, cam_idx, -1)

    def observations(self, trial: int = 0) -> list[list[Observation]]:
        """Per-frame observation lists (before any latency delay)."""
        detected, positions, errors, cams = self.detection_arrays(trial)
        frames = []
        for t in range(self.scenario.n_frames):
            row = []
            for ai, agent in enumerate(self.scenario.agents):
                if detected[t, ai]:
                    row.append(Observation(
                        frame=t, agent_id=agent.agent_id,
                        agent_class=agent.agent_class, detected=True,
                        observed_xy=(float(positions[t, ai, 0]),
                                     float(positions[t, ai, 1])),
                        localization_error_m=float(errors[t, ai]),
                        camera_index=int(cams[t, ai])))
                else:
                    row.append(Observation(
                        frame=t, agent_id=agent.agent_id,
                        agent_class=agent.agent_class, detected=False,
                        observed_xy=None, localization_error_m=None,
                        camera_index=None))
            frames.append(row)
        return frames


def delay_buffer(frames: list, latency_frames: int) -> list:
    """Shift a per-frame stream: frame t emits frame t - latency; leading
    frames emit empty lists."""
    if latency_frames < 0:
        raise ValueError("latency must be non-negative")
    if latency_frames == 0:
        return list(frames)
    return [[] for _ in range(latency_frames)] + list(frames[:len(frames) - latency_frames])


def default_recall_curve_path():
    from pathlib import Path
    return Path(__file__).parent / "data" / "recall_curve.json"


def load_default_recall_curve() -> RecallCurve:
    return RecallCurve.from_json(default_recall_curve_path())
