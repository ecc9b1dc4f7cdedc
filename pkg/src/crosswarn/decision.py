"""Causal decision runtime: ground-plane tracking and the alert state machine.

Tracks live in metric ground coordinates. Greedy nearest-neighbour matching
within a 3 m gate maintains identities; lost tracks coast on constant
velocity for up to 10 s. The decision stage evaluates a pairwise historical
closing check over each cyclist-pedestrian pair, with distance-only, naive
closing and TTC-threshold rules as structural baselines.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

IDLE = "IDLE"
SAFE = "SAFE"
WARNING = "WARNING"
ALERT = "ALERT"
STATES = (IDLE, SAFE, WARNING, ALERT)

RULES = ("pairwise", "distance_only", "naive_closing", "ttc")

# Detection classes grouped the way the decision logic consumes them.
CYCLIST_CLASSES = frozenset({"cyclist", "ebike", "bicycle", "motorcycle"})
PEDESTRIAN_CLASSES = frozenset({"pedestrian", "person", "wheelchair", "child"})

MATCH_GATE_M = 3.0
COAST_LIMIT_S = 10.0
VELOCITY_ALPHA = 0.5  # exponential smoothing per frame
DISTANCE_ONLY_RADIUS_M = 10.0
TTC_ALERT_S = 3.0


def _class_group(agent_class: str) -> str:
    if agent_class in CYCLIST_CLASSES:
        return "cyclist"
    if agent_class in PEDESTRIAN_CLASSES:
        return "pedestrian"
    return "vehicle"


@dataclass(frozen=True)
class PipelineParams:
    """The five decision parameters: memory, range window, displacement, lookback."""

    n_memory: int = 58
    d_min: float = 1.9
    d_max: float = 24.8
    delta_min: float = 0.147
    k_lookback: int = 2

    def __post_init__(self):
        if not 0 < self.d_min < self.d_max:
            raise ValueError("need 0 < d_min < d_max")
        if self.n_memory < 1 or self.k_lookback < 1:
            raise ValueError("n_memory and k_lookback must be >= 1")
        if self.delta_min < 0:
            raise ValueError("delta_min must be non-negative")

    def as_dict(self) -> dict:
        return {"n_memory": self.n_memory, "d_min": self.d_min,
                "d_max": self.d_max, "delta_min": self.delta_min,
                "k_lookback": self.k_lookback}

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineParams":
        return cls(n_memory=int(d["n_memory"]), d_min=float(d["d_min"]),
                   d_max=float(d["d_max"]), delta_min=float(d["delta_min"]),
                   k_lookback=int(d["k_lookback"]))


class Track:
    """One tracked object with raw and latency-compensated position histories."""

    __slots__ = ("track_id", "agent_class", "group", "history", "decision_history",
                 "velocity", "accel", "last_seen", "prev_velocity")

    def __init__(self, track_id: int, agent_class: str, frame: int, xy):
        self.track_id = track_id
        self.agent_class = agent_class
        self.group = _class_group(agent_class)
        self.history: list[tuple[int, float, float]] = [(frame, xy[0], xy[1])]
        self.decision_history: list[tuple[int, float, float]] = []
        self.velocity = (0.0, 0.0)  # smoothed displacement per frame
        self.accel = (0.0, 0.0)     # smoothed velocity change per frame
        self.last_seen = frame

    @property
    def position(self):
        h = self.history[-1]
        return (h[1], h[2])

    def _push(self, frame: int, xy, real: bool):
        prev = self.history[-1]
        dt = frame - prev[0]
        if dt <= 0:
            raise ValueError("history frames must increase")
        self.history.append((frame, xy[0], xy[1]))
        if real:
            v_inst = ((xy[0] - prev[1]) / dt, (xy[1] - prev[2]) / dt)
            old_v = self.velocity
            a = VELOCITY_ALPHA
            self.velocity = (a * v_inst[0] + (1 - a) * old_v[0],
                             a * v_inst[1] + (1 - a) * old_v[1])
            a_inst = (self.velocity[0] - old_v[0], self.velocity[1] - old_v[1])
            self.accel = (a * a_inst[0] + (1 - a) * self.accel[0],
                          a * a_inst[1] + (1 - a) * self.accel[1])
            self.last_seen = frame

    def coast(self, frame: int):
        x, y = self.position
        self._push(frame, (x + self.velocity[0], y + self.velocity[1]), real=False)


def estimate_speed(track: Track, fps: int = 30, window_frames: int = 4):
    """Speed in m/s from displacement across a fixed frame window.

    Returns None until the history spans the window (133 ms at 30 fps).
    """
    hist = track.history
    if len(hist) < window_frames + 1:
        return None
    t1, x1, y1 = hist[-1]
    t0, x0, y0 = hist[-1 - window_frames]
    if t1 - t0 != window_frames:
        return None
    return math.hypot(x1 - x0, y1 - y0) / (window_frames / fps)


def predict(track: Track, delay_frames: int, order: int = 1):
    """Latency-compensated position estimate for a track.

    Order 0 returns the stale position; order 1 adds the smoothed per-frame
    velocity times the delay; order 2 adds a quadratic acceleration term.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    x, y = track.position
    n = delay_frames
    if order >= 1:
        x += n * track.velocity[0]
        y += n * track.velocity[1]
    if order == 2:
        x += 0.5 * track.accel[0] * n * n
        y += 0.5 * track.accel[1] * n * n
    return (x, y)


class Tracker:
    """Greedy nearest-neighbour ground-plane tracker with coasting."""

    def __init__(self, fps: int = 30, gate_m: float = MATCH_GATE_M,
                 coast_limit_s: float = COAST_LIMIT_S):
        self.fps = fps
        self.gate = gate_m
        self.coast_frames = int(round(coast_limit_s * fps))
        self.tracks: dict[int, Track] = {}
        self._next_id = 1

    def update(self, frame: int, detections) -> list[Track]:
        """Advance one frame.

        detections: iterable of (agent_class, (x, y)). Matching is greedy in
        ascending (distance, track id, detection index) order within the gate
        and never crosses class groups. Unmatched detections spawn tracks;
        unmatched tracks coast and are dropped once unseen for the limit.
        """
        dets = [( _class_group(cls), cls, xy) for cls, xy in detections]
        candidates = []
        for tid, track in self.tracks.items():
            tx, ty = track.position
            for di, (group, _cls, xy) in enumerate(dets):
                if group != track.group:
                    continue
                d = math.hypot(xy[0] - tx, xy[1] - ty)
                if d <= self.gate:
                    candidates.append((d, tid, di))
        candidates.sort()
        used_tracks, used_dets = set(), set()
        for d, tid, di in candidates:
            if tid in used_tracks or di in used_dets:
                continue
            used_tracks.add(tid)
            used_dets.add(di)
            self.tracks[tid]._push(frame, dets[di][2], real=True)
        for di, (group, cls, xy) in enumerate(dets):
            if di not in used_dets:
                t = Track(self._next_id, cls, frame, xy)
                self._next_id += 1
                self.tracks[t.track_id] = t
        dropped = []
        for tid, track in self.tracks.items():
            if tid in used_tracks or track.history[-1][0] == frame:
                continue
            if frame - track.last_seen > self.coast_frames:
                dropped.append(tid)
            else:
                track.coast(frame)
        for tid in dropped:
            del self.tracks[tid]
        return list(self.tracks.values())

    def compensate(self, delay_frames: int, order: int):
        """Append the latency-compensated position to every decision history."""
        for track in self.tracks.values():
            frame = track.history[-1][0]
            track.decision_history.append((frame, *predict(track, delay_frames, order)))


class CyclistMemory:
    """Remembers the most recent frame with a cyclist-class detection."""

    def __init__(self):
        self.last_frame: int | None = None

    def update(self, frame: int, detections):
        if any(_class_group(cls) == "cyclist" for cls, _xy in detections):
            self.last_frame = frame

    def seen_within(self, frame: int, n_frames: int) -> bool:
        return self.last_frame is not None and frame - self.last_frame < n_frames


def _dec_entry(track: Track, back: int):
    return track.decision_history[-1 - back]


def _pairs(tracks):
    cyclists = sorted((t for t in tracks if t.group == "cyclist"),
                      key=lambda t: t.track_id)
    peds = sorted((t for t in tracks if t.group == "pedestrian"),
                  key=lambda t: t.track_id)
    return cyclists, peds


def decide(tracks, memory: CyclistMemory, frame: int,
           params: PipelineParams):
    """Three-stage pipeline: pedestrian presence, cyclist memory, pairwise check.

    Returns (state, pair) where pair is the first (cyclist id, pedestrian id)
    whose conditions all hold, in ascending id order; pair is None unless the
    state is ALERT.
    """
    cyclists, peds = _pairs(tracks)
    if not peds:
        return IDLE, None
    if not memory.seen_within(frame, params.n_memory):
        return SAFE, None
    k = params.k_lookback
    for c in cyclists:
        if len(c.decision_history) < k + 1:
            continue
        _, cx, cy = _dec_entry(c, 0)
        _, cxk, cyk = _dec_entry(c, k)
        for p in peds:
            if len(p.decision_history) < k + 1:
                continue
            _, px, py = _dec_entry(p, 0)
            d_t = math.hypot(cx - px, cy - py)
            if not params.d_min <= d_t <= params.d_max:
                continue
            _, pxk, pyk = _dec_entry(p, k)
            d_tk = math.hypot(cxk - pxk, cyk - pyk)
            delta_c = math.hypot(cx - cxk, cy - cyk)
            if d_t < d_tk and delta_c > params.delta_min:
                return ALERT, (c.track_id, p.track_id)
    return WARNING, None


def baseline_decide(rule: str, tracks, memory: CyclistMemory, frame: int,
                    params: PipelineParams, fps: int = 30):
    """Structural baseline rules sharing the presence and memory stages."""
    if rule == "pairwise":
        return decide(tracks, memory, frame, params)
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}")
    cyclists, peds = _pairs(tracks)
    if not peds:
        return IDLE, None
    if not memory.seen_within(frame, params.n_memory):
        return SAFE, None
    k = params.k_lookback
    for c in cyclists:
        if not c.decision_history:
            continue
        _, cx, cy = _dec_entry(c, 0)
        for p in peds:
            if not p.decision_history:
                continue
            _, px, py = _dec_entry(p, 0)
            d_t = math.hypot(cx - px, cy - py)
            if rule == "distance_only":
                if d_t < DISTANCE_ONLY_RADIUS_M:
                    return ALERT, (c.track_id, p.track_id)
            elif rule == "naive_closing":
                if len(c.decision_history) < k + 1:
                    continue
                if not params.d_min <= d_t <= params.d_max:
                    continue
                _, cxk, cyk = _dec_entry(c, k)
                stale = math.hypot(cxk - px, cyk - py)  # cyclist past vs ped now
                delta_c = math.hypot(cx - cxk, cy - cyk)
                if stale > d_t and delta_c > params.delta_min:
                    return ALERT, (c.track_id, p.track_id)
            else:  # ttc
                rvx = (c.velocity[0] - p.velocity[0]) * fps
                rvy = (c.velocity[1] - p.velocity[1]) * fps
                if d_t < 1e-9:
                    continue
                closing_speed = -((cx - px) * rvx + (cy - py) * rvy) / d_t
                if closing_speed > 1e-9 and d_t / closing_speed < TTC_ALERT_S:
                    return ALERT, (c.track_id, p.track_id)
    return WARNING, None


def telemetry_message(ts: float, frame: int, tracks,
                      history_limit: int = 30) -> dict:
    """Per-frame tracking telemetry in the published wire schema."""
    objs = []
    for t in sorted(tracks, key=lambda t: t.track_id):
        x, y = t.position
        objs.append({
            "id": t.track_id,
            "class": t.agent_class,
            "pos": [round(x, 4), round(y, 4)],
            "vel": [round(t.velocity[0], 6), round(t.velocity[1], 6)],
            "history": [[f, round(hx, 4), round(hy, 4)]
                        for f, hx, hy in t.history[-history_limit:]],
        })
    return {"ts": ts, "frame": frame, "objects": objs}


def write_telemetry(sink, message: dict) -> None:
    sink.write(json.dumps(message, sort_keys=True) + "\n")
