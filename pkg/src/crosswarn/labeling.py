"""Kinematic ground-truth labeling of scenario frames.

The labeler is clairvoyant: it sees full trajectories and marks a frame
dangerous for a cyclist-pedestrian pair when the gap is closing, the closest
point of approach lies within a radius, and either the cyclist's stopping
distance exceeds a fraction of the remaining gap or the time to closest
approach is short. Danger frames split into two tiers: actionable (a warning
can still change the outcome) and imminent (TTC below the distracted
pedestrian's perception-reaction time).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenarios import GT_CYCLIST_CLASSES, GT_PEDESTRIAN_CLASSES, Scenario

GRAVITY = 9.81

# A cyclist slower than this poses no kinetic threat; without it a pedestrian
# walking toward a parked bicycle would count as endangered.
MIN_THREAT_SPEED_MPS = 0.1


@dataclass(frozen=True)
class GroundTruthParams:
    cpa_radius_m: float = 5.0
    stop_margin: float = 0.8
    ttc_threshold_s: float = 3.0
    t_react_s: float = 0.84
    decel_mps2: float = 1.96
    ebike_decel_mps2: float = 6.0
    v_max_mps: float = 12.0
    prt_distracted_s: float = 1.87

    def __post_init__(self):
        vals = (self.cpa_radius_m, self.stop_margin, self.ttc_threshold_s,
                self.t_react_s, self.decel_mps2, self.ebike_decel_mps2,
                self.v_max_mps, self.prt_distracted_s)
        if min(vals) <= 0:
            raise ValueError("all ground-truth parameters must be positive")
        if not 0 < self.stop_margin <= 1.5:
            raise ValueError("stop_margin must be in (0, 1.5]")

    def replace(self, **kw) -> "GroundTruthParams":
        import dataclasses
        return dataclasses.replace(self, **kw)


@dataclass
class FrameLabel:
    dangerous: bool
    tier: str  # "none" | "actionable" | "imminent"
    severity: float
    ttc_s: float  # inf when undefined
    cpa_m: float
    pair: tuple[str, str] | None  # (cyclist id, pedestrian id)


def stopping_distance(v_mps: float, t_react_s: float, decel_mps2: float) -> float:
    """Reaction rollout plus braking distance: v*t + v^2 / (2a)."""
    return v_mps * t_react_s + v_mps * v_mps / (2.0 * decel_mps2)


def swerve_time(w_m: float, mu: float, t_react_s: float = 0.84) -> float:
    """Total time to clear a lateral distance w under friction-limited swerve.

    Returns reaction time plus sqrt(2 w / (mu g)).
    """
    if w_m < 0 or mu <= 0:
        raise ValueError("need w >= 0 and mu > 0")
    return t_react_s + math.sqrt(2.0 * w_m / (mu * GRAVITY))


def severity_weight(v_mps: float, v_max: float) -> float:
    return min(v_mps * v_mps / (v_max * v_max), 1.0)


def _suffix_min_with_argmin(x: np.ndarray):
    """Running minimum over x[t:] and the earliest index achieving it."""
    n = len(x)
    mins = np.empty(n)
    args = np.empty(n, dtype=int)
    best, best_i = math.inf, n - 1
    for t in range(n - 1, -1, -1):
        if x[t] <= best:  # <= keeps the earliest index while scanning back
            best, best_i = x[t], t
        mins[t] = best
        args[t] = best_i
    return mins, args


def label_frames(scenario: Scenario, gt: GroundTruthParams | None = None
                 ) -> list[FrameLabel]:
    """Per-frame ground-truth labels for the worst cyclist-pedestrian pair.

    The worst pair at a frame: dangerous beats safe; imminent beats
    actionable; then higher severity; then smaller TTC; then pair id order.
    """
    gt = gt or GroundTruthParams()
    pos, vel = scenario.trajectories()
    fps = scenario.fps
    n = scenario.n_frames
    cyclists = [(i, a) for i, a in enumerate(scenario.agents)
                if a.agent_class in GT_CYCLIST_CLASSES]
    peds = [(i, a) for i, a in enumerate(scenario.agents)
            if a.agent_class in GT_PEDESTRIAN_CLASSES]

    labels = [FrameLabel(False, "none", 0.0, math.inf, math.inf, None)
              for _ in range(n)]
    if not cyclists or not peds or n < 2:
        return labels

    # rank key: (dangerous, imminent, severity, -ttc); larger wins
    best_key = [(-1.0,)] * n

    for ci, cagent in cyclists:
        speed = np.linalg.norm(vel[:, ci, :], axis=1)
        decel = gt.ebike_decel_mps2 if cagent.agent_class == "ebike" \
            else gt.decel_mps2
        d_stop = speed * gt.t_react_s + speed * speed / (2.0 * decel)
        sev = np.minimum(speed * speed / (gt.v_max_mps ** 2), 1.0)
        for pi, pagent in peds:
            gap = np.linalg.norm(pos[:, ci, :] - pos[:, pi, :], axis=1)
            closing = np.empty(n, dtype=bool)
            closing[:-1] = gap[1:] < gap[:-1]
            closing[-1] = False
            cpa, arg = _suffix_min_with_argmin(gap)
            within = cpa <= gt.cpa_radius_m
            ttc = np.where(within, (arg - np.arange(n)) / fps, math.inf)
            trigger = (d_stop > gt.stop_margin * gap) | (ttc < gt.ttc_threshold_s)
            dangerous = closing & within & trigger & (speed > MIN_THREAT_SPEED_MPS)
            for t in np.nonzero(dangerous)[0]:
                imminent = ttc[t] < gt.prt_distracted_s
                key = (1.0, 1.0 if imminent else 0.0, sev[t], -ttc[t])
                if key > best_key[t]:
                    best_key[t] = key
                    labels[t] = FrameLabel(
                        dangerous=True,
                        tier="imminent" if imminent else "actionable",
                        severity=float(sev[t]),
                        ttc_s=float(ttc[t]),
                        cpa_m=float(cpa[t]),
                        pair=(cagent.agent_id, pagent.agent_id),
                    )
    return labels


def scenario_cpa_frame(scenario: Scenario) -> int | None:
    """Frame of the global minimum cyclist-pedestrian distance, if pairs exist."""
    pos, _ = scenario.trajectories()
    cyclists = [i for i, a in enumerate(scenario.agents)
                if a.agent_class in GT_CYCLIST_CLASSES]
    peds = [i for i, a in enumerate(scenario.agents)
            if a.agent_class in GT_PEDESTRIAN_CLASSES]
    if not cyclists or not peds:
        return None
    best, best_t = math.inf, None
    for ci in cyclists:
        for pi in peds:
            gap = np.linalg.norm(pos[:, ci, :] - pos[:, pi, :], axis=1)
            t = int(np.argmin(gap))
            if gap[t] < best:
                best, best_t = float(gap[t]), t
    return best_t


def summarize_labels(labels: list[FrameLabel]) -> dict:
    return {
        "frames": len(labels),
        "dangerous": sum(1 for l in labels if l.dangerous),
        "actionable": sum(1 for l in labels if l.tier == "actionable"),
        "imminent": sum(1 for l in labels if l.tier == "imminent"),
    }
