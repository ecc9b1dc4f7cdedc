import math

import numpy as np
import pytest

from crosswarn.labeling import (
    FrameLabel,
    GroundTruthParams,
    label_frames,
    scenario_cpa_frame,
    severity_weight,
    stopping_distance,
    summarize_labels,
    swerve_time,
)
from crosswarn.scenarios import Agent, Scenario


def agent(aid, cls, wps, interp="linear"):
    return Agent(aid, cls, np.array(wps, dtype=float), interpolation=interp)


def scen(agents, duration=6.0, category="standard", fps=30):
    return Scenario("t", category, duration, list(agents), fps=fps)


class TestKinematicFormulas:
    def test_stopping_distance_field_values(self):
        v = 30.0 / 3.6
        assert abs(stopping_distance(v, 0.84, 1.96) - 24.7) < 0.05

    def test_stopping_distance_design_values(self):
        v = 30.0 / 3.6
        assert abs(stopping_distance(v, 2.5, 3.4) - 31.0) < 0.05

    def test_swerve_total(self):
        total = swerve_time(1.0, 0.4)
        assert abs(total - 1.55) < 0.01
        assert abs((total - 0.84) - 0.714) < 0.005

    def test_swerve_limit_and_scaling(self):
        assert abs(swerve_time(0.0, 0.4) - 0.84) < 1e-12
        m1 = swerve_time(1.0, 0.4) - 0.84
        m2 = swerve_time(1.0, 0.8) - 0.84
        assert abs(m1 / m2 - math.sqrt(2.0)) < 1e-9

    def test_severity(self):
        assert severity_weight(12.0, 12.0) == 1.0
        assert severity_weight(14.0, 12.0) == 1.0
        assert abs(severity_weight(6.0, 12.0) - 0.25) < 1e-12


class TestGroundTruthParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            GroundTruthParams(cpa_radius_m=-1.0)
        with pytest.raises(ValueError):
            GroundTruthParams(stop_margin=1.6)

    def test_replace(self):
        gt = GroundTruthParams().replace(cpa_radius_m=3.0)
        assert gt.cpa_radius_m == 3.0
        assert gt.ttc_threshold_s == 3.0


class TestLabelFrames:
    def test_stationary_cyclist_never_dangerous(self):
        s = scen([
            agent("p", "pedestrian", [(0, 5, 3), (6, 5, -3)]),
            agent("c", "cyclist", [(0, 8, 0), (6, 8, 0)]),
        ])
        labels = label_frames(s)
        assert not any(l.dangerous for l in labels)

    def test_head_on_danger_and_tiers(self):
        # cyclist at 6 m/s head-on toward a slow pedestrian
        s = scen([
            agent("p", "pedestrian", [(0, 2.0, 0.2), (6, 3.2, 0.2)]),
            agent("c", "cyclist", [(0, 26.0, 0.0), (4.0, 2.0, 0.0)]),
        ])
        labels = label_frames(s)
        summary = summarize_labels(labels)
        assert summary["dangerous"] > 0
        assert summary["actionable"] > 0
        assert summary["imminent"] > 0
        gt = GroundTruthParams()
        for l in labels:
            if l.dangerous:
                assert l.pair == ("c", "p")
                assert (l.tier == "imminent") == (l.ttc_s < gt.prt_distracted_s)
            else:
                assert l.tier == "none" and l.severity == 0.0

    def test_receding_cyclist_safe(self):
        s = scen([
            agent("p", "pedestrian", [(0, 2.0, 0.0), (6, 2.0, 0.0)]),
            agent("c", "cyclist", [(0, 4.0, 0.0), (4.0, 28.0, 0.0)]),
        ])
        assert not any(l.dangerous for l in label_frames(s))

    def test_near_miss_beyond_radius_safe(self):
        # closing but the closest approach stays at 6.5 m > 5 m radius
        s = scen([
            agent("p", "pedestrian", [(0, 8.0, 6.5), (6, 8.0, 6.5)]),
            agent("c", "cyclist", [(0, 26.0, 0.0), (4.0, 2.0, 0.0)]),
        ])
        assert not any(l.dangerous for l in label_frames(s))

    def test_ebike_uses_stronger_brakes(self):
        # same geometry; the e-bike's shorter stopping distance delays onset
        def build(cls):
            return scen([
                agent("p", "pedestrian", [(0, 1.0, 0.3), (8, 1.6, 0.3)]),
                agent("c", cls, [(0, 25.0, 0.0), (6.0, 1.0, 0.0)]),
            ], duration=7.0)

        conventional = summarize_labels(label_frames(build("cyclist")))
        ebike = summarize_labels(label_frames(build("ebike")))
        assert ebike["dangerous"] < conventional["dangerous"]

    def test_severity_uses_cyclist_speed(self):
        s = scen([
            agent("p", "pedestrian", [(0, 1.0, 0.1), (6, 1.4, 0.1)]),
            agent("c", "cyclist", [(0, 26.0, 0.0), (4.0, 2.0, 0.0)]),  # 6 m/s
        ])
        labels = label_frames(s)
        sev = {round(l.severity, 3) for l in labels if l.dangerous}
        assert sev and all(abs(v - 0.25) < 0.02 for v in sev)

    def test_doubling_vmax_never_raises_severity(self):
        s = scen([
            agent("p", "pedestrian", [(0, 1.0, 0.1), (6, 1.4, 0.1)]),
            agent("c", "cyclist", [(0, 26.0, 0.0), (4.0, 2.0, 0.0)]),
        ])
        base = label_frames(s, GroundTruthParams())
        wide = label_frames(s, GroundTruthParams(v_max_mps=24.0))
        for a, b in zip(base, wide):
            assert b.severity <= a.severity + 1e-12

    def test_deterministic_and_pair_order_independent(self):
        s = scen([
            agent("p2", "pedestrian", [(0, 6.0, 1.0), (6, 6.0, -2.0)]),
            agent("p1", "pedestrian", [(0, 5.0, 2.0), (6, 5.0, -3.0)]),
            agent("c", "cyclist", [(0, 26.0, 0.0), (4.0, 2.0, 0.0)]),
        ])
        a = label_frames(s)
        # same agents, reversed declaration order
        s2 = scen([s.agents[2], s.agents[1], s.agents[0]])
        b = label_frames(s2)
        for la, lb in zip(a, b):
            assert la.dangerous == lb.dangerous
            assert la.tier == lb.tier
            assert abs(la.severity - lb.severity) < 1e-12

    def test_cars_never_form_pairs(self):
        s = scen([
            agent("p", "pedestrian", [(0, 2.0, 0.2), (6, 3.0, 0.2)]),
            agent("v", "car", [(0, 26.0, 0.0), (4.0, 2.0, 0.0)]),
        ])
        assert not any(l.dangerous for l in label_frames(s))

    def test_cpa_frame(self):
        s = scen([
            agent("p", "pedestrian", [(0, 2.0, 0.0), (6, 2.0, 0.0)]),
            agent("c", "cyclist", [(0, 26.0, 0.0), (4.0, 2.0, 0.0)]),
        ])
        t = scenario_cpa_frame(s)
        assert t == 4 * 30  # cyclist reaches the pedestrian at t = 4 s
