import math

import numpy as np
import pytest

from crosswarn.calibration import (
    CalibrationFrame,
    _Objective,
    _pack,
    bundle_adjust,
    compare_models,
    initial_camera_guess,
    rodrigues,
    synthesize_frames,
    write_trace_jsonl,
)
from crosswarn.geometry import CameraModel

TRUTH = CameraModel()  # f=1013.3, centre (1752.7, 1804.5), 197.9 deg
INIT = initial_camera_guess(TRUTH.crop_size, 200.0)


def contaminate(frames, seed, frac=0.10, shift=(20.0, 0.0)):
    """Shift a fraction of corners by a fixed offset, like a detector slip."""
    rng = np.random.default_rng(seed)
    for f in frames:
        n = len(f.image_points)
        idx = rng.choice(n, size=max(1, int(frac * n)), replace=False)
        f.image_points[idx] += np.asarray(shift)
    return frames


class TestRodrigues:
    def test_identity(self):
        assert np.allclose(rodrigues(np.zeros(3)), np.eye(3))

    def test_quarter_turn_z(self):
        r = rodrigues(np.array([0.0, 0.0, math.pi / 2]))
        assert np.allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    def test_orthonormal(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            r = rodrigues(rng.normal(size=3))
            assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
            assert abs(np.linalg.det(r) - 1.0) < 1e-12


class TestSynthesizeFrames:
    def test_zero_noise_reprojects_exactly(self):
        frames = synthesize_frames(TRUTH, 5, noise_px=0.0, seed=1)
        obj = _Objective(frames, "equidistant")
        x = _pack([TRUTH.optical_center[0], TRUTH.optical_center[1],
                   TRUTH.focal_px],
                  [f.rvec for f in frames], [f.tvec for f in frames])
        assert obj.cost(x) < 1e-16

    def test_deterministic_for_seed(self):
        a = synthesize_frames(TRUTH, 4, noise_px=1.0, seed=9)
        b = synthesize_frames(TRUTH, 4, noise_px=1.0, seed=9)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.image_points, fb.image_points)
            assert np.array_equal(fa.rvec, fb.rvec)

    def test_noise_magnitude_is_rayleigh(self):
        # residuals at the true parameters are exactly the injected noise
        noisy = synthesize_frames(TRUTH, 42, noise_px=1.0, seed=11)
        obj = _Objective(noisy, "equidistant")
        x = _pack([TRUTH.optical_center[0], TRUTH.optical_center[1],
                   TRUTH.focal_px],
                  [f.rvec for f in noisy], [f.tvec for f in noisy])
        deltas = np.linalg.norm(obj.residuals(x).reshape(-1, 2), axis=1)
        # mean of a 2D unit-sigma Gaussian's norm is sqrt(pi/2) = 1.2533
        assert abs(deltas.mean() - 1.2533) < 0.06

    def test_validates_arguments(self):
        with pytest.raises(ValueError):
            synthesize_frames(TRUTH, 2, seed=0)
        with pytest.raises(ValueError):
            synthesize_frames(TRUTH, 5, noise_px=-1.0, seed=0)


class TestBundleAdjust:
    def test_zero_noise_exact_recovery(self):
        frames = synthesize_frames(TRUTH, 12, noise_px=0.0, seed=42)
        res = bundle_adjust(frames, "equidistant", INIT)
        cx, cy, f = res.intrinsics
        assert abs(f - TRUTH.focal_px) < 0.1
        assert abs(cx - TRUTH.optical_center[0]) < 0.1
        assert abs(cy - TRUTH.optical_center[1]) < 0.1
        assert res.rms_reprojection_px < 1e-6

    def test_noisy_recovery_rms_at_noise_level(self):
        frames = synthesize_frames(TRUTH, 42, noise_px=1.0, seed=7)
        res = bundle_adjust(frames, "equidistant", INIT)
        assert abs(res.intrinsics[2] - TRUTH.focal_px) / TRUTH.focal_px < 0.005
        assert 0.8 <= res.rms_reprojection_px <= 1.3

    def test_robust_pass_beats_plain_on_outliers(self):
        def fit(robust):
            frames = contaminate(
                synthesize_frames(TRUTH, 42, noise_px=1.0, seed=1), seed=101)
            return bundle_adjust(frames, "equidistant", INIT, robust=robust)

        plain = fit(False)
        rob = fit(True)
        err_plain = abs(plain.intrinsics[2] - TRUTH.focal_px)
        err_rob = abs(rob.intrinsics[2] - TRUTH.focal_px)
        assert err_plain > 5.0
        assert err_rob < err_plain / 2.0

    def test_cost_non_increasing_over_accepted_iterations(self):
        frames = synthesize_frames(TRUTH, 8, noise_px=1.0, seed=5)
        res = bundle_adjust(frames, "equidistant", INIT)
        for pass_name in ("least_squares", "soft_l1"):
            costs = [row["cost"] for row in res.trace if row["pass"] == pass_name]
            assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))

    def test_trace_jsonl_roundtrip(self, tmp_path):
        frames = synthesize_frames(TRUTH, 4, noise_px=0.5, seed=2)
        res = bundle_adjust(frames, "equidistant", INIT)
        path = tmp_path / "trace.jsonl"
        write_trace_jsonl(res.trace, path)
        import json
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        assert len(rows) == len(res.trace)
        assert {"iteration", "cost", "lambda", "pass"} <= set(rows[0])

    def test_too_few_frames(self):
        frames = synthesize_frames(TRUTH, 3, noise_px=0.0, seed=3)
        with pytest.raises(ValueError):
            bundle_adjust(frames[:2], "equidistant", INIT)

    def test_center_equivariance_under_image_translation(self):
        frames = synthesize_frames(TRUTH, 8, noise_px=0.0, seed=13)
        base = bundle_adjust(frames, "equidistant", INIT)
        shifted = synthesize_frames(TRUTH, 8, noise_px=0.0, seed=13)
        for f in shifted:
            f.image_points += np.array([12.5, -7.25])
        moved = bundle_adjust(shifted, "equidistant", INIT)
        assert abs(moved.intrinsics[0] - base.intrinsics[0] - 12.5) < 1e-4
        assert abs(moved.intrinsics[1] - base.intrinsics[1] + 7.25) < 1e-4
        assert abs(moved.intrinsics[2] - base.intrinsics[2]) < 1e-4


class TestGradient:
    def test_matches_central_differences(self):
        frames = synthesize_frames(TRUTH, 4, noise_px=1.0, seed=17)
        obj = _Objective(frames, "equidistant")
        x0 = _pack([INIT.optical_center[0], INIT.optical_center[1],
                    INIT.focal_px],
                   [f.rvec for f in frames], [f.tvec for f in frames])
        rng = np.random.default_rng(23)
        for _ in range(10):
            x = x0 + rng.normal(scale=[1.0, 1.0, 2.0] + [0.01] * (x0.size - 3),
                                size=x0.size)
            grad = obj.gradient(x)
            # probe a handful of coordinates against the scalar objective
            for i in rng.choice(x.size, size=6, replace=False):
                h = 1e-5 * max(abs(x[i]), 1.0)
                xp, xm = x.copy(), x.copy()
                xp[i] += h
                xm[i] -= h
                fd = (obj.cost(xp) - obj.cost(xm)) / (2 * h)
                denom = max(abs(fd), abs(grad[i]), 1e-8)
                assert abs(grad[i] - fd) / denom < 1e-4


class TestCompareModels:
    @pytest.fixture(scope="class")
    def rms_map(self):
        frames = synthesize_frames(TRUTH, 12, noise_px=1.0, seed=3)
        return compare_models(frames, INIT)

    def test_generating_model_wins(self, rms_map):
        assert rms_map["equidistant"] == min(rms_map.values())

    def test_ortho_and_stereo_worse_than_equisolid(self, rms_map):
        assert rms_map["orthographic"] > rms_map["equisolid"]
        assert rms_map["stereographic"] > rms_map["equisolid"]

    def test_equidistant_beats_ortho_and_stereo(self, rms_map):
        assert rms_map["equidistant"] < rms_map["orthographic"]
        assert rms_map["equidistant"] < rms_map["stereographic"]


class TestCalibrationFrameValidation:
    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            CalibrationFrame(np.zeros((5, 3)), np.zeros((4, 2)),
                             np.zeros(3), np.zeros(3))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            CalibrationFrame(np.zeros((3, 3)), np.zeros((3, 2)),
                             np.zeros(3), np.zeros(3))
