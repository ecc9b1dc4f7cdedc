"""Intrinsic fisheye calibration by direct bundle adjustment.

Jointly optimizes (c_x, c_y, f) and per-frame board poses over 2D-3D
correspondences with a Levenberg-Marquardt loop, then re-runs with a soft-l1
robust loss to downweight outlier corners. Synthetic checkerboard frames
stand in for image-space corner detection, which needs real imagery.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraModel, project_camera_frame

LM_LAMBDA0 = 1e-3
LM_MAX_ITERS = 200
LM_REL_TOL = 1e-10


class CalibrationError(RuntimeError):
    """Bundle adjustment failed to converge; carries best-so-far state."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass
class CalibrationFrame:
    """One checkerboard view: board-frame 3D points, image points, pose estimate.

    The pose (axis-angle rotation, translation in metres) maps board-frame
    points into the camera optical frame and serves as the optimizer's
    starting value; in a live pipeline it would come from a coarse PnP fit.
    """

    board_points: np.ndarray  # (N, 3)
    image_points: np.ndarray  # (N, 2)
    rvec: np.ndarray          # (3,)
    tvec: np.ndarray          # (3,)

    def __post_init__(self):
        self.board_points = np.asarray(self.board_points, dtype=float)
        self.image_points = np.asarray(self.image_points, dtype=float)
        self.rvec = np.asarray(self.rvec, dtype=float)
        self.tvec = np.asarray(self.tvec, dtype=float)
        if len(self.board_points) != len(self.image_points):
            raise ValueError("board and image point counts differ")
        if len(self.board_points) < 4:
            raise ValueError("need at least 4 correspondences per frame")


@dataclass
class CalibrationResult:
    intrinsics: tuple[float, float, float]  # (c_x, c_y, f)
    poses: list[tuple[np.ndarray, np.ndarray]]
    rms_reprojection_px: float  # per-coordinate RMS over all corners
    trace: list[dict] = field(default_factory=list)
    converged: bool = True
    per_model_rms: dict[str, float] | None = None

    def to_calibration_dict(self, fov_deg: float, crop_size, variant: str) -> dict:
        cx, cy, f = self.intrinsics
        return {
            "focal_px": round(float(f), 4),
            "fov_deg": float(fov_deg),
            "optical_center": [round(float(cx), 4), round(float(cy), 4)],
            "crop_size": list(crop_size),
            "projection": variant,
            "rms_reprojection_px": round(float(self.rms_reprojection_px), 6),
        }


def rodrigues(rvec: np.ndarray) -> np.ndarray:
    """Axis-angle to rotation matrix."""
    rvec = np.asarray(rvec, dtype=float)
    angle = np.linalg.norm(rvec)
    if angle < 1e-12:
        return np.eye(3)
    axis = rvec / angle
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def _pack(intr, rvecs, tvecs):
    return np.concatenate([np.asarray(intr, float).ravel(),
                           np.asarray(rvecs, float).ravel(),
                           np.asarray(tvecs, float).ravel()])


def _unpack(x, n_frames):
    intr = x[:3]
    rvecs = x[3:3 + 3 * n_frames].reshape(n_frames, 3)
    tvecs = x[3 + 3 * n_frames:].reshape(n_frames, 3)
    return intr, rvecs, tvecs


class _Objective:
    """Reprojection residuals for a set of frames under one lens model.

    Residual layout: frame-major, per point (du, dv). The soft-l1 transform
    r -> r * sqrt(rho(s)/s), s = |e|^2 / sigma^2, rho(s) = 2(sqrt(1+s)-1),
    keeps sum(r~^2) equal to the robust cost so the same LM loop minimizes it.
    """

    def __init__(self, frames, variant, robust_sigma=None):
        self.frames = frames
        self.variant = variant
        self.robust_sigma = robust_sigma
        self.board = np.stack([f.board_points for f in frames])  # (F, N, 3)
        self.image = np.stack([f.image_points for f in frames])  # (F, N, 2)
        self.n_frames = len(frames)
        self.n_pts = self.board.shape[1]

    def residuals(self, x) -> np.ndarray:
        intr, rvecs, tvecs = _unpack(x, self.n_frames)
        cx, cy, f = intr
        rots = np.stack([rodrigues(r) for r in rvecs])          # (F, 3, 3)
        cam_pts = np.einsum("fij,fnj->fni", rots, self.board) + tvecs[:, None, :]
        uv, _theta, _front = project_camera_frame(self.variant, f, (cx, cy), cam_pts)
        err = uv - self.image                                    # (F, N, 2)
        if self.robust_sigma is not None:
            s = (err ** 2).sum(axis=-1) / self.robust_sigma ** 2
            rho = 2.0 * (np.sqrt(1.0 + s) - 1.0)
            w = np.sqrt(np.where(s > 1e-12, rho / np.where(s > 0, s, 1.0), 1.0))
            err = err * w[..., None]
        return err.ravel()

    def cost(self, x) -> float:
        r = self.residuals(x)
        return float(r @ r)

    def jacobian(self, x, step=1e-6) -> np.ndarray:
        """Central-difference Jacobian.

        Frames are independent, so perturbing pose parameter j of every frame
        simultaneously yields all frames' j-th pose columns in two residual
        evaluations; only the three intrinsics need dedicated sweeps.
        """
        n = self.n_frames
        n_res = 2 * self.n_pts
        jac = np.zeros((n * n_res, x.size))
        for i in range(3):
            xp, xm = x.copy(), x.copy()
            xp[i] += step
            xm[i] -= step
            jac[:, i] = (self.residuals(xp) - self.residuals(xm)) / (2 * step)
        for j in range(6):
            xp, xm = x.copy(), x.copy()
            for fidx in range(n):
                col = 3 + (j if j < 3 else 3 * n + j - 3) + 3 * fidx
                xp[col] += step
                xm[col] -= step
            diff = (self.residuals(xp) - self.residuals(xm)) / (2 * step)
            diff = diff.reshape(n, n_res)
            for fidx in range(n):
                col = 3 + (j if j < 3 else 3 * n + j - 3) + 3 * fidx
                jac[fidx * n_res:(fidx + 1) * n_res, col] = diff[fidx]
        return jac

    def gradient(self, x) -> np.ndarray:
        """Gradient of the scalar cost sum(r^2), i.e. 2 J^T r."""
        return 2.0 * self.jacobian(x).T @ self.residuals(x)


def _levenberg_marquardt(obj: _Objective, x0: np.ndarray, trace: list,
                         pass_name: str, max_iters=LM_MAX_ITERS):
    x = x0.copy()
    cost = obj.cost(x)
    lam = LM_LAMBDA0
    trace.append({"pass": pass_name, "iteration": 0, "cost": cost, "lambda": lam})
    for it in range(1, max_iters + 1):
        jac = obj.jacobian(x)
        r = obj.residuals(x)
        jtj = jac.T @ jac
        g = jac.T @ r
        diag = np.diag(jtj).copy()
        diag[diag < 1e-12] = 1e-12
        accepted = False
        for _ in range(25):  # inner damping search
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_try = x + step
            cost_try = obj.cost(x_try)
            if cost_try < cost:
                rel = (cost - cost_try) / max(cost, 1e-300)
                x, cost = x_try, cost_try
                lam = max(lam / 10.0, 1e-12)
                trace.append({"pass": pass_name, "iteration": it,
                              "cost": cost, "lambda": lam})
                accepted = True
                if rel < LM_REL_TOL:
                    return x, cost, True
                break
            lam *= 10.0
        if not accepted:
            # damping exhausted: converged to numerical precision
            return x, cost, True
    return x, cost, False


def bundle_adjust(frames: list[CalibrationFrame], variant: str,
                  initial: CameraModel, robust: bool = True,
                  max_iters: int = LM_MAX_ITERS) -> CalibrationResult:
    """Fit (c_x, c_y, f) and all frame poses by LM on reprojection error.

    The initial focal length should be within a factor of two of the truth;
    outside that basin the fit may diverge, which raises CalibrationError
    carrying the best-so-far result and the convergence trace.
    """
    if len(frames) < 3:
        raise ValueError("need at least 3 frames")
    x0 = _pack([initial.optical_center[0], initial.optical_center[1],
                initial.focal_px],
               [f.rvec for f in frames], [f.tvec for f in frames])
    trace: list[dict] = []
    obj = _Objective(frames, variant)
    x, cost, ok = _levenberg_marquardt(obj, x0, trace, "least_squares", max_iters)
    n_res = sum(2 * len(f.board_points) for f in frames)
    rms = math.sqrt(cost / n_res)
    if robust and rms > 0:
        robj = _Objective(frames, variant, robust_sigma=max(rms, 1e-6))
        x, _rcost, ok2 = _levenberg_marquardt(robj, x, trace, "soft_l1", max_iters)
        ok = ok and ok2
        rms = math.sqrt(obj.cost(x) / n_res)
    intr, rvecs, tvecs = _unpack(x, len(frames))
    result = CalibrationResult(
        intrinsics=(float(intr[0]), float(intr[1]), float(intr[2])),
        poses=[(rvecs[i].copy(), tvecs[i].copy()) for i in range(len(frames))],
        rms_reprojection_px=rms, trace=trace, converged=ok)
    if not ok:
        raise CalibrationError(
            f"no convergence after {max_iters} iterations (rms {rms:.3f} px)",
            result=result)
    return result


def compare_models(frames: list[CalibrationFrame],
                   initial: CameraModel) -> dict[str, float]:
    """Fit every supported lens model independently; non-convergence maps to inf."""
    from .geometry import SUPPORTED_PROJECTIONS
    out = {}
    for variant in SUPPORTED_PROJECTIONS:
        try:
            out[variant] = bundle_adjust(frames, variant, initial).rms_reprojection_px
        except (CalibrationError, np.linalg.LinAlgError):
            out[variant] = math.inf
    return out


def synthesize_frames(true_cam: CameraModel, n_frames: int,
                      board_shape: tuple[int, int] = (9, 6),
                      square_m: float = 0.1, noise_px: float = 1.0,
                      seed: int = 0, max_pose_tries: int = 200,
                      jitter_init: bool = False) -> list[CalibrationFrame]:
    """Generate checkerboard views fully inside the field of view.

    Image points are the exact forward projection of the board under a random
    pose plus isotropic Gaussian pixel noise. The stored pose is the true one
    (optionally jittered) and acts as the optimizer's starting estimate.
    Deterministic for a fixed seed.
    """
    if n_frames < 3:
        raise ValueError("need at least 3 frames")
    if noise_px < 0:
        raise ValueError("noise_px must be non-negative")
    rng = np.random.default_rng(seed)
    nx, ny = board_shape
    gx, gy = np.meshgrid(np.arange(nx) * square_m, np.arange(ny) * square_m)
    board = np.stack([gx.ravel() - (nx - 1) * square_m / 2,
                      gy.ravel() - (ny - 1) * square_m / 2,
                      np.zeros(nx * ny)], axis=1)
    frames = []
    theta_cap = 0.92 * true_cam.theta_max
    w, h = true_cam.crop_size
    for _ in range(n_frames):
        for attempt in range(max_pose_tries):
            # board roughly facing the camera, random tilt, placed in front
            tilt_axis = rng.normal(size=3)
            tilt_axis /= np.linalg.norm(tilt_axis)
            tilt = rng.uniform(0.0, 0.7)
            base = rodrigues(np.array([0.0, math.pi / 2, 0.0]))  # board normal -> -x
            rot = rodrigues(tilt_axis * tilt) @ base
            dist = rng.uniform(1.2, 3.2)
            bearing = rng.uniform(-0.9, 0.9)
            elev = rng.uniform(-0.6, 0.6)
            center = dist * np.array([math.cos(bearing) * math.cos(elev),
                                      math.sin(bearing) * math.cos(elev),
                                      math.sin(elev)])
            rvec_angle = np.array(_matrix_to_rvec(rot))
            tvec = center - rot @ board.mean(axis=0)
            cam_pts = board @ rot.T + tvec
            uv, theta, front = project_camera_frame(
                true_cam.projection_variant, true_cam.focal_px,
                true_cam.optical_center, cam_pts)
            inside = (front.all() and (theta <= theta_cap).all()
                      and (uv[:, 0] >= 1).all() and (uv[:, 0] <= w - 2).all()
                      and (uv[:, 1] >= 1).all() and (uv[:, 1] <= h - 2).all())
            if inside:
                noisy = uv + rng.normal(scale=noise_px, size=uv.shape) \
                    if noise_px > 0 else uv.copy()
                rv, tv = rvec_angle, tvec
                if jitter_init:
                    rv = rv + rng.normal(scale=0.02, size=3)
                    tv = tv + rng.normal(scale=0.02, size=3)
                frames.append(CalibrationFrame(board.copy(), noisy, rv, tv))
                break
        else:
            raise RuntimeError(
                f"could not place board inside FOV after {max_pose_tries} tries")
    return frames


def _matrix_to_rvec(rot: np.ndarray) -> np.ndarray:
    """Rotation matrix to axis-angle (inverse Rodrigues)."""
    angle = math.acos(np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0))
    if angle < 1e-12:
        return np.zeros(3)
    if math.pi - angle < 1e-6:
        # near-pi: extract axis from R + I
        m = (rot + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(m), 0.0))
        axis = axis / np.linalg.norm(axis)
        # fix signs from off-diagonals
        if m[0, 1] < 0:
            axis[1] = -axis[1]
        if m[0, 2] < 0:
            axis[2] = -axis[2]
        return axis * angle
    axis = np.array([rot[2, 1] - rot[1, 2],
                     rot[0, 2] - rot[2, 0],
                     rot[1, 0] - rot[0, 1]]) / (2.0 * math.sin(angle))
    return axis * angle


def initial_camera_guess(crop_size, nominal_fov_deg: float,
                         variant: str = "equidistant") -> CameraModel:
    """Coarse starting model: centre at the crop centre, f from D*180/(FOV*pi)."""
    w, h = crop_size
    f = min(w, h) * 180.0 / (nominal_fov_deg * math.pi)
    return CameraModel(projection_variant=variant, focal_px=f,
                       optical_center=(w / 2.0, h / 2.0),
                       crop_size=(w, h), fov_deg=nominal_fov_deg,
                       height_m=3.66, pitch_deg=0.0)


def write_trace_jsonl(trace: list[dict], path) -> None:
    with open(path, "w") as fh:
        for row in trace:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
