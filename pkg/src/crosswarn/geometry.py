"""Fisheye ground-plane geometry.

Closed-form pixel-to-ground and ground-to-pixel mappings for a pole-mounted
fisheye camera observing a flat ground plane, a precomputed per-pixel ground
lookup table, and the 3D-box footprint error model used by the sensor
simulation.

Conventions
-----------
Camera optical frame: x along the optical axis, y to the right in the image,
z up. Mount frame: same origin (the lens), x forward and horizontal, y right,
z up; the ground plane sits at z = -height_m below the lens. Ground
coordinates returned by this module are metric, with the origin directly
below the camera, x forward, y right. Pitch is a rotation about the y axis;
0 is level, negative pitches the view toward the ground.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SUPPORTED_PROJECTIONS = ("equidistant", "equisolid", "orthographic", "stereographic")

# Largest incidence angle each lens map can represent without folding back.
_DOMAIN_MAX = {
    "equidistant": math.pi,
    "equisolid": math.pi,
    "orthographic": math.pi / 2.0,
    "stereographic": math.pi - 1e-9,
}

# Default 3D box dimensions (length, width, height) in metres per agent class.
# Used wherever a detection footprint is needed and the scenario does not
# override them.
DEFAULT_CLASS_DIMS = {
    "pedestrian": (0.4, 0.4, 1.7),
    "child": (0.3, 0.3, 1.2),
    "wheelchair": (1.1, 0.7, 1.3),
    "cyclist": (1.8, 0.6, 1.8),
    "ebike": (1.8, 0.6, 1.8),
    "car": (4.5, 1.8, 1.5),
}


class InvalidPixelError(ValueError):
    """Pixel outside the crop or outside the lens model's invertible domain."""


class NotVisibleError(ValueError):
    """No part of the queried object projects into the field of view."""


def forward_lens_map(variant: str, theta):
    """r/f as a function of incidence angle theta for the given lens model."""
    theta = np.asarray(theta, dtype=float)
    if variant == "equidistant":
        return theta
    if variant == "equisolid":
        return 2.0 * np.sin(theta / 2.0)
    if variant == "orthographic":
        return np.sin(theta)
    if variant == "stereographic":
        return 2.0 * np.tan(theta / 2.0)
    raise ValueError(f"unknown projection variant: {variant!r}")


def inverse_lens_map(variant: str, rho):
    """Incidence angle theta from rho = r/f.

    Returns (theta, valid); valid is False where rho is outside the model's
    invertible domain (e.g. rho > 1 for the orthographic model).
    """
    rho = np.asarray(rho, dtype=float)
    if variant == "equidistant":
        theta = rho.copy()
        valid = rho <= math.pi
    elif variant == "equisolid":
        arg = rho / 2.0
        valid = arg <= 1.0
        theta = 2.0 * np.arcsin(np.clip(arg, 0.0, 1.0))
    elif variant == "orthographic":
        valid = rho <= 1.0
        theta = np.arcsin(np.clip(rho, 0.0, 1.0))
    elif variant == "stereographic":
        theta = 2.0 * np.arctan(rho / 2.0)
        valid = np.ones(theta.shape, dtype=bool)
    else:
        raise ValueError(f"unknown projection variant: {variant!r}")
    return theta, valid


@dataclass(frozen=True)
class CameraModel:
    """Calibrated fisheye camera plus its mounting geometry.

    focal_px and optical_center are in pixels of the square centre crop;
    fov_deg is the full angular field of view; height_m is the lens height
    above the ground plane; pitch_deg rotates the optical axis about the
    y axis (negative = downward).
    """

    projection_variant: str = "equidistant"
    focal_px: float = 1013.3
    optical_center: tuple[float, float] = (1752.7, 1804.5)
    crop_size: tuple[int, int] = (3500, 3500)
    fov_deg: float = 197.9
    height_m: float = 3.66
    pitch_deg: float = 0.0

    def __post_init__(self):
        if self.projection_variant not in SUPPORTED_PROJECTIONS:
            raise ValueError(f"unknown projection variant: {self.projection_variant!r}")
        if self.focal_px <= 0:
            raise ValueError("focal_px must be positive")
        if self.crop_size[0] <= 0 or self.crop_size[1] <= 0:
            raise ValueError("crop_size components must be positive")
        if not 0.0 < self.fov_deg <= 360.0:
            raise ValueError("fov_deg must be in (0, 360]")
        if self.height_m <= 0:
            raise ValueError("height_m must be positive")
        cx, cy = self.optical_center
        w, h = self.crop_size
        if not (0.0 <= cx < w and 0.0 <= cy < h):
            raise ValueError("optical_center must lie inside the crop")

    @property
    def half_fov_rad(self) -> float:
        return math.radians(self.fov_deg) / 2.0

    @property
    def theta_max(self) -> float:
        """Largest representable incidence angle: FOV edge or lens domain edge."""
        return min(self.half_fov_rad, _DOMAIN_MAX[self.projection_variant])

    def pitch_matrix(self) -> np.ndarray:
        """Rotation taking camera-frame rays into the mount frame."""
        a = math.radians(self.pitch_deg)
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])

    @classmethod
    def from_calibration(cls, calib: dict, height_m: float = 3.66,
                         pitch_deg: float = 0.0) -> "CameraModel":
        return cls(
            projection_variant=calib.get("projection", "equidistant"),
            focal_px=float(calib["focal_px"]),
            optical_center=tuple(float(v) for v in calib["optical_center"]),
            crop_size=tuple(int(v) for v in calib["crop_size"]),
            fov_deg=float(calib["fov_deg"]),
            height_m=float(height_m),
            pitch_deg=float(pitch_deg),
        )


def pixel_to_ray(cam: CameraModel, u: float, v: float) -> np.ndarray:
    """Unit viewing ray in the camera optical frame for image point (u, v).

    Raises InvalidPixelError when (u, v) falls outside the crop or the lens
    model cannot invert the radial distance.
    """
    w, h = cam.crop_size
    if not (0.0 <= u < w and 0.0 <= v < h):
        raise InvalidPixelError(f"pixel ({u}, {v}) outside {w}x{h} crop")
    dx = u - cam.optical_center[0]
    dy = v - cam.optical_center[1]
    r = math.hypot(dx, dy)
    phi = math.atan2(dy, dx)
    theta, ok = inverse_lens_map(cam.projection_variant, r / cam.focal_px)
    if not bool(ok):
        raise InvalidPixelError(
            f"radius {r:.1f} px outside the {cam.projection_variant} domain")
    theta = float(theta)
    st = math.sin(theta)
    return np.array([math.cos(theta), st * math.cos(phi), -st * math.sin(phi)])


def pitch_rotate(d: np.ndarray, pitch_deg: float) -> np.ndarray:
    """Rotate a camera-frame ray into the mount frame (rotation about y)."""
    a = math.radians(pitch_deg)
    c, s = math.cos(a), math.sin(a)
    d = np.asarray(d, dtype=float)
    return np.array([c * d[0] - s * d[2], d[1], s * d[0] + c * d[2]])


def ray_to_ground(cam: CameraModel, d_pitched: np.ndarray):
    """Intersect a mount-frame ray from the lens with the ground plane.

    Returns (x, y) in metres, or None for rays at or above the horizon
    (d_z >= 0 yields no ground point).
    """
    dz = float(d_pitched[2])
    if dz >= 0.0:
        return None
    t = cam.height_m / -dz
    return (t * float(d_pitched[0]), t * float(d_pitched[1]))


def pixel_to_ground(cam: CameraModel, u: float, v: float):
    """Full pixel -> ground chain: lens inverse, pitch, ground intersection."""
    d = pitch_rotate(pixel_to_ray(cam, u, v), cam.pitch_deg)
    return ray_to_ground(cam, d)


def project_camera_frame(variant: str, focal_px: float,
                         optical_center: tuple[float, float], pts: np.ndarray):
    """Project camera-optical-frame points through the lens model only.

    pts has shape (..., 3) with x along the optical axis. Returns (uv, theta,
    in_front) where uv has shape (..., 2), theta is the incidence angle and
    in_front marks points with positive optical-axis coordinate. No field of
    view gating is applied here.
    """
    pts = np.asarray(pts, dtype=float)
    norm = np.linalg.norm(pts, axis=-1)
    norm = np.where(norm == 0.0, 1.0, norm)
    x = pts[..., 0] / norm
    theta = np.arccos(np.clip(x, -1.0, 1.0))
    phi = np.arctan2(-pts[..., 2], pts[..., 1])
    r = focal_px * forward_lens_map(variant, theta)
    uv = np.stack([optical_center[0] + r * np.cos(phi),
                   optical_center[1] + r * np.sin(phi)], axis=-1)
    return uv, theta, pts[..., 0] > 0.0


def project_ground_points(cam: CameraModel, pts: np.ndarray,
                          require_front: bool = False):
    """Project mount-frame 3D points (metres, origin under the camera).

    Returns (uv, visible). Visibility requires the incidence angle to stay
    within half the field of view; with require_front the point must also lie
    in front of the lens plane (used for box corners).
    """
    pts = np.asarray(pts, dtype=float)
    rel = pts - np.array([0.0, 0.0, cam.height_m])
    d_cam = rel @ cam.pitch_matrix()  # R^T applied row-wise
    uv, theta, in_front = project_camera_frame(
        cam.projection_variant, cam.focal_px, cam.optical_center, d_cam)
    visible = theta <= cam.theta_max
    if require_front:
        visible = visible & in_front
    return uv, visible


def ground_to_pixel(cam: CameraModel, p) -> tuple[float, float] | None:
    """Image point of a mount-frame 3D point, or None when outside the FOV."""
    p = np.asarray(p, dtype=float)
    if np.allclose(p, [0.0, 0.0, cam.height_m]):
        raise ValueError("point coincides with the camera position")
    uv, visible = project_ground_points(cam, p[None, :])
    if not bool(visible[0]):
        return None
    return (float(uv[0, 0]), float(uv[0, 1]))


@dataclass
class GroundLUT:
    """Per-pixel ground coordinates with a validity mask.

    ground_xy has shape (H, W, 2) holding metric (x, y) for every pixel whose
    ray is invertible, inside the FOV and directed below the horizon; invalid
    entries are NaN. lookup() is the constant-time integer-index path used at
    runtime; sample() interpolates bilinearly for sub-pixel queries.
    """

    ground_xy: np.ndarray
    valid: np.ndarray

    def lookup(self, u: float, v: float):
        ui, vi = int(round(u)), int(round(v))
        h, w = self.valid.shape
        if not (0 <= ui < w and 0 <= vi < h) or not self.valid[vi, ui]:
            return None
        g = self.ground_xy[vi, ui]
        return (float(g[0]), float(g[1]))

    def sample(self, u: float, v: float):
        """Bilinear interpolation of the ground map at a fractional pixel."""
        h, w = self.valid.shape
        u0, v0 = int(math.floor(u)), int(math.floor(v))
        if not (0 <= u0 and u0 + 1 < w and 0 <= v0 and v0 + 1 < h):
            return self.lookup(u, v)
        block = self.valid[v0:v0 + 2, u0:u0 + 2]
        if not block.all():
            return self.lookup(u, v)
        fu, fv = u - u0, v - v0
        g = self.ground_xy[v0:v0 + 2, u0:u0 + 2]
        top = g[0, 0] * (1 - fu) + g[0, 1] * fu
        bot = g[1, 0] * (1 - fu) + g[1, 1] * fu
        out = top * (1 - fv) + bot * fv
        return (float(out[0]), float(out[1]))


def build_ground_lut(cam: CameraModel, chunk_rows: int = 256) -> GroundLUT:
    """Precompute the pixel -> ground map over the full crop.

    Deterministic and vectorized; built once at startup. Processing happens
    in row blocks to bound peak memory for large crops.
    """
    w, h = cam.crop_size
    cx, cy = cam.optical_center
    rot = cam.pitch_matrix()
    ground = np.full((h, w, 2), np.nan)
    valid = np.zeros((h, w), dtype=bool)
    us = np.arange(w, dtype=float) - cx
    for v0 in range(0, h, chunk_rows):
        v1 = min(v0 + chunk_rows, h)
        dy = (np.arange(v0, v1, dtype=float) - cy)[:, None]
        dx = us[None, :]
        r = np.sqrt(dx * dx + dy * dy)
        phi = np.arctan2(dy, dx)
        theta, dom_ok = inverse_lens_map(cam.projection_variant, r / cam.focal_px)
        st = np.sin(theta)
        d = np.stack([np.cos(theta), st * np.cos(phi), -st * np.sin(phi)], axis=-1)
        dp = d @ rot.T
        ok = dom_ok & (theta <= cam.theta_max) & (dp[..., 2] < 0.0)
        t = np.where(ok, cam.height_m / np.where(ok, -dp[..., 2], 1.0), np.nan)
        ground[v0:v1, :, 0] = t * dp[..., 0]
        ground[v0:v1, :, 1] = t * dp[..., 1]
        valid[v0:v1] = ok
    ground[~valid] = np.nan
    return GroundLUT(ground_xy=ground, valid=valid)


@dataclass(frozen=True)
class Box3D:
    """Upright 3D box on the ground plane: centre, (length, width, height), heading."""

    center_ground: tuple[float, float]
    dims: tuple[float, float, float]
    heading: float = 0.0

    def __post_init__(self):
        if min(self.dims) <= 0:
            raise ValueError("box dimensions must be positive")

    def corners(self) -> np.ndarray:
        """The 8 corners in the mount frame, shape (8, 3)."""
        length, width, height = self.dims
        c, s = math.cos(self.heading), math.sin(self.heading)
        cx, cy = self.center_ground
        pts = []
        for sx in (-length / 2.0, length / 2.0):
            for sy in (-width / 2.0, width / 2.0):
                x = cx + sx * c - sy * s
                y = cy + sx * s + sy * c
                for z in (0.0, height):
                    pts.append((x, y, z))
        return np.array(pts)


def project_box_to_bbox(cam: CameraModel, box: Box3D):
    """Tightest axis-aligned image rectangle around the box's visible corners.

    Returns ((u_min, v_min, u_max, v_max), n_visible). Corners count as
    visible when inside the FOV cone and in front of the lens plane. Raises
    NotVisibleError when no corner is visible.
    """
    uv, visible = project_ground_points(cam, box.corners(), require_front=True)
    n = int(visible.sum())
    if n == 0:
        raise NotVisibleError("no box corner projects into the field of view")
    sel = uv[visible]
    rect = (float(sel[:, 0].min()), float(sel[:, 1].min()),
            float(sel[:, 0].max()), float(sel[:, 1].max()))
    return rect, n


def bbox_bottom_center_ground(cam: CameraModel, box: Box3D,
                              lut: GroundLUT | None = None):
    """Ground position recovered from the projected box's bottom centre.

    This is the position a bbox detector would report for the object. Uses
    the lookup table when provided (sub-pixel sampled), the closed-form
    inverse otherwise.
    """
    (u0, _v0, u1, v1), _ = project_box_to_bbox(cam, box)
    u_bc, v_bc = (u0 + u1) / 2.0, v1
    if lut is not None:
        g = lut.sample(u_bc, v_bc)
    else:
        try:
            g = pixel_to_ground(cam, u_bc, v_bc)
        except InvalidPixelError:
            g = None
    if g is None:
        raise NotVisibleError("bbox bottom centre has no ground intersection")
    return g


def bbox_localization_error(cam: CameraModel, box: Box3D,
                            lut: GroundLUT | None = None) -> float:
    """Metres between the bbox-recovered position and the true box centre."""
    gx, gy = bbox_bottom_center_ground(cam, box, lut=lut)
    return math.hypot(gx - box.center_ground[0], gy - box.center_ground[1])
