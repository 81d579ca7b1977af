"""Pinhole camera model: rotation construction, projection, ground-plane
backprojection and sensor-crop coordinate mapping.

Coordinate conventions used throughout the package:

World frame (right-handed):
  - Y axis points up; the road plane is Y = 0.
  - X is lateral (across the lanes), Z is longitudinal (along the road).
  - Origin sits on the road plane at the reference loop corner.

Camera frame (right-handed, standard computer vision):
  - X right, Y down, Z forward along the optical axis.

Image frame:
  - u right, v down, origin at the top-left pixel; pixel centers lie on
    integer coordinates.
  - Two pixel frames exist: "sensor" (full native sensor) and "recorded"
    (the centered crop actually stored by the recorder). `crop_map` /
    `crop_unmap` convert between them.

Pose angles (radians), applied in this order starting from the base
orientation (camera level, looking along world -Z with image up = world up):
  - alpha: yaw about the world Y axis; positive turns the view toward +X.
  - beta:  pitch about the camera X axis; negative tilts the view down.
  - omega: roll about the camera Z axis.

There is no lens distortion in this model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_DEPTH_EPS = 1e-9
_RAY_EPS = 1e-12

# Base orientation: camera forward = world -Z, camera down = world -Y.
# Columns are the camera axes expressed in world coordinates (det = +1).
_BASE = np.array([[1.0, 0.0, 0.0],
                  [0.0, -1.0, 0.0],
                  [0.0, 0.0, -1.0]])


class GeometryError(Exception):
    """Base class for camera-geometry failures."""


class NonPositiveDepth(GeometryError):
    """Point lies behind or on the camera plane."""


class RayParallelToGround(GeometryError):
    """Pixel ray never meets the road plane."""


class BehindCamera(GeometryError):
    """Ray-plane intersection has non-positive depth."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics plus the sensor/crop pixel geometry."""

    fx: float
    fy: float
    cx: float
    cy: float
    sensor_w: int
    sensor_h: int
    crop_w: int
    crop_h: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.crop_w <= self.sensor_w):
            raise ValueError("crop_w must satisfy 0 <= crop_w <= sensor_w")
        if not (0 <= self.crop_h <= self.sensor_h):
            raise ValueError("crop_h must satisfy 0 <= crop_h <= sensor_h")

    @property
    def crop_offset(self) -> tuple[float, float]:
        """(du, dv) subtracted when going sensor -> recorded."""
        return ((self.sensor_w - self.crop_w) / 2.0,
                (self.sensor_h - self.crop_h) / 2.0)


@dataclass(frozen=True)
class CameraPose:
    """6-DoF pose [x, y, z, alpha, beta, omega]; y is height above the road."""

    x: float
    y: float
    z: float
    alpha: float
    beta: float
    omega: float

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.alpha, self.beta, self.omega)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("pose components must be finite")
        if self.y <= 0:
            raise ValueError("camera must sit above the road plane (y > 0)")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z,
                         self.alpha, self.beta, self.omega])

    @classmethod
    def from_array(cls, p) -> "CameraPose":
        x, y, z, a, b, o = (float(v) for v in p)
        return cls(x, y, z, a, b, o)


@dataclass(frozen=True)
class PixelPoint:
    """Image point carrying the pixel frame it lives in."""

    u: float
    v: float
    frame: str = "sensor"  # "sensor" | "recorded"

    def __post_init__(self):
        if self.frame not in ("sensor", "recorded"):
            raise ValueError(f"unknown pixel frame {self.frame!r}")

    def in_frame(self, k: CameraIntrinsics) -> bool:
        """True when the point falls inside its frame's pixel bounds."""
        if self.frame == "sensor":
            w, h = k.sensor_w, k.sensor_h
        else:
            w, h = k.crop_w, k.crop_h
        return 0.0 <= self.u <= w - 1 and 0.0 <= self.v <= h - 1


def rotation_from_angles(alpha: float, beta: float, omega: float) -> np.ndarray:
    """Compose yaw(alpha, world Y) . pitch(beta, camera X) . roll(omega, camera Z).

    Returns a proper rotation matrix (orthonormal, det +1); the identity for
    zero angles.  Positive alpha yaws the view toward +X, positive beta
    pitches it up, so a camera looking down the road carries beta < 0.
    """
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    co, so = math.cos(omega), math.sin(omega)
    yaw = np.array([[ca, 0.0, -sa],
                    [0.0, 1.0, 0.0],
                    [sa, 0.0, ca]])
    pitch = np.array([[1.0, 0.0, 0.0],
                      [0.0, cb, -sb],
                      [0.0, sb, cb]])
    roll = np.array([[co, -so, 0.0],
                     [so, co, 0.0],
                     [0.0, 0.0, 1.0]])
    return yaw @ pitch @ roll


def camera_to_world_rotation(pose: CameraPose) -> np.ndarray:
    """Columns are the camera axes (right, down, forward) in world coords."""
    return rotation_from_angles(pose.alpha, pose.beta, pose.omega) @ _BASE


def world_to_camera(points: np.ndarray, pose: CameraPose) -> np.ndarray:
    """Map (..., 3) world points into the camera frame."""
    r_wc = camera_to_world_rotation(pose).T
    return (np.asarray(points, dtype=float) - pose.position) @ r_wc.T


def project(p, k: CameraIntrinsics, pose: CameraPose) -> PixelPoint:
    """Project one world point to full-sensor pixel coordinates.

    Raises NonPositiveDepth when the point is behind or on the camera plane.
    """
    pc = world_to_camera(np.asarray(p, dtype=float), pose)
    z = pc[2]
    if z <= _DEPTH_EPS:
        raise NonPositiveDepth(f"point depth {z:.6g} <= 0")
    return PixelPoint(k.fx * pc[0] / z + k.cx, k.fy * pc[1] / z + k.cy, "sensor")


def project_points(points: np.ndarray, k: CameraIntrinsics,
                   pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Vector form of `project` for (N, 3) world points.

    Returns (uv, depth): uv is (N, 2) full-sensor coordinates and depth the
    camera-frame Z per point.  No error is raised for non-positive depths;
    the corresponding uv rows are NaN and the caller filters on depth.
    """
    pc = world_to_camera(np.asarray(points, dtype=float), pose)
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(z > _DEPTH_EPS, k.fx * pc[:, 0] / z + k.cx, np.nan)
        v = np.where(z > _DEPTH_EPS, k.fy * pc[:, 1] / z + k.cy, np.nan)
    return np.stack([u, v], axis=1), z


def backproject_ground(px: PixelPoint, k: CameraIntrinsics,
                       pose: CameraPose) -> np.ndarray:
    """Intersect the pixel's viewing ray with the road plane Y = 0.

    Accepts a point in either pixel frame (recorded points are lifted to the
    sensor frame via `crop_unmap` first).  Returns the (X, 0, Z) world point.
    """
    if px.frame == "recorded":
        px = crop_unmap(px, k)
    ray_cam = np.array([(px.u - k.cx) / k.fx, (px.v - k.cy) / k.fy, 1.0])
    ray_world = camera_to_world_rotation(pose) @ ray_cam
    if abs(ray_world[1]) < _RAY_EPS:
        raise RayParallelToGround("ray does not descend to the road plane")
    t = -pose.y / ray_world[1]
    if t <= _DEPTH_EPS:
        raise BehindCamera(f"plane intersection at depth {t:.6g}")
    hit = pose.position + t * ray_world
    return np.array([hit[0], 0.0, hit[2]])


def backproject_ground_points(uv: np.ndarray, k: CameraIntrinsics,
                              pose: CameraPose,
                              frame: str = "sensor") -> tuple[np.ndarray, np.ndarray]:
    """Vector form of `backproject_ground` for (N, 2) pixel coordinates.

    Returns (points, valid): points is (N, 3) on Y = 0 (NaN where invalid)
    and valid flags rays that hit the plane in front of the camera.
    """
    uv = np.asarray(uv, dtype=float)
    if frame == "recorded":
        du, dv = k.crop_offset
        uv = uv + np.array([du, dv])
    rays = np.stack([(uv[:, 0] - k.cx) / k.fx,
                     (uv[:, 1] - k.cy) / k.fy,
                     np.ones(len(uv))], axis=1)
    rays_w = rays @ camera_to_world_rotation(pose).T
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -pose.y / rays_w[:, 1]
    valid = (np.abs(rays_w[:, 1]) >= _RAY_EPS) & (t > _DEPTH_EPS)
    pts = pose.position[None, :] + t[:, None] * rays_w
    pts[:, 1] = 0.0
    pts[~valid] = np.nan
    return pts, valid


def crop_map(px: PixelPoint, k: CameraIntrinsics) -> PixelPoint:
    """Full-sensor -> recorded coordinates (centered crop).

    Points may land outside the recorded frame; that is flagged by
    `PixelPoint.in_frame`, never an error.
    """
    if px.frame != "sensor":
        raise ValueError("crop_map expects a sensor-frame point")
    du, dv = k.crop_offset
    return PixelPoint(px.u - du, px.v - dv, "recorded")


def crop_unmap(px: PixelPoint, k: CameraIntrinsics) -> PixelPoint:
    """Recorded -> full-sensor coordinates; exact inverse of `crop_map`."""
    if px.frame != "recorded":
        raise ValueError("crop_unmap expects a recorded-frame point")
    du, dv = k.crop_offset
    return PixelPoint(px.u + du, px.v + dv, "sensor")
