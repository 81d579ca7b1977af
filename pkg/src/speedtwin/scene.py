"""Scene description for the procedural twin: road and lane layout, loop
placement, vehicle shapes, trajectories, capture conditions and rendering
style.

Default world layout (all configurable): a straight 3-lane road running
along Z with lane 0 leftmost.  One inductive-loop rectangle per lane, 2.0 m
wide and 4.8 m long, centered in its lane; the left loop's far-left corner
sits at the world origin.  Vehicles drive along -Z, away from the camera,
which hangs over the central lane looking down the road.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import CameraIntrinsics, CameraPose

#: documented pose of the modeled roadside installation, kept as a demo
#: fixture; its reported residual was on the order of 78 px against the
#: real annotations, which are not shipped with this package.
REFERENCE_POSE = CameraPose(-3.613, 5.5, 19.567, 0.481, -0.059, -0.108)


def default_intrinsics() -> CameraIntrinsics:
    """Full-profile camera: 2592x1944 sensor recording a 1920x1080 crop."""
    return CameraIntrinsics(fx=1400.0, fy=1400.0, cx=1296.0, cy=972.0,
                            sensor_w=2592, sensor_h=1944,
                            crop_w=1920, crop_h=1080)


def desk_intrinsics() -> CameraIntrinsics:
    """Half-resolution camera for desk-scale runs; same field of view."""
    return CameraIntrinsics(fx=700.0, fy=700.0, cx=648.0, cy=486.0,
                            sensor_w=1296, sensor_h=972,
                            crop_w=960, crop_h=540)


def default_camera_pose() -> CameraPose:
    """Gantry-style mount over the central lane, pitched down the road."""
    return CameraPose(x=4.5, y=5.5, z=19.0, alpha=0.0, beta=-0.52, omega=0.0)


@dataclass(frozen=True)
class VehicleSpec:
    """Cuboid vehicle body: metric dimensions plus a flat body color."""

    kind: str  # "car" | "motorbike"
    length: float = 4.4
    width: float = 1.8
    height: float = 1.5
    albedo: tuple[int, int, int] = (180, 180, 185)

    def __post_init__(self):
        if self.kind not in ("car", "motorbike"):
            raise ValueError(f"unknown vehicle kind {self.kind!r}")
        if min(self.length, self.width, self.height) <= 0:
            raise ValueError("vehicle dimensions must be positive")


def car_spec(albedo=(180, 180, 185)) -> VehicleSpec:
    return VehicleSpec("car", 4.4, 1.8, 1.5, albedo)


def motorbike_spec(albedo=(40, 40, 45)) -> VehicleSpec:
    return VehicleSpec("motorbike", 2.1, 0.8, 1.4, albedo)


@dataclass(frozen=True)
class Trajectory:
    """Constant-speed run along one lane's centerline."""

    lane_index: int
    speed_kmh: float
    start_s: float = 0.0
    start_frame_policy: str = "plate_visible"  # "plate_visible" | "earlier"
    lateral_offset: float = 0.0

    def __post_init__(self):
        if self.start_frame_policy not in ("plate_visible", "earlier"):
            raise ValueError(
                f"unknown start_frame_policy {self.start_frame_policy!r}")
        if self.speed_kmh < 0:
            raise ValueError("speed must be non-negative")

    @property
    def speed_mps(self) -> float:
        return self.speed_kmh / 3.6


@dataclass(frozen=True)
class Condition:
    """Capture-condition degradation applied to clip frames."""

    kind: str = "clear"  # "clear" | "rain" | "noise" | "blur"
    sigma_noise: float = 0.0       # gaussian std, 0-255 intensity units
    blur_radius: int = 0           # box-kernel radius in pixels
    rain_density: float = 0.0      # streaks per 1000 pixels
    brightness_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("clear", "rain", "noise", "blur"):
            raise ValueError(f"unknown condition kind {self.kind!r}")
        if min(self.sigma_noise, self.blur_radius, self.rain_density) < 0:
            raise ValueError("condition parameters must be non-negative")
        if self.brightness_scale < 0:
            raise ValueError("brightness_scale must be non-negative")


def condition_preset(kind: str) -> Condition:
    """Default parameterization for each condition kind."""
    if kind == "clear":
        return Condition("clear")
    if kind == "rain":
        return Condition("rain", rain_density=1.2, brightness_scale=0.88)
    if kind == "noise":
        return Condition("noise", sigma_noise=10.0)
    if kind == "blur":
        return Condition("blur", blur_radius=1)
    raise ValueError(f"unknown condition kind {kind!r}")


#: body colors sampled for generated vehicles
DEFAULT_VEHICLE_PALETTE = (
    (190, 190, 195),  # silver
    (235, 235, 235),  # white
    (35, 35, 40),     # black
    (130, 20, 25),    # red
    (25, 50, 120),    # blue
    (70, 75, 80),     # dark gray
    (150, 120, 60),   # sand
)


@dataclass(frozen=True)
class StyleParams:
    """Flat-shading palette and background treatment for the renderer."""

    sky_color: tuple[int, int, int] = (140, 165, 190)
    shoulder_color: tuple[int, int, int] = (95, 110, 80)
    shoulder_alt_color: tuple[int, int, int] = (95, 110, 80)
    road_color: tuple[int, int, int] = (78, 78, 82)
    marking_color: tuple[int, int, int] = (225, 225, 220)
    loop_color: tuple[int, int, int] = (50, 50, 54)
    vehicle_palette: tuple[tuple[int, int, int], ...] = DEFAULT_VEHICLE_PALETTE
    background: str = "plain"  # "plain" | "stripes"
    stripe_period: float = 4.0
    ambient_noise_sigma: float = 0.0  # per-frame sensor noise, 0-255 units
    brightness: float = 1.0

    def __post_init__(self):
        if self.background not in ("plain", "stripes"):
            raise ValueError(f"unknown background style {self.background!r}")


def pseudo_real_style() -> StyleParams:
    """Altered rendering style standing in for the real camera's footage."""
    return StyleParams(
        sky_color=(150, 150, 160),
        shoulder_color=(110, 100, 70),
        shoulder_alt_color=(85, 95, 65),
        road_color=(88, 86, 84),
        marking_color=(205, 205, 190),
        loop_color=(58, 56, 52),
        vehicle_palette=(
            (210, 205, 200),
            (20, 22, 28),
            (160, 40, 35),
            (60, 90, 140),
            (120, 120, 115),
        ),
        background="stripes",
        stripe_period=3.0,
        ambient_noise_sigma=3.0,
        brightness=0.94,
    )


@dataclass(frozen=True)
class SceneConfig:
    """Static description of the twin: road geometry, camera and capture."""

    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)
    camera: CameraPose = field(default_factory=default_camera_pose)
    lane_count: int = 3
    lane_width: float = 3.5
    first_lane_center_x: float = 1.0
    lane_direction: tuple[float, float, float] = (0.0, 0.0, -1.0)
    loop_width: float = 2.0
    loop_length: float = 4.8
    loop_z0: float = 0.0
    road_margin: float = 0.4
    fps: int = 30
    clip_frames: int = 16
    clip_stride: int = 2
    clip_size: int = 112
    style: StyleParams = field(default_factory=StyleParams)

    def __post_init__(self):
        if self.lane_count < 1:
            raise ValueError("lane_count must be >= 1")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.lane_width <= 0:
            raise ValueError("lane_width must be positive")
        d = np.asarray(self.lane_direction, dtype=float)
        n = np.linalg.norm(d)
        if n < 1e-12 or abs(d[1]) > 1e-12:
            raise ValueError("lane_direction must be a nonzero road-plane vector")
        object.__setattr__(self, "lane_direction", tuple(d / n))

    @property
    def direction(self) -> np.ndarray:
        return np.asarray(self.lane_direction)

    def lane_center_x(self, lane_index: int) -> float:
        if not 0 <= lane_index < self.lane_count:
            raise ValueError(f"lane index {lane_index} out of range")
        return self.first_lane_center_x + lane_index * self.lane_width

    def lane_bounds_x(self, lane_index: int) -> tuple[float, float]:
        c = self.lane_center_x(lane_index)
        return c - self.lane_width / 2, c + self.lane_width / 2

    @property
    def road_bounds_x(self) -> tuple[float, float]:
        return (self.lane_bounds_x(0)[0], self.lane_bounds_x(self.lane_count - 1)[1])

    def loop_world_corners(self, lane_index: int) -> np.ndarray:
        """Perimeter-ordered (4, 3) corners of the lane's loop rectangle."""
        c = self.lane_center_x(lane_index)
        x0, x1 = c - self.loop_width / 2, c + self.loop_width / 2
        z0, z1 = self.loop_z0, self.loop_z0 + self.loop_length
        return np.array([[x0, 0.0, z0], [x1, 0.0, z0],
                         [x1, 0.0, z1], [x0, 0.0, z1]])

    def lane_point(self, lane_index: int, s: float,
                   lateral_offset: float = 0.0) -> np.ndarray:
        """Road-plane point at longitudinal coordinate s along the lane."""
        base = np.array([self.lane_center_x(lane_index) + lateral_offset, 0.0, 0.0])
        return base + s * self.direction

    def with_camera(self, pose: CameraPose) -> "SceneConfig":
        return replace(self, camera=pose)

    def with_style(self, style: StyleParams) -> "SceneConfig":
        return replace(self, style=style)


def default_scene() -> SceneConfig:
    """Full-profile twin matching the modeled recording setup."""
    return SceneConfig()


def desk_scene() -> SceneConfig:
    """Reduced twin for single-machine runs: half-res camera, 8-frame clips."""
    return SceneConfig(intrinsics=desk_intrinsics(),
                       clip_frames=8, clip_stride=2, clip_size=56)


def plausible_pose_range() -> dict:
    """Sampling ranges for randomized roadside poses used in round-trip tests."""
    return {
        "x": (-5.0, 10.0),
        "y": (4.0, 7.0),
        "z": (12.0, 26.0),
        "alpha": (math.radians(-15), math.radians(15)),
        "beta": (math.radians(-45), math.radians(-20)),
        "omega": (math.radians(-5), math.radians(5)),
    }
