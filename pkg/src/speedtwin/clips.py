"""Clip simulation: vehicle trajectories, start-frame policies, source-frame
rendering, lane masking, temporal sampling and the packaged sequence sample.

A clip samples `clip_frames` frames with a temporal stride from consecutive
source frames rendered at the scene fps (stride 2 over 31 source frames at
30 fps spans about 1.03 s), downscales each to `clip_size` squared by area
averaging, and scales values to [0, 1], channel-first (C, T, H, W).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import NonPositiveDepth, crop_map, project
from .render import (
    AreaResizer,
    Frame,
    InsufficientFrames,
    VehicleState,
    apply_condition,
    lane_mask_array,
    render_background,
    render_frame,
)
from .scene import Condition, SceneConfig, Trajectory, VehicleSpec


def trajectory_state(traj: Trajectory, scene: SceneConfig, t: float,
                     spec: VehicleSpec | None = None) -> VehicleState:
    """Vehicle pose at time t: constant speed along the lane centerline."""
    if t < 0:
        raise ValueError("time must be non-negative")
    s = traj.start_s + traj.speed_mps * t
    return VehicleState(
        spec=spec,
        position=scene.lane_point(traj.lane_index, s, traj.lateral_offset),
        heading=scene.direction.copy(),
    )


def _fully_visible(scene: SceneConfig, spec: VehicleSpec, lane: int,
                   lateral: float, s: float) -> bool:
    from .render import _cuboid_corners

    state = VehicleState(spec=spec,
                         position=scene.lane_point(lane, s, lateral),
                         heading=scene.direction.copy())
    k = scene.intrinsics
    for c in _cuboid_corners(state):
        try:
            px = crop_map(project(c, k, scene.camera), k)
        except NonPositiveDepth:
            return False
        if not px.in_frame(k):
            return False
    return True


def first_full_visibility_s(scene: SceneConfig, spec: VehicleSpec, lane: int,
                            lateral: float = 0.0, s_lo: float = -80.0,
                            s_hi: float = 80.0) -> float:
    """Smallest longitudinal coordinate where the whole body is in frame.

    Coarse forward scan followed by bisection; raises ValueError when the
    vehicle is never fully visible over the scanned range.
    """
    step = 0.5
    prev = s_lo
    s = s_lo
    found = None
    while s <= s_hi:
        if _fully_visible(scene, spec, lane, lateral, s):
            found = s
            break
        prev = s
        s += step
    if found is None:
        raise ValueError("vehicle never fully visible along the scanned range")
    lo, hi = prev, found
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _fully_visible(scene, spec, lane, lateral, mid):
            hi = mid
        else:
            lo = mid
    return hi


def resolve_start(traj: Trajectory, scene: SceneConfig, spec: VehicleSpec,
                  earlier_offset: float = 8.0) -> Trajectory:
    """Fill in start_s from the trajectory's start-frame policy.

    plate_visible starts at the first frame with the full body in view;
    earlier backs the vehicle up so it enters the scene during the clip.
    """
    s_vis = first_full_visibility_s(scene, spec, traj.lane_index, traj.lateral_offset)
    s0 = s_vis if traj.start_frame_policy == "plate_visible" else s_vis - earlier_offset
    return Trajectory(lane_index=traj.lane_index, speed_kmh=traj.speed_kmh,
                      start_s=s0, start_frame_policy=traj.start_frame_policy,
                      lateral_offset=traj.lateral_offset)


def assemble_clip(frames, start_index: int, stride: int = 2, count: int = 16,
                  out_size: int = 112) -> np.ndarray:
    """Select, downscale and pack source frames into a (3, T, S, S) clip.

    Frames may be uint8 (scaled by 1/255) or float already in [0, 1]; the
    output is float32.  Raises InsufficientFrames when the temporal window
    does not fit.
    """
    need = start_index + (count - 1) * stride
    if start_index < 0 or need >= len(frames):
        raise InsufficientFrames(
            f"need source index {need}, have {len(frames)} frames")
    first = np.asarray(frames[0])
    resizer = AreaResizer(first.shape[0], first.shape[1], out_size, out_size)
    picked = []
    for j in range(count):
        fr = np.asarray(frames[start_index + j * stride])
        small = resizer(fr)
        if fr.dtype == np.uint8:
            small = small / np.float32(255.0)
        picked.append(small.astype(np.float32))
    stack = np.stack(picked)           # (T, S, S, 3)
    return np.transpose(stack, (3, 0, 1, 2)).copy()  # (3, T, S, S)


@dataclass
class SequenceSample:
    """One training/evaluation clip with its labels and oracle track."""

    clip: np.ndarray            # (3, T, S, S) float32 in [0, 1]
    speed_gt: float             # km/h
    lane_index: int
    vehicle_kind: str
    condition_kind: str
    seed: int
    track: list = field(default_factory=list)  # (frame_index, u, v) recorded px
    camera_beta: float = 0.0
    start_s: float = 0.0

    def __post_init__(self):
        if self.clip.ndim != 4 or self.clip.shape[0] != 3:
            raise ValueError("clip must be (3, T, H, W)")


class TwinRenderer:
    """Per-scene render cache: background, lane masks and the resizer."""

    def __init__(self, scene: SceneConfig):
        self.scene = scene
        self._background = None
        self._lane_masks: dict[int, np.ndarray] = {}
        k = scene.intrinsics
        self.resizer = AreaResizer(k.crop_h, k.crop_w, scene.clip_size, scene.clip_size)

    @property
    def background(self) -> np.ndarray:
        if self._background is None:
            self._background = render_background(self.scene)
        return self._background

    def lane_mask(self, lane_index: int) -> np.ndarray:
        if lane_index not in self._lane_masks:
            self._lane_masks[lane_index] = lane_mask_array(self.scene, lane_index)
        return self._lane_masks[lane_index]

    def frame(self, states) -> Frame:
        return render_frame(self.scene, states, background=self.background)


def contact_point_track(scene: SceneConfig, traj: Trajectory, spec: VehicleSpec,
                        n_frames: int) -> list:
    """Exact projected track of the body's trailing ground-contact center.

    This is the analytic counterpart of the instance-mask bottom-center:
    the midpoint of the cuboid's bottom edge nearest the camera, projected
    per source frame into recorded pixels.  Frames whose point does not
    project (behind the camera) are skipped.
    """
    k = scene.intrinsics
    cam = scene.camera
    track = []
    for j in range(n_frames):
        t = j / scene.fps
        s = traj.start_s + traj.speed_mps * t
        center = scene.lane_point(traj.lane_index, s, traj.lateral_offset)
        rear = center - scene.direction * (spec.length / 2)
        try:
            px = crop_map(project(rear, k, cam), k)
        except NonPositiveDepth:
            continue
        track.append((j, float(px.u), float(px.v)))
    return track


def simulate_clip(scene: SceneConfig, traj: Trajectory, spec: VehicleSpec,
                  cond: Condition, seed: int,
                  extras: tuple = (),
                  renderer: TwinRenderer | None = None) -> SequenceSample:
    """Render, mask, and pack one sequence sample.

    `traj.start_s` must already be resolved (see `resolve_start`).  `extras`
    holds additional (Trajectory, VehicleSpec) pairs rendered alongside the
    tracked vehicle (same resolved convention).  Conditions are applied per
    output frame with sub-seeds derived from `seed`.
    """
    if renderer is None:
        renderer = TwinRenderer(scene)
    n_source = (scene.clip_frames - 1) * scene.clip_stride + 1
    mask = renderer.lane_mask(traj.lane_index)

    frames = []
    for j in range(n_source):
        t = j / scene.fps
        states = [trajectory_state(tr, scene, t, sp_)
                  for tr, sp_ in ((traj, spec),) + tuple(extras)]
        fr = renderer.frame(states)
        rgb = fr.rgb.copy()
        rgb[~mask] = 0
        frames.append(rgb)

    clip = assemble_clip(frames, 0, scene.clip_stride, scene.clip_frames,
                         scene.clip_size)
    if cond.kind != "clear":
        for ti in range(clip.shape[1]):
            fr = np.transpose(clip[:, ti], (1, 2, 0))
            fr = apply_condition(fr, cond, seed=np.random.SeedSequence([seed, ti]))
            clip[:, ti] = np.transpose(fr, (2, 0, 1))

    track = contact_point_track(scene, traj, spec, n_source)
    return SequenceSample(
        clip=clip,
        speed_gt=traj.speed_kmh,
        lane_index=traj.lane_index,
        vehicle_kind=spec.kind,
        condition_kind=cond.kind,
        seed=seed,
        track=track,
        camera_beta=scene.camera.beta,
        start_s=traj.start_s,
    )
