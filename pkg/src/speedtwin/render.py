"""Flat-shaded software rasterizer for the twin.

Renders the static road scene (pavement, lane markings, loop rectangles,
shoulder, sky) by classifying each pixel's ground intersection, and paints
vehicles as shaded cuboids with per-vehicle instance ids.  Everything is
deterministic: same scene and states give bit-identical frames.

Pixel centers sit on integer coordinates; a pixel belongs to a polygon when
its center does.  Images are uint8 RGB at the recorded (cropped) resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import backproject_ground_points, project_points
from .scene import Condition, SceneConfig, VehicleSpec

_DEPTH_EPS = 1e-9
_SUN = np.array([0.35, 0.85, 0.4])
_SUN = _SUN / np.linalg.norm(_SUN)


class LaneNotVisible(Exception):
    """The lane's projected polygon misses the recorded frame entirely."""


class InsufficientFrames(Exception):
    """Not enough source frames to assemble the requested clip."""


@dataclass
class VehicleState:
    """World placement of one vehicle at an instant."""

    spec: VehicleSpec
    position: np.ndarray  # ground-center of the body, Y = 0
    heading: np.ndarray   # unit vector along travel, road plane


@dataclass
class Frame:
    """Rendered RGB frame plus the per-pixel vehicle instance id (-1 none)."""

    rgb: np.ndarray
    instance_ids: np.ndarray

    def instance_mask(self, index: int) -> np.ndarray:
        return self.instance_ids == index


def render_background(scene: SceneConfig) -> np.ndarray:
    """Static scene image at recorded resolution (road, markings, loops)."""
    k = scene.intrinsics
    style = scene.style
    h, w = k.crop_h, k.crop_w
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = style.sky_color

    road_x0, road_x1 = scene.road_bounds_x
    road_x0 -= scene.road_margin
    road_x1 += scene.road_margin
    boundaries = [scene.lane_bounds_x(i)[1] for i in range(scene.lane_count - 1)]
    loops = [scene.loop_world_corners(i) for i in range(scene.lane_count)]

    block = 64
    us = np.arange(w, dtype=float)
    for r0 in range(0, h, block):
        r1 = min(r0 + block, h)
        vs = np.arange(r0, r1, dtype=float)
        uu, vv = np.meshgrid(us, vs)
        uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
        pts, valid = backproject_ground_points(uv, k, scene.camera, frame="recorded")
        x = pts[:, 0].reshape(r1 - r0, w)
        z = pts[:, 2].reshape(r1 - r0, w)
        valid = valid.reshape(r1 - r0, w)

        tile = np.empty((r1 - r0, w, 3), dtype=np.uint8)
        tile[:] = style.sky_color
        shoulder = np.array(style.shoulder_color, dtype=np.uint8)
        if style.background == "stripes":
            alt = np.array(style.shoulder_alt_color, dtype=np.uint8)
            with np.errstate(invalid="ignore"):
                band = np.floor_divide(z, style.stripe_period).astype(np.int64) % 2
            tile[valid] = np.where(band[valid, None] == 0, shoulder, alt)
        else:
            tile[valid] = shoulder

        on_road = valid & (x >= road_x0) & (x <= road_x1)
        tile[on_road] = style.road_color

        for i, rect in enumerate(loops):
            x0, x1 = rect[0, 0], rect[1, 0]
            z0, z1 = rect[0, 2], rect[2, 2]
            lw = 0.12
            outer = on_road & (x >= x0 - lw) & (x <= x1 + lw) & (z >= z0 - lw) & (z <= z1 + lw)
            inner = (x >= x0 + lw) & (x <= x1 - lw) & (z >= z0 + lw) & (z <= z1 - lw)
            tile[outer & ~inner] = style.loop_color

        mark = np.zeros_like(on_road)
        for b in boundaries:  # dashed interior lines
            mark |= on_road & (np.abs(x - b) <= 0.07) & (np.mod(z, 3.0) < 1.8)
        for edge in scene.road_bounds_x:  # solid edge lines
            mark |= on_road & (np.abs(x - edge) <= 0.09)
        tile[mark] = style.marking_color

        img[r0:r1] = tile

    if style.brightness != 1.0:
        img = np.clip(img.astype(np.float32) * style.brightness, 0, 255).astype(np.uint8)
    return img


def _fill_convex(poly: np.ndarray, h: int, w: int):
    """Pixel-center coverage of a convex polygon, restricted to its bbox.

    Returns (row_slice, col_slice, mask) or None when the bbox misses the
    image.
    """
    c0 = max(int(np.ceil(poly[:, 0].min())), 0)
    c1 = min(int(np.floor(poly[:, 0].max())), w - 1)
    r0 = max(int(np.ceil(poly[:, 1].min())), 0)
    r1 = min(int(np.floor(poly[:, 1].max())), h - 1)
    if c0 > c1 or r0 > r1:
        return None
    # orient counter-clockwise (image coords) so all cross products share sign
    area = 0.0
    n = len(poly)
    for i in range(n):
        xa, ya = poly[i]
        xb, yb = poly[(i + 1) % n]
        area += xa * yb - xb * ya
    if area < 0:
        poly = poly[::-1]
    uu, vv = np.meshgrid(np.arange(c0, c1 + 1, dtype=float),
                         np.arange(r0, r1 + 1, dtype=float))
    mask = np.ones(uu.shape, dtype=bool)
    for i in range(n):
        xa, ya = poly[i]
        xb, yb = poly[(i + 1) % n]
        mask &= (xb - xa) * (vv - ya) - (yb - ya) * (uu - xa) >= -1e-9
        if not mask.any():
            return None
    return slice(r0, r1 + 1), slice(c0, c1 + 1), mask


_FACES = (  # corner indices per cuboid face, with outward axis (sign, axis)
    ((0, 1, 2, 3), (-1, 2)),  # rear  (toward -heading)
    ((4, 5, 6, 7), (1, 2)),   # front
    ((0, 1, 5, 4), (-1, 1)),  # bottom
    ((3, 2, 6, 7), (1, 1)),   # top
    ((0, 3, 7, 4), (-1, 0)),  # left
    ((1, 2, 6, 5), (1, 0)),   # right
)


def _cuboid_corners(state: VehicleState) -> np.ndarray:
    d = state.heading
    lat = np.array([-d[2], 0.0, d[0]])  # heading rotated 90 deg in the plane
    up = np.array([0.0, 1.0, 0.0])
    half_l = state.spec.length / 2 * d
    half_w = state.spec.width / 2 * lat
    hgt = state.spec.height * up
    c = state.position
    #      0: rear-left-bottom   1: rear-right-bottom
    #      2: rear-right-top     3: rear-left-top      (4..7: front side)
    rear = c - half_l
    front = c + half_l
    return np.array([
        rear - half_w, rear + half_w, rear + half_w + hgt, rear - half_w + hgt,
        front - half_w, front + half_w, front + half_w + hgt, front - half_w + hgt,
    ])


def render_frame(scene: SceneConfig, states, background=None) -> Frame:
    """Paint vehicle cuboids over the static scene.

    Vehicles are drawn far to near so the nearest wins overlapping pixels,
    in RGB and in the instance-id buffer alike.  A vehicle behind the camera
    contributes nothing (empty mask).
    """
    k = scene.intrinsics
    h, w = k.crop_h, k.crop_w
    rgb = (render_background(scene) if background is None else background).copy()
    ids = np.full((h, w), -1, dtype=np.int16)
    cam = scene.camera.position
    du, dv = k.crop_offset

    order = sorted(range(len(states)),
                   key=lambda i: -float(np.linalg.norm(states[i].position - cam)))
    for idx in order:
        st = states[idx]
        corners = _cuboid_corners(st)
        uv, depth = project_points(corners, k, scene.camera)
        uv = uv - (du, dv)
        axes = {2: st.heading, 1: np.array([0.0, 1.0, 0.0]),
                0: np.array([-st.heading[2], 0.0, st.heading[0]])}
        base = np.array(st.spec.albedo, dtype=float)
        for face, (sign, axis) in _FACES:
            fidx = list(face)
            if np.any(depth[fidx] <= _DEPTH_EPS):
                continue
            normal = sign * axes[axis]
            center = corners[fidx].mean(axis=0)
            if np.dot(normal, center - cam) >= 0:
                continue  # back face of the convex body
            shade = 0.55 + 0.45 * max(0.0, float(np.dot(normal, _SUN)))
            color = np.clip(base * shade, 0, 255).astype(np.uint8)
            hit = _fill_convex(uv[fidx], h, w)
            if hit is None:
                continue
            rs, cs, mask = hit
            rgb[rs, cs][mask] = color
            ids[rs, cs][mask] = idx
    return Frame(rgb=rgb, instance_ids=ids)


def _clip_polygon_to_front(corners_world: np.ndarray, scene: SceneConfig,
                           min_depth: float = 0.05) -> np.ndarray:
    """Sutherland-Hodgman clip of a world polygon against the near plane."""
    from .geometry import world_to_camera

    cam_pts = world_to_camera(corners_world, scene.camera)
    out = []
    n = len(cam_pts)
    for i in range(n):
        a, b = cam_pts[i], cam_pts[(i + 1) % n]
        ain, bin_ = a[2] > min_depth, b[2] > min_depth
        if ain:
            out.append(a)
        if ain != bin_:
            t = (min_depth - a[2]) / (b[2] - a[2])
            out.append(a + t * (b - a))
    return np.array(out)


def lane_polygon(scene: SceneConfig, lane_index: int) -> np.ndarray:
    """Recorded-frame convex polygon covering the lane's visible extent."""
    k = scene.intrinsics
    xl, xr = scene.lane_bounds_x(lane_index)
    cz = scene.camera.z
    z_far, z_near = cz - 120.0, cz + 10.0
    quad = np.array([[xl, 0.0, z_far], [xr, 0.0, z_far],
                     [xr, 0.0, z_near], [xl, 0.0, z_near]])
    clipped = _clip_polygon_to_front(quad, scene)
    if len(clipped) < 3:
        raise LaneNotVisible(f"lane {lane_index} entirely behind the camera")
    z = clipped[:, 2]
    uv = np.stack([k.fx * clipped[:, 0] / z + k.cx,
                   k.fy * clipped[:, 1] / z + k.cy], axis=1)
    du, dv = k.crop_offset
    return uv - (du, dv)


def lane_mask_array(scene: SceneConfig, lane_index: int) -> np.ndarray:
    """Boolean (H, W) mask of the lane's pixels in the recorded frame."""
    k = scene.intrinsics
    poly = lane_polygon(scene, lane_index)
    hit = _fill_convex(poly, k.crop_h, k.crop_w)
    if hit is None:
        raise LaneNotVisible(f"lane {lane_index} projects outside the frame")
    mask = np.zeros((k.crop_h, k.crop_w), dtype=bool)
    rs, cs, m = hit
    mask[rs, cs] = m
    if not mask.any():
        raise LaneNotVisible(f"lane {lane_index} projects outside the frame")
    return mask


def lane_mask(frame, lane_index: int, scene: SceneConfig,
              mask: np.ndarray | None = None):
    """Zero all pixels outside the lane polygon; inside pixels untouched."""
    if mask is None:
        mask = lane_mask_array(scene, lane_index)
    if isinstance(frame, Frame):
        return Frame(rgb=lane_mask(frame.rgb, lane_index, scene, mask),
                     instance_ids=np.where(mask, frame.instance_ids, -1))
    out = frame.copy()
    out[~mask] = 0
    return out


def _box_blur_axis(img: np.ndarray, radius: int, axis: int) -> np.ndarray:
    """Normalized moving average with clamp-to-edge boundary handling."""
    n = 2 * radius + 1
    pad = [(0, 0)] * img.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(img, pad, mode="edge")
    csum = np.cumsum(padded, axis=axis, dtype=np.float64)
    zero = np.zeros_like(np.take(csum, [0], axis=axis))
    csum = np.concatenate([zero, csum], axis=axis)
    length = img.shape[axis]
    hi = np.take(csum, np.arange(n, n + length), axis=axis)
    lo = np.take(csum, np.arange(0, length), axis=axis)
    return ((hi - lo) / n).astype(img.dtype)


def apply_condition(frame: np.ndarray, cond: Condition, seed) -> np.ndarray:
    """Degrade one float RGB frame (values in [0, 1]) per the condition.

    Clear is the identity.  All randomness derives from `seed`.
    """
    if cond.kind == "clear":
        return frame
    rng = np.random.default_rng(seed)
    out = frame.astype(np.float32, copy=True)
    h, w = out.shape[:2]
    if cond.kind == "noise":
        if cond.sigma_noise > 0:
            out += rng.normal(0.0, cond.sigma_noise / 255.0,
                              size=out.shape).astype(np.float32)
    elif cond.kind == "blur":
        if cond.blur_radius > 0:
            out = _box_blur_axis(out, cond.blur_radius, 0)
            out = _box_blur_axis(out, cond.blur_radius, 1)
    elif cond.kind == "rain":
        n_streaks = int(round(cond.rain_density * h * w / 1000.0))
        length = max(3, h // 18)
        slant = 0.35
        for _ in range(n_streaks):
            u0 = rng.uniform(0, w - 1)
            v0 = rng.uniform(0, h - 1)
            ts = np.arange(length, dtype=np.float32)
            vs = np.clip(v0 + ts, 0, h - 1).astype(int)
            us = np.clip(u0 + slant * ts, 0, w - 1).astype(int)
            out[vs, us] = 0.65 * out[vs, us] + 0.35 * 0.85
    if cond.brightness_scale != 1.0:
        out *= cond.brightness_scale
    return np.clip(out, 0.0, 1.0)


def _area_weights(n_in: int, n_out: int) -> sp.csr_matrix:
    """Row-stochastic overlap weights mapping n_in cells onto n_out bins."""
    scale = n_in / n_out
    rows, cols, vals = [], [], []
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(np.floor(lo)), min(int(np.ceil(hi)), n_in)
        for j in range(j0, j1):
            ov = min(hi, j + 1) - max(lo, j)
            if ov > 1e-12:
                rows.append(i)
                cols.append(j)
                vals.append(ov)
    m = sp.csr_matrix((vals, (rows, cols)), shape=(n_out, n_in))
    norm = np.asarray(m.sum(axis=1)).ravel()
    return sp.diags(1.0 / norm) @ m


class AreaResizer:
    """Exact area-average downscaler built once per (input, output) shape."""

    def __init__(self, in_h: int, in_w: int, out_h: int, out_w: int):
        self.wr = _area_weights(in_h, out_h).astype(np.float32)
        self.wc = _area_weights(in_w, out_w).astype(np.float32)
        self.out_shape = (out_h, out_w)

    def __call__(self, img: np.ndarray) -> np.ndarray:
        """(H, W) or (H, W, C) image -> float32 output, same value scale."""
        a = img.astype(np.float32, copy=False)
        if a.ndim == 2:
            return (self.wc @ (self.wr @ a).T).T
        chans = [(self.wc @ (self.wr @ a[..., c]).T).T
                 for c in range(a.shape[2])]
        return np.stack(chans, axis=-1)


def resize_area(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """One-off area-average resize (build + apply)."""
    return AreaResizer(img.shape[0], img.shape[1], out_h, out_w)(img)
