"""Camera pose estimation from annotated inductive-loop corners.

The cost is the sum of two pixel-space terms over the four corners of each
annotated loop rectangle: the distance between each projected corner and its
annotated position, plus the absolute difference between adjacent-corner
distances of the projected and the annotated rectangles:

    loss = sum_i ||x_i - x~_i||_2  +  sum_i |d_i - d~_i|

where x_i is the projected corner in recorded-frame pixels, x~_i the
annotation, and d_i / d~_i the pixel lengths of the four perimeter edges.
It is minimized by gradient descent with central-difference gradients,
per-component step scales, step-halving line search and random restarts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import _BASE, CameraIntrinsics, CameraPose, NonPositiveDepth

_DEPTH_EPS = 1e-9

#: perimeter edges used for the adjacent-distance terms
EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))

POSE_COMPONENTS = ("x", "y", "z", "alpha", "beta", "omega")


class StepUnderflow(ValueError):
    """Finite-difference step must be positive."""


@dataclass(frozen=True)
class LoopAnnotation:
    """One loop: 4 world corners on Y = 0 and 4 recorded-frame pixel corners.

    Corners are index-aligned (world corner i was annotated at pixel corner i)
    and ordered around the perimeter, so `EDGES` gives the adjacency.
    """

    world_corners: np.ndarray
    pixel_corners: np.ndarray

    def __post_init__(self):
        wc = np.asarray(self.world_corners, dtype=float)
        pc = np.asarray(self.pixel_corners, dtype=float)
        if wc.shape != (4, 3):
            raise ValueError("world_corners must have shape (4, 3)")
        if pc.shape != (4, 2):
            raise ValueError("pixel_corners must have shape (4, 2)")
        if np.any(np.abs(wc[:, 1]) > 1e-9):
            raise ValueError("loop corners must lie on the road plane Y = 0")
        e01 = wc[1] - wc[0]
        e12 = wc[2] - wc[1]
        if np.linalg.norm(e01) < 1e-9 or np.linalg.norm(e12) < 1e-9:
            raise ValueError("degenerate loop rectangle")
        if abs(np.dot(e01, e12)) > 1e-6 * np.linalg.norm(e01) * np.linalg.norm(e12):
            raise ValueError("loop corners must form a rectangle")
        if not (np.allclose(wc[3] - wc[2], -e01) and np.allclose(wc[0] - wc[3], -e12)):
            raise ValueError("loop corners must form a closed rectangle")
        object.__setattr__(self, "world_corners", wc)
        object.__setattr__(self, "pixel_corners", pc)


@dataclass(frozen=True)
class CalibOptions:
    """Optimizer settings for `calibrate_pose`."""

    learning_rate: np.ndarray = field(
        default_factory=lambda: np.array([1e-2, 1e-2, 1e-2, 1e-3, 1e-3, 1e-3]))
    max_iters: int = 400
    convergence_tol: float = 1e-4
    restarts: int = 8
    init_jitter: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 0.5, 1.0, 0.05, 0.05, 0.05]))
    fixed_components: tuple[str, ...] = ("y",)
    rng_seed: int = 0
    grad_step: float = 1e-6
    corner_subsample: int | None = None  # stochastic corner subsets, off by default
    refine: bool = True  # least-squares polish after the descent phase

    def __post_init__(self):
        lr = np.broadcast_to(np.asarray(self.learning_rate, dtype=float), (6,)).copy()
        if np.any(lr <= 0):
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        for name in self.fixed_components:
            if name not in POSE_COMPONENTS:
                raise ValueError(f"unknown pose component {name!r}")
        object.__setattr__(self, "learning_rate", lr)
        object.__setattr__(
            self, "init_jitter",
            np.broadcast_to(np.asarray(self.init_jitter, dtype=float), (6,)).copy())

    @property
    def free_mask(self) -> np.ndarray:
        return np.array([c not in self.fixed_components for c in POSE_COMPONENTS])


@dataclass
class CalibResult:
    pose: CameraPose
    final_loss: float
    iterations: int
    loss_trace: np.ndarray
    converged: bool
    restart_index: int = 0


def _project_sensor(world: np.ndarray, p: np.ndarray,
                    k: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Sensor-frame projections and depths of (N, 3) points for pose array p.

    Raw-array twin of `geometry.project_points` without pose validation, so
    the optimizer can probe poses that a CameraPose would reject (y <= 0).
    """
    ca, sa = math.cos(p[3]), math.sin(p[3])
    cb, sb = math.cos(p[4]), math.sin(p[4])
    co, so = math.cos(p[5]), math.sin(p[5])
    yaw = np.array(((ca, 0.0, -sa), (0.0, 1.0, 0.0), (sa, 0.0, ca)))
    pitch = np.array(((1.0, 0.0, 0.0), (0.0, cb, -sb), (0.0, sb, cb)))
    roll = np.array(((co, -so, 0.0), (so, co, 0.0), (0.0, 0.0, 1.0)))
    r_cw = yaw @ pitch @ roll @ _BASE
    pc = (world - p[:3]) @ r_cw
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([k.fx * pc[:, 0] / z + k.cx,
                       k.fy * pc[:, 1] / z + k.cy], axis=1)
    return uv, z


class _LossEvaluator:
    """Caches annotation data and evaluates the cost from a raw pose array.

    Works entirely in full-sensor pixel coordinates: the annotated recorded
    pixels are lifted by the crop offset once, which leaves both cost terms
    unchanged and saves the per-call crop mapping.  Returns +inf whenever a
    corner does not project with positive depth.
    """

    def __init__(self, k: CameraIntrinsics, anns: Sequence[LoopAnnotation]):
        if not anns:
            raise ValueError("need at least one loop annotation")
        du, dv = k.crop_offset
        self.k = k
        self.world = np.concatenate([a.world_corners for a in anns])
        self.ann_px = np.concatenate([a.pixel_corners for a in anns]) + (du, dv)
        i0, i1 = [], []
        for li in range(len(anns)):
            for a, b in EDGES:
                i0.append(4 * li + a)
                i1.append(4 * li + b)
        self.e0 = np.array(i0)
        self.e1 = np.array(i1)
        self.ann_d = np.linalg.norm(self.ann_px[self.e0] - self.ann_px[self.e1], axis=1)

    def __call__(self, p: np.ndarray, corner_idx: np.ndarray | None = None) -> float:
        uv, z = _project_sensor(self.world, p, self.k)
        if np.any(z <= _DEPTH_EPS):
            return math.inf
        corner = np.linalg.norm(uv - self.ann_px, axis=1)
        d = np.linalg.norm(uv[self.e0] - uv[self.e1], axis=1)
        dist = np.abs(d - self.ann_d)
        if corner_idx is not None:
            corner = corner[corner_idx]
            dist = dist[corner_idx]
        return float(corner.sum() + dist.sum())


def _as_annotation_list(ann) -> list[LoopAnnotation]:
    if isinstance(ann, LoopAnnotation):
        return [ann]
    return list(ann)


def eq1_loss(pose: CameraPose, k: CameraIntrinsics, ann) -> float:
    """Reprojection cost in pixels for one annotation (or a sequence of them).

    Raises NonPositiveDepth when any corner fails to project in front of the
    camera; `calibrate_pose` treats that condition as an infinite loss.
    """
    ev = _LossEvaluator(k, _as_annotation_list(ann))
    loss = ev(pose.as_array())
    if math.isinf(loss):
        raise NonPositiveDepth("a loop corner projects behind the camera")
    return loss


def finite_diff_grad(pose: CameraPose, k: CameraIntrinsics, ann,
                     h=1e-6) -> np.ndarray:
    """Central-difference gradient of the cost w.r.t. the 6 pose components."""
    hs = np.broadcast_to(np.asarray(h, dtype=float), (6,))
    if np.any(hs <= 0):
        raise StepUnderflow("finite-difference step must be positive")
    ev = _LossEvaluator(k, _as_annotation_list(ann))
    return _grad(ev, pose.as_array(), hs, np.ones(6, dtype=bool))


def _grad(ev, p, hs, mask, corner_idx=None) -> np.ndarray:
    g = np.zeros(6)
    for i in range(6):
        if not mask[i]:
            continue
        step = np.zeros(6)
        step[i] = hs[i]
        g[i] = (ev(p + step, corner_idx) - ev(p - step, corner_idx)) / (2 * hs[i])
    return g


def _residual_vector(ev: _LossEvaluator, p: np.ndarray) -> np.ndarray | None:
    """Signed residuals whose root is the zero of the cost: corner coordinate
    differences plus edge-length differences.  None if any corner is behind
    the camera."""
    uv, z = _project_sensor(ev.world, p, ev.k)
    if np.any(z <= _DEPTH_EPS):
        return None
    corner = (uv - ev.ann_px).ravel()
    d = np.linalg.norm(uv[ev.e0] - uv[ev.e1], axis=1)
    return np.concatenate([corner, d - ev.ann_d])


def _descent_phase(ev, p, loss, free, lr0, max_iters, tol, rng, subsample,
                   trace) -> tuple[np.ndarray, float, int]:
    """Gradient descent with per-component adaptive steps (sign rule).

    Each component keeps its own step size, grown 1.2x while the gradient
    sign holds and halved when it flips; the best visited pose is retained
    and every improvement extends the trace.  With `subsample` set, each
    iteration's gradient uses a random corner subset (stochastic mode).
    """
    delta = lr0.copy()
    gprev = np.zeros(6)
    hs = np.full(6, 1e-6)
    best_p, best_loss = p.copy(), loss
    n_corners = len(ev.ann_px)
    stall = 0
    it = 0
    for it in range(1, max_iters + 1):
        if best_loss <= tol or stall > 60:
            break
        corner_idx = None
        if subsample:
            corner_idx = rng.choice(n_corners, size=min(subsample, n_corners),
                                    replace=False)
        g = _grad(ev, p, hs, free, corner_idx)
        if not np.all(np.isfinite(g[free])):
            p, loss = best_p.copy(), best_loss
            delta *= 0.25
            gprev = np.zeros(6)
            continue
        agree = g * gprev
        delta[agree > 0] = np.minimum(delta[agree > 0] * 1.2, 0.5)
        delta[agree < 0] = np.maximum(delta[agree < 0] * 0.5, 1e-12)
        g = g.copy()
        g[agree < 0] = 0.0  # hold a component for one step after a sign flip
        step = np.sign(g) * delta
        step[~free] = 0.0
        p = p - step
        loss = ev(p)
        if not math.isfinite(loss):
            p, loss = best_p.copy(), best_loss
            delta *= 0.25
            gprev = np.zeros(6)
            continue
        if loss < best_loss - 1e-12 * max(1.0, best_loss):
            best_p, best_loss = p.copy(), loss
            trace.append(best_loss)
            stall = 0
        else:
            stall += 1
        gprev = g
    return best_p, best_loss, it


def _refine_phase(ev, p, loss, free, tol, trace,
                  max_steps=12) -> tuple[np.ndarray, float, int]:
    """Local zero-residual refinement: damped least-squares steps on the
    residual vector, each accepted only if the true cost decreases (halving
    the step otherwise)."""
    idx = np.flatnonzero(free)
    h = 1e-6
    it = 0
    for it in range(1, max_steps + 1):
        if loss <= tol:
            break
        r = _residual_vector(ev, p)
        if r is None:
            break
        jac = np.zeros((len(r), len(idx)))
        bad = False
        for j, i in enumerate(idx):
            d = np.zeros(6)
            d[i] = h
            rp = _residual_vector(ev, p + d)
            rm = _residual_vector(ev, p - d)
            if rp is None or rm is None:
                bad = True
                break
            jac[:, j] = (rp - rm) / (2 * h)
        if bad:
            break
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        full = np.zeros(6)
        full[idx] = step
        t = 1.0
        improved = False
        for _ in range(12):
            lt = ev(p + t * full)
            if lt < loss:
                p, loss = p + t * full, lt
                trace.append(loss)
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    return p, loss, it


def calibrate_pose(init: CameraPose, k: CameraIntrinsics, ann,
                   opts: CalibOptions = CalibOptions()) -> CalibResult:
    """Estimate the pose minimizing the corner cost, with random restarts.

    Each restart runs gradient descent with per-component learning rates
    (steps halve when the component's gradient sign flips and grow while it
    holds), followed by an optional damped least-squares refinement on the
    corner residuals that is gated on the true cost decreasing, with step
    halving on increase.  Fixed components never move or jitter.  The best
    restart by final loss wins; ties go to the lowest restart index.  The
    loss trace records accepted (improving) evaluations, so it is always
    non-increasing.  A result missing `convergence_tol` comes back flagged
    `converged=False` rather than raising.
    """
    anns = _as_annotation_list(ann)
    ev = _LossEvaluator(k, anns)
    free = opts.free_mask
    lr0 = opts.learning_rate

    best: CalibResult | None = None
    for ri in range(opts.restarts):
        rng = np.random.default_rng([opts.rng_seed, ri])
        p = init.as_array()
        if ri > 0:
            jit = rng.uniform(-opts.init_jitter, opts.init_jitter)
            p[free] += jit[free]
        loss = ev(p)
        trace = [loss]
        iters = 0
        budget = opts.max_iters
        descent_tol = (max(opts.convergence_tol, 1e-1) if opts.refine
                       else opts.convergence_tol)
        for _round in range(2):
            if loss <= opts.convergence_tol or budget <= 0:
                break
            p, loss, used = _descent_phase(ev, p, loss, free, lr0, budget,
                                           descent_tol,
                                           rng, opts.corner_subsample, trace)
            budget -= used
            iters += used
            if opts.refine:
                p, loss, used = _refine_phase(ev, p, loss, free,
                                              min(opts.convergence_tol, 1e-6),
                                              trace)
                iters += used
        cand = CalibResult(
            pose=CameraPose.from_array(p),
            final_loss=loss,
            iterations=iters,
            loss_trace=np.array(trace),
            converged=loss <= opts.convergence_tol,
            restart_index=ri,
        )
        if best is None or cand.final_loss < best.final_loss:
            best = cand
    return best


def synthesize_annotation(world_corners: np.ndarray, k: CameraIntrinsics,
                          pose: CameraPose) -> LoopAnnotation:
    """Build a self-consistent annotation by projecting the world corners."""
    world = np.asarray(world_corners, dtype=float)
    uv, z = _project_sensor(world, pose.as_array(), k)
    if np.any(z <= _DEPTH_EPS):
        raise NonPositiveDepth("loop corner behind camera for this pose")
    du, dv = k.crop_offset
    return LoopAnnotation(world_corners=world, pixel_corners=uv - (du, dv))


def load_annotations(path) -> list[LoopAnnotation]:
    """Read loop annotations from the JSON interchange file.

    Schema: {"loops": [{"world_corners": [[X,Y,Z]*4],
                        "pixel_corners": [[u,v]*4]}, ...]}
    with pixel corners in recorded-frame coordinates.
    """
    data = json.loads(Path(path).read_text())
    return [LoopAnnotation(np.array(rec["world_corners"], dtype=float),
                           np.array(rec["pixel_corners"], dtype=float))
            for rec in data["loops"]]


def save_annotations(anns: Sequence[LoopAnnotation], path) -> None:
    """Write loop annotations in the JSON interchange format."""
    payload = {"loops": [{"world_corners": a.world_corners.tolist(),
                          "pixel_corners": a.pixel_corners.tolist()}
                         for a in anns]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))
