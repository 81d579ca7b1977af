"""speedtwin: digital-twin workbench for camera-based vehicle speed estimation.

The package covers the full loop: calibrate a roadside camera pose from
inductive-loop corner annotations, procedurally render synthetic traffic
clips from the calibrated twin, train a from-scratch 3D CNN speed regressor
on the synthetic data, sanity-check the chain with a geometric oracle, and
measure the domain gap between matched and mismatched training domains.
"""

from .geometry import (
    BehindCamera,
    CameraIntrinsics,
    CameraPose,
    GeometryError,
    NonPositiveDepth,
    PixelPoint,
    RayParallelToGround,
    backproject_ground,
    crop_map,
    crop_unmap,
    project,
    rotation_from_angles,
)

__version__ = "0.1.0"
