"""Oriented 3D box geometry in the KITTI camera frame (x right, y down, z forward)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels

__all__ = [
    "BoxSpec",
    "normalize_angle",
    "box_to_bev_corners",
    "polygon_intersection_area",
    "bev_iou",
    "iou3d",
    "aabb_iou3d",
    "boxes_to_array",
    "bev_iou_matrix",
    "iou3d_matrix",
    "box_corners_3d",
]


def normalize_angle(theta: float) -> float:
    """Wrap ``theta`` into (-pi, pi]."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta}")
    if -math.pi < theta <= math.pi:
        return theta
    out = math.fmod(theta + math.pi, 2.0 * math.pi)
    if out < 0.0:
        out += 2.0 * math.pi
    out -= math.pi
    if out <= -math.pi:
        out = math.pi
    return out


@dataclass(frozen=True)
class BoxSpec:
    """3D box with geometric center, dims ``(w, h, l)`` and yaw about the y axis."""

    center: tuple
    dims: tuple
    yaw: float
    class_id: int = 0
    score: Optional[float] = field(default=None, compare=True)

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        dims = tuple(float(v) for v in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise ValueError("center and dims need three components")
        if not all(d > 0 for d in dims):
            raise ValueError(f"box dims must be positive, got {dims}")
        if self.class_id < 0:
            raise ValueError("class_id must be >= 0")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))
        object.__setattr__(self, "class_id", int(self.class_id))
        if self.score is not None:
            object.__setattr__(self, "score", float(self.score))

    @property
    def x(self):
        return self.center[0]

    @property
    def y(self):
        return self.center[1]

    @property
    def z(self):
        return self.center[2]

    @property
    def w(self):
        return self.dims[0]

    @property
    def h(self):
        return self.dims[1]

    @property
    def l(self):  # noqa: E743
        return self.dims[2]

    @property
    def volume(self):
        return self.w * self.h * self.l

    def as_array(self) -> np.ndarray:
        return np.array([*self.center, *self.dims, self.yaw], dtype=np.float64)

    def with_score(self, score):
        return BoxSpec(self.center, self.dims, self.yaw, self.class_id, score)


def boxes_to_array(boxes: Sequence[BoxSpec]) -> np.ndarray:
    if len(boxes) == 0:
        return np.zeros((0, 7))
    return np.stack([b.as_array() for b in boxes])


def box_to_bev_corners(box: BoxSpec) -> np.ndarray:
    """Footprint corners as a (4, 2) array of (x, z), counter-clockwise."""
    return _kernels.active.bev_corners(box.x, box.z, box.w, box.l, box.yaw)


def box_corners_3d(box: BoxSpec) -> np.ndarray:
    """(8, 3) corners; first four on the top face (smaller y), then the bottom face."""
    bev = box_to_bev_corners(box)
    top = box.y - 0.5 * box.h
    bottom = box.y + 0.5 * box.h
    out = np.empty((8, 3))
    out[:4, 0] = bev[:, 0]
    out[:4, 1] = top
    out[:4, 2] = bev[:, 1]
    out[4:, 0] = bev[:, 0]
    out[4:, 1] = bottom
    out[4:, 2] = bev[:, 1]
    return out


def _as_ccw_convex(poly) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(poly, dtype=np.float64))
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise ValueError("polygon needs at least three (x, z) vertices")
    nxt = np.roll(arr, -1, axis=0)
    nxt2 = np.roll(arr, -2, axis=0)
    cross = (nxt[:, 0] - arr[:, 0]) * (nxt2[:, 1] - nxt[:, 1]) - (nxt[:, 1] - arr[:, 1]) * (
        nxt2[:, 0] - nxt[:, 0]
    )
    scale = max(1.0, float(np.abs(arr).max())) ** 2
    tol = 1e-12 * scale
    if (cross < -tol).any() and (cross > tol).any():
        raise ValueError("polygon is not convex")
    if cross.sum() < 0:
        arr = arr[::-1].copy()
    return arr


def polygon_intersection_area(a, b) -> float:
    """Area of the intersection of two convex polygons (either orientation)."""
    pa = _as_ccw_convex(a)
    pb = _as_ccw_convex(b)
    # clip the lexicographically smaller polygon so the result is order independent
    if (pa.shape[0], *pa.ravel()) > (pb.shape[0], *pb.ravel()):
        pa, pb = pb, pa
    return float(_kernels.active.clip_area(pa, pa.shape[0], pb, pb.shape[0]))


def bev_iou(a: BoxSpec, b: BoxSpec) -> float:
    return float(_kernels.active.bev_iou(a.as_array(), b.as_array()))


def iou3d(a: BoxSpec, b: BoxSpec) -> float:
    return float(_kernels.active.iou3d(a.as_array(), b.as_array()))


def aabb_iou3d(a: BoxSpec, b: BoxSpec) -> float:
    """IoU of the yaw-free boxes with extents (w, h, l) along (x, y, z)."""
    inter = 1.0
    for ca, cb, da, db in zip(a.center, b.center, a.dims, b.dims):
        lo = max(ca - 0.5 * da, cb - 0.5 * db)
        hi = min(ca + 0.5 * da, cb + 0.5 * db)
        if hi <= lo:
            return 0.0
        inter *= hi - lo
    union = a.volume + b.volume - inter
    return min(1.0, inter / union)


def bev_iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise rotated BEV IoU between two box arrays of shape (N, 7) / (M, 7)."""
    A = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 7)
    B = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 7)
    return _kernels.active.bev_iou_matrix(A, B)


def iou3d_matrix(boxes_a, boxes_b) -> np.ndarray:
    A = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 7)
    B = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 7)
    return _kernels.active.iou3d_matrix(A, B)
