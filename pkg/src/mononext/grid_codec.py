"""BEV grid targets: encode boxes into an S x S x (1 + C + 7) volume and back.

Channel layout per cell::

    [conf | class_0 .. class_{C-1} | tx ty tz | tw th tl | tyaw]

Rows index depth (z), columns index lateral position (x). ``tx``/``tz`` are
offsets inside the cell, ``ty`` is global over ``y_range``, dims are divided
by ``dim_max`` and yaw is mapped from (-pi, pi] onto (0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .geometry import BoxSpec, boxes_to_array, normalize_angle

TWO_PI = 2.0 * math.pi
MIN_DIM = 1e-6


@dataclass(frozen=True)
class GridSpec:
    S: int = 15
    x_range: Tuple[float, float] = (-55.0, 55.0)
    y_range: Tuple[float, float] = (-2.0, 13.0)
    z_range: Tuple[float, float] = (0.0, 85.0)
    dim_max: Tuple[float, float, float] = (4.0, 4.0, 8.0)
    num_classes: int = 1

    def __post_init__(self):
        if self.S < 1:
            raise ValueError("grid side S must be >= 1")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        for name in ("x_range", "y_range", "z_range"):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise ValueError(f"{name} must be a nonempty interval")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if len(self.dim_max) != 3 or min(self.dim_max) <= 0:
            raise ValueError("dim_max must be three positive values")
        object.__setattr__(self, "dim_max", tuple(float(v) for v in self.dim_max))

    @property
    def channels(self) -> int:
        return 1 + self.num_classes + 7

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.S, self.S, self.channels)

    @property
    def cls_slice(self) -> slice:
        return slice(1, 1 + self.num_classes)

    @property
    def pos_slice(self) -> slice:
        c = 1 + self.num_classes
        return slice(c, c + 3)

    @property
    def dim_slice(self) -> slice:
        c = 4 + self.num_classes
        return slice(c, c + 3)

    @property
    def yaw_index(self) -> int:
        return 7 + self.num_classes

    @property
    def cell_size(self) -> Tuple[float, float]:
        """(x, z) extent of one cell in meters."""
        return (
            (self.x_range[1] - self.x_range[0]) / self.S,
            (self.z_range[1] - self.z_range[0]) / self.S,
        )


def _axis_cell(v, lo, hi, S):
    if not lo <= v <= hi:
        return None
    u = (v - lo) / (hi - lo) * S
    idx = min(int(math.floor(u)), S - 1)
    return idx, u - idx


def cell_index(x: float, z: float, g: GridSpec) -> Optional[Tuple[int, int]]:
    """(row, col) of the cell holding (x, z), or None when outside the grid."""
    cx = _axis_cell(x, *g.x_range, g.S)
    cz = _axis_cell(z, *g.z_range, g.S)
    if cx is None or cz is None:
        return None
    return cz[0], cx[0]


def encode_yaw(theta: float) -> float:
    return (normalize_angle(theta) + math.pi) / TWO_PI


def decode_yaw(t: float) -> float:
    return normalize_angle(t * TWO_PI - math.pi)


def encode(objects: Sequence[BoxSpec], g: GridSpec) -> np.ndarray:
    out = np.zeros(g.shape)
    for obj in objects:
        if not 0 <= obj.class_id < g.num_classes:
            raise ValueError(f"class_id {obj.class_id} outside [0, {g.num_classes})")
    # nearest object wins a shared cell
    for obj in sorted(objects, key=lambda b: b.z):
        cx = _axis_cell(obj.x, *g.x_range, g.S)
        cz = _axis_cell(obj.z, *g.z_range, g.S)
        if cx is None or cz is None:
            continue
        (col, tx), (row, tz) = cx, cz
        cell = out[row, col]
        if cell[0] == 1.0:
            continue
        ylo, yhi = g.y_range
        cell[0] = 1.0
        cell[1 + obj.class_id] = 1.0
        cell[g.pos_slice] = (tx, min(1.0, max(0.0, (obj.y - ylo) / (yhi - ylo))), tz)
        cell[g.dim_slice] = np.clip(np.asarray(obj.dims) / np.asarray(g.dim_max), 0.0, 1.0)
        cell[g.yaw_index] = encode_yaw(obj.yaw)
    return out


def decode_cell(cell: np.ndarray, row: int, col: int, g: GridSpec) -> BoxSpec:
    tx, ty, tz = cell[g.pos_slice]
    (xlo, xhi), (ylo, yhi), (zlo, zhi) = g.x_range, g.y_range, g.z_range
    x = xlo + (col + tx) / g.S * (xhi - xlo)
    z = zlo + (row + tz) / g.S * (zhi - zlo)
    y = ylo + ty * (yhi - ylo)
    dims = np.maximum(cell[g.dim_slice] * np.asarray(g.dim_max), MIN_DIM)
    class_id = int(np.argmax(cell[g.cls_slice]))
    return BoxSpec((x, y, z), tuple(dims), decode_yaw(float(cell[g.yaw_index])), class_id,
                   float(cell[0]))


def nms(boxes: Sequence[BoxSpec], iou_thresh: float) -> List[BoxSpec]:
    """Greedy rotated-BEV suppression in descending score order."""
    if not boxes:
        return []
    scores = np.array([b.score if b.score is not None else 0.0 for b in boxes])
    order = np.argsort(-scores, kind="stable").astype(np.int64)
    keep = _kernels.active.greedy_nms(boxes_to_array(boxes), order, float(iou_thresh))
    return [boxes[i] for i in keep]


def decode(t: np.ndarray, threshold: float, g: GridSpec, nms_iou: Optional[float] = 0.3) -> List[BoxSpec]:
    """Boxes for every cell with confidence above ``threshold``, best first."""
    t = np.asarray(t, dtype=np.float64)
    if t.shape != g.shape:
        raise ValueError(f"grid tensor shape {t.shape} does not match {g.shape}")
    rows, cols = np.nonzero(t[..., 0] > threshold)
    boxes = [decode_cell(t[r, c], r, c, g) for r, c in zip(rows, cols)]
    boxes.sort(key=lambda b: -b.score)
    if nms_iou is not None:
        boxes = nms(boxes, nms_iou)
    return boxes


def flip_grid(t: np.ndarray, g: GridSpec) -> np.ndarray:
    """Grid of the left-right mirrored scene; assumes a symmetric ``x_range``."""
    out = np.asarray(t, dtype=np.float64)[:, ::-1].copy()
    occupied = out[..., 0] > 0
    tx = g.pos_slice.start
    out[..., tx] = np.where(occupied, 1.0 - out[..., tx], out[..., tx])
    yi = g.yaw_index
    for r, c in zip(*np.nonzero(occupied)):
        out[r, c, yi] = encode_yaw(math.pi - decode_yaw(out[r, c, yi]))
    return out
