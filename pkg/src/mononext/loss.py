"""Weighted multi-task objective over predicted and target grid tensors.

Every term is a raw sum over the S x S cells of one frame; batches are
averaged over frames. The box term is ``lambda_iou * (1 - IoU)^2`` with an
axis-aligned 3D IoU between the boxes decoded from each object cell, plus a
squared error on the normalized yaw channel.

``LossWeights.center`` adds a normalized center-distance penalty
(``d^2 / c^2``, with ``c`` the diagonal of the enclosing box). Without it a
prediction whose box misses the target entirely gets no gradient from the
IoU term. It vanishes whenever the centers coincide; set it to 0 to recover
the pure IoU objective.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .grid_codec import GridSpec


@dataclass(frozen=True)
class LossWeights:
    obj: float = 5.0
    noobj: float = 1.0
    cls: float = 1.0
    iou: float = 10.0
    yaw: float = 1.0
    center: float = 1.0

    def __post_init__(self):
        for name in ("obj", "noobj", "cls", "iou", "yaw", "center"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


@dataclass
class LossBreakdown:
    conf: torch.Tensor
    cls: torch.Tensor
    box: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("conf", "cls", "box", "total")}


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _check_pair(pred, target, g=None):
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    if g is not None and tuple(pred.shape[-3:]) != g.shape:
        raise ValueError(f"tensor shape {tuple(pred.shape[-3:])} does not match grid {g.shape}")
    return pred, target.to(pred.dtype)


def responsibility_mask(target) -> torch.Tensor:
    """1 where a target cell holds an object; targets must have binary confidence."""
    conf = _as_tensor(target)[..., 0]
    if not torch.all((conf == 0) | (conf == 1)):
        raise ValueError("target confidence must be exactly 0 or 1")
    return conf


def _frame_sum(x):
    return x.sum(dim=(-1, -2))


def _reduce(per_frame):
    return per_frame.mean() if per_frame.dim() > 0 else per_frame


def _conf_frames(pred, target, w):
    mask = responsibility_mask(target)
    err = (pred[..., 0] - target[..., 0]) ** 2
    return w.obj * _frame_sum(mask * err) + w.noobj * _frame_sum((1 - mask) * err)


def _cls_frames(pred, target, w, n_cls):
    mask = responsibility_mask(target)
    sl = slice(1, 1 + n_cls)
    err = ((pred[..., sl] - target[..., sl]) ** 2).sum(dim=-1)
    return w.cls * _frame_sum(mask * err)


def aabb_iou3d_torch(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Elementwise axis-aligned IoU of boxes ``[..., (x, y, z, w, h, l)]``."""
    lo = torch.maximum(a[..., :3] - 0.5 * a[..., 3:], b[..., :3] - 0.5 * b[..., 3:])
    hi = torch.minimum(a[..., :3] + 0.5 * a[..., 3:], b[..., :3] + 0.5 * b[..., 3:])
    inter = torch.clamp(hi - lo, min=0).prod(dim=-1)
    union = a[..., 3:].prod(dim=-1) + b[..., 3:].prod(dim=-1) - inter
    safe = torch.where(union > 0, union, torch.ones_like(union))
    iou = torch.where(union > 0, inter / safe, torch.zeros_like(union))
    # identical boxes score exactly 1 so the loss is exactly 0 at the target
    same = (a == b).all(dim=-1)
    return torch.where(same, torch.ones_like(iou), iou)


def center_penalty(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Squared center distance over the squared diagonal of the enclosing box."""
    d2 = ((a[..., :3] - b[..., :3]) ** 2).sum(dim=-1)
    lo = torch.minimum(a[..., :3] - 0.5 * a[..., 3:], b[..., :3] - 0.5 * b[..., 3:])
    hi = torch.maximum(a[..., :3] + 0.5 * a[..., 3:], b[..., :3] + 0.5 * b[..., 3:])
    c2 = ((hi - lo) ** 2).sum(dim=-1)
    safe = torch.where(c2 > 0, c2, torch.ones_like(c2))
    return torch.where(c2 > 0, d2 / safe, torch.zeros_like(c2))


def cell_boxes(t: torch.Tensor, g: GridSpec) -> torch.Tensor:
    """Per-cell boxes in cell-local meters; the cell origin cancels inside one cell."""
    cx, cz = g.cell_size
    span_y = g.y_range[1] - g.y_range[0]
    pos = t[..., g.pos_slice]
    scale_pos = pos.new_tensor([cx, span_y, cz])
    scale_dim = pos.new_tensor(g.dim_max)
    return torch.cat([pos * scale_pos, t[..., g.dim_slice] * scale_dim], dim=-1)


def _box_frames(pred, target, g, w):
    mask = responsibility_mask(target)
    pb, tb = cell_boxes(pred, g), cell_boxes(target, g)
    iou = aabb_iou3d_torch(pb, tb)
    iou_term = w.iou * _frame_sum(mask * (1 - iou) ** 2)
    if w.center:
        iou_term = iou_term + w.center * _frame_sum(mask * center_penalty(pb, tb))
    yi = g.yaw_index
    yaw_term = w.yaw * _frame_sum(mask * (pred[..., yi] - target[..., yi]) ** 2)
    return iou_term + yaw_term


def confidence_loss(pred, target, w: LossWeights = LossWeights()) -> torch.Tensor:
    pred, target = _check_pair(pred, target)
    return _reduce(_conf_frames(pred, target, w))


def class_loss(pred, target, w: LossWeights = LossWeights(), num_classes=None) -> torch.Tensor:
    pred, target = _check_pair(pred, target)
    n_cls = num_classes if num_classes is not None else pred.shape[-1] - 8
    return _reduce(_cls_frames(pred, target, w, n_cls))


def box_loss(pred, target, g: GridSpec, w: LossWeights = LossWeights()) -> torch.Tensor:
    pred, target = _check_pair(pred, target, g)
    return _reduce(_box_frames(pred, target, g, w))


def total_loss(pred, target, g: GridSpec, w: LossWeights = LossWeights()) -> LossBreakdown:
    pred, target = _check_pair(pred, target, g)
    conf = _reduce(_conf_frames(pred, target, w))
    cls = _reduce(_cls_frames(pred, target, w, g.num_classes))
    box = _reduce(_box_frames(pred, target, g, w))
    return LossBreakdown(conf=conf, cls=cls, box=box, total=conf + cls + box)
