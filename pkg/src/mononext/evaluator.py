"""KITTI-style scoring: greedy matching, interpolated AP, mean IoU, recognition.

Difficulty levels pool cumulatively (Moderate includes Easy, Hard includes
both). Ground truths outside the current level, of a neighbouring class, or
labelled Ignored never count as misses, and detections landing on them (or
mostly inside a DontCare region) are neither true nor false positives.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import kitti_io
from .geometry import BoxSpec, boxes_to_array, box_corners_3d, iou3d, iou3d_matrix
from .grid_codec import GridSpec, cell_index
from .kitti_io import Difficulty

TP, FP, IGNORED = 1, 0, -1
LEVELS = (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD)
PROTOCOLS = ("R11", "R40")


@dataclass
class GroundTruthFrame:
    boxes: List[BoxSpec] = field(default_factory=list)
    difficulties: List[Difficulty] = field(default_factory=list)
    ignore: List[bool] = field(default_factory=list)
    dontcare: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    calib: Optional[kitti_io.CalibBundle] = None

    def __post_init__(self):
        if not self.ignore:
            self.ignore = [False] * len(self.boxes)
        if not (len(self.boxes) == len(self.difficulties) == len(self.ignore)):
            raise ValueError("boxes, difficulties and ignore flags must align")


@dataclass
class MatchResult:
    scores: np.ndarray  # per detection, descending
    flags: np.ndarray  # TP / FP / IGNORED per detection
    ious: np.ndarray  # IoU of the claimed ground truth (0 for FP)
    gt_matched: np.ndarray  # per counted ground truth
    frame_index: int = 0

    @property
    def num_gt(self) -> int:
        return int(self.gt_matched.shape[0])

    @property
    def tp(self) -> int:
        return int((self.flags == TP).sum())

    @property
    def fp(self) -> int:
        return int((self.flags == FP).sum())


def _iou_table(dets, gt_boxes, iou_fn):
    if not dets or not gt_boxes:
        return np.zeros((len(dets), len(gt_boxes)))
    if iou_fn is iou3d:
        return iou3d_matrix(boxes_to_array(dets), boxes_to_array(gt_boxes))
    return np.array([[iou_fn(d, g) for g in gt_boxes] for d in dets], dtype=np.float64)


def match_detections(dets: Sequence[BoxSpec], gts, iou_fn: Callable = iou3d, iou_thresh: float = 0.7,
                     level: Difficulty = Difficulty.HARD, ignore: Optional[Sequence[bool]] = None,
                     dontcare_hits: Optional[Sequence[bool]] = None, strict: bool = False,
                     iou_table: Optional[np.ndarray] = None, frame_index: int = 0) -> MatchResult:
    """Greedy single-claim matching of ``dets`` against ``gts`` = [(box, difficulty), ...].

    A ground truth counts at ``level`` when its difficulty is <= ``level`` and
    it is not flagged in ``ignore``; ``strict`` switches the test to ``iou > thresh``.
    """
    scores = np.array([d.score if d.score is not None else 0.0 for d in dets], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    gt_boxes = [g for g, _ in gts]
    table = _iou_table(dets, gt_boxes, iou_fn) if iou_table is None else np.asarray(iou_table)
    ignore = list(ignore) if ignore is not None else [False] * len(gts)
    counted = np.array([(d <= level and d != Difficulty.IGNORED) and not ig
                        for (_, d), ig in zip(gts, ignore)], dtype=bool)
    ok = table > iou_thresh if strict else table >= iou_thresh
    claimed = np.zeros(len(gts), dtype=bool)
    flags = np.full(len(dets), FP, dtype=np.int8)
    ious = np.zeros(len(dets))
    for rank, di in enumerate(order):
        cand = np.nonzero(ok[di] & counted & ~claimed)[0]
        if cand.size:
            best = cand[np.argmax(table[di, cand])]
            claimed[best] = True
            flags[rank] = TP
            ious[rank] = table[di, best]
        elif (ok[di] & ~counted).any() or (dontcare_hits is not None and dontcare_hits[di]):
            flags[rank] = IGNORED
    return MatchResult(scores[order], flags, ious, claimed[counted], frame_index)


def _recall_points(protocol: str) -> np.ndarray:
    protocol = protocol.upper()
    if protocol == "R11":
        return np.linspace(0.0, 1.0, 11)
    if protocol == "R40":
        return np.arange(1, 41) / 40.0
    raise ValueError(f"unknown AP protocol {protocol!r}; choose from {PROTOCOLS}")


def average_precision(matches: Sequence[MatchResult], protocol: str = "R11") -> Optional[float]:
    """Interpolated AP of the pooled, score-ranked detections; None without ground truth."""
    points = _recall_points(protocol)
    num_gt = sum(m.num_gt for m in matches)
    if num_gt == 0:
        return None
    scores, tps, frames, idx = [], [], [], []
    for pos, m in enumerate(matches):
        keep = m.flags != IGNORED
        scores.append(m.scores[keep])
        tps.append(m.flags[keep] == TP)
        frames.append(np.full(int(keep.sum()), pos))
        idx.append(np.nonzero(keep)[0])
    if not scores or sum(s.size for s in scores) == 0:
        return 0.0
    scores, tps = np.concatenate(scores), np.concatenate(tps)
    frames, idx = np.concatenate(frames), np.concatenate(idx)
    order = np.lexsort((idx, frames, -scores))
    tp_cum = np.cumsum(tps[order])
    precision = tp_cum / np.arange(1, tp_cum.size + 1)
    recall = tp_cum / num_gt
    # interpolated precision: best precision at any recall >= r
    best_after = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    for r in points:
        hit = np.searchsorted(recall, r - 1e-12, side="left")
        ap += best_after[hit] if hit < recall.size else 0.0
    return float(ap / points.size)


@dataclass
class EvalReport:
    protocol: str
    frame_count: int
    metrics: Dict[str, Dict[str, Optional[float]]]

    ROWS = (
        ("mean_iou", "Mean IoU", 1.0),
        ("ap70", "mAP(IoU>0.7) (%)", 100.0),
        ("ap50", "mAP(IoU>0.5) (%)", 100.0),
        ("recognition", "Average Recognition (%)", 100.0),
    )

    def to_table(self) -> str:
        names = [lv.name.capitalize() for lv in LEVELS]
        lines = [f"{'':<26}" + "".join(f"{n:>10}" for n in names)]
        for key, title, scale in self.ROWS:
            cells = []
            for n in names:
                v = self.metrics[n.lower()][key]
                cells.append(f"{'-':>10}" if v is None else
                             (f"{v * scale:>10.4f}" if scale == 1.0 else f"{v * scale:>10.2f}"))
            lines.append(f"{title:<26}" + "".join(cells))
        lines.append(f"protocol={self.protocol} frames={self.frame_count}")
        return "\n".join(lines)

    def to_kv(self) -> str:
        out = [f"protocol={self.protocol}", f"frames={self.frame_count}"]
        for lv in LEVELS:
            name = lv.name.lower()
            for key, val in self.metrics[name].items():
                out.append(f"{name}.{key}={'nan' if val is None else repr(float(val))}")
        return "\n".join(out) + "\n"


def _dontcare_hits(dets, gt: GroundTruthFrame):
    if gt.dontcare.size == 0 or gt.calib is None:
        return None
    hits = []
    for d in dets:
        corners = box_corners_3d(d)
        if (corners[:, 2] <= 0.1).any():
            hits.append(False)
            continue
        uv = gt.calib.project(corners)
        l, t = uv.min(axis=0)
        r, b = uv.max(axis=0)
        area = max(1e-9, (r - l) * (b - t))
        iw = np.clip(np.minimum(r, gt.dontcare[:, 2]) - np.maximum(l, gt.dontcare[:, 0]), 0, None)
        ih = np.clip(np.minimum(b, gt.dontcare[:, 3]) - np.maximum(t, gt.dontcare[:, 1]), 0, None)
        hits.append(bool(((iw * ih) / area > 0.5).any()))
    return hits


def evaluate(predictions: Mapping[str, Sequence[BoxSpec]], ground_truth: Mapping[str, GroundTruthFrame],
             g: Optional[GridSpec] = None, protocol: str = "R11") -> EvalReport:
    """Per-difficulty AP@0.7, AP@0.5, mean IoU (TPs at 0.5) and recall at IoU > 0.1.

    With ``g`` set, ground truths whose BEV center falls outside the grid are
    treated like ignored objects.
    """
    _recall_points(protocol)
    unknown = set(predictions) - set(ground_truth)
    if unknown:
        raise ValueError(f"predictions for unknown frames: {sorted(unknown)[:5]}")
    frame_ids = sorted(ground_truth)
    per_frame = []
    for pos, fid in enumerate(frame_ids):
        gt = ground_truth[fid]
        dets = list(predictions.get(fid, []))
        ignore = list(gt.ignore)
        if g is not None:
            ignore = [ig or cell_index(b.x, b.z, g) is None for b, ig in zip(gt.boxes, ignore)]
        table = _iou_table(dets, gt.boxes, iou3d)
        per_frame.append((pos, dets, list(zip(gt.boxes, gt.difficulties)), ignore, table,
                          _dontcare_hits(dets, gt)))

    metrics = {}
    for level in LEVELS:
        res = {}
        for key, thresh, strict in (("ap70", 0.7, False), ("ap50", 0.5, False), ("recognition", 0.1, True)):
            matches = [match_detections(d, gts, iou3d, thresh, level, ig, dc, strict, tab, pos)
                       for pos, d, gts, ig, tab, dc in per_frame]
            n_gt = sum(m.num_gt for m in matches)
            if key == "recognition":
                res[key] = None if n_gt == 0 else sum(int(m.gt_matched.sum()) for m in matches) / n_gt
            else:
                res[key] = average_precision(matches, protocol)
            if key == "ap50":
                tp_ious = np.concatenate([m.ious[m.flags == TP] for m in matches]) if matches else np.zeros(0)
                res["mean_iou"] = None if n_gt == 0 else (float(tp_ious.mean()) if tp_ious.size else 0.0)
            res["num_gt"] = n_gt
        metrics[level.name.lower()] = res
    return EvalReport(protocol.upper(), len(frame_ids), metrics)


# ---------------------------------------------------------------- file loading


def ground_truth_from_labels(labels: Sequence[kitti_io.LabelRecord], class_name: str = "Car",
                             calib: Optional[kitti_io.CalibBundle] = None) -> GroundTruthFrame:
    boxes, diffs, ignore, dontcare = [], [], [], []
    neighbours = kitti_io.NEIGHBOUR_CLASSES.get(class_name, ())
    for rec in labels:
        if rec.is_dontcare:
            dontcare.append(rec.bbox2d)
            continue
        if rec.class_name != class_name and rec.class_name not in neighbours:
            continue
        boxes.append(kitti_io.label_to_box(rec))
        diffs.append(kitti_io.assign_difficulty(rec))
        ignore.append(rec.class_name != class_name)
    dc = np.array(dontcare, dtype=np.float64).reshape(-1, 4)
    return GroundTruthFrame(boxes, diffs, ignore, dc, calib)


def predictions_from_labels(labels: Sequence[kitti_io.LabelRecord], class_name: str = "Car") -> List[BoxSpec]:
    out = []
    for rec in labels:
        if rec.class_name != class_name:
            continue
        box = kitti_io.label_to_box(rec)
        out.append(box.with_score(1.0 if rec.score is None else rec.score))
    return out


def load_ground_truth(label_dir, frame_ids=None, class_name="Car", calib_dir=None) -> Dict[str, GroundTruthFrame]:
    label_dir = Path(label_dir)
    ids = sorted(frame_ids) if frame_ids is not None else sorted(p.stem for p in label_dir.glob("*.txt"))
    out = {}
    for fid in ids:
        calib = None
        if calib_dir is not None and (Path(calib_dir) / f"{fid}.txt").is_file():
            calib = kitti_io.parse_calib(Path(calib_dir) / f"{fid}.txt")
        out[fid] = ground_truth_from_labels(kitti_io.parse_label_file(label_dir / f"{fid}.txt"), class_name, calib)
    return out


def load_predictions(pred_dir, class_name="Car") -> Dict[str, List[BoxSpec]]:
    return {p.stem: predictions_from_labels(kitti_io.parse_label_file(p), class_name)
            for p in sorted(Path(pred_dir).glob("*.txt"))}
