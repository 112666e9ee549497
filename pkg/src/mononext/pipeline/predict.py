"""Inference: model -> grid tensor -> scored boxes -> KITTI detection files."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch

from .. import kitti_io
from ..evaluator import EvalReport, evaluate, ground_truth_from_labels
from ..geometry import BoxSpec
from ..grid_codec import GridSpec, decode
from ..network import MonoNext, images_to_tensor, load_checkpoint
from .config import TrainConfig


@torch.no_grad()
def predict_grids(model: MonoNext, frames: Sequence[kitti_io.Frame], batch_size: int = 8) -> np.ndarray:
    model.eval()
    out = []
    for i in range(0, len(frames), batch_size):
        chunk = frames[i:i + batch_size]
        images = images_to_tensor([f.image for f in chunk], model.cfg.input_size)
        out.append(model(images).double().numpy())
    return np.concatenate(out) if out else np.zeros((0,))


def predict(model_or_checkpoint: Union[MonoNext, str, Path], frames: Sequence[kitti_io.Frame],
            threshold: float, nms_iou: Optional[float], grid: GridSpec,
            expected_config: Optional[dict] = None, out_dir=None,
            class_names: Sequence[str] = ("Car",), batch_size: int = 8) -> Dict[str, List[BoxSpec]]:
    """Decode detections per frame; optionally write ``<out_dir>/<frame_id>.txt``."""
    if isinstance(model_or_checkpoint, MonoNext):
        model = model_or_checkpoint
    else:
        model, _, _ = load_checkpoint(model_or_checkpoint, expected_config)
    grids = predict_grids(model, frames, batch_size)
    results = {f.frame_id: decode(t, threshold, grid, nms_iou) for f, t in zip(frames, grids)}
    if out_dir is not None:
        write_predictions(out_dir, frames, results, class_names)
    return results


def write_predictions(out_dir, frames: Sequence[kitti_io.Frame], results: Dict[str, List[BoxSpec]],
                      class_names: Sequence[str] = ("Car",)):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for frame in frames:
        h, w = frame.image.shape[:2]
        recs = [kitti_io.box_to_label(b, class_names[b.class_id], frame.calib, (w, h))
                for b in results.get(frame.frame_id, [])]
        kitti_io.write_label_file(out_dir / f"{frame.frame_id}.txt", recs, decimals=6)


def evaluate_frames(model: MonoNext, source, cfg: TrainConfig) -> EvalReport:
    """Predict on every frame of ``source`` and score against its labels."""
    frames = [source.get(fid) for fid in source.frame_ids]
    preds = predict(model, frames, cfg.threshold, cfg.nms_iou, cfg.grid, class_names=cfg.class_names)
    gts = {f.frame_id: ground_truth_from_labels(f.labels, cfg.class_names[0], f.calib) for f in frames}
    return evaluate(preds, gts, cfg.grid, cfg.protocol)
