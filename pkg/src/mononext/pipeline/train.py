"""AdamW training loop with incremental logging and checkpointing."""
from __future__ import annotations

import json
import logging
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
import torch

from ..loss import total_loss
from ..network import MonoNext, save_checkpoint
from .config import TrainConfig, config_to_text
from .data import FrameSource, epoch_batches, require_frames, split_frame_ids

log = logging.getLogger(__name__)

LOG_FIELDS = ("kind", "epoch", "step", "conf", "cls", "box", "total", "wall", "extra")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainLog:
    steps: List[dict] = field(default_factory=list)
    epochs: List[dict] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)
    path: Optional[Path] = None

    def _write(self, row: dict):
        if self.path is None:
            return
        with open(self.path, "a") as fh:
            fh.write("\t".join(str(row.get(k, "")) for k in LOG_FIELDS) + "\n")

    def add_step(self, epoch, step, losses: dict, wall):
        row = {"kind": "step", "epoch": epoch, "step": step, "wall": f"{wall:.3f}", **losses}
        self.steps.append(row)
        self._write({**row, **{k: repr(v) for k, v in losses.items()}})

    def add_epoch(self, epoch, means: dict, wall, metrics: Optional[dict] = None):
        row = {"kind": "epoch", "epoch": epoch, "step": "", "wall": f"{wall:.3f}", **means}
        if metrics:
            row["extra"] = json.dumps(metrics, sort_keys=True)
        self.epochs.append(row)
        self._write({**row, **{k: repr(v) for k, v in means.items()}})

    @property
    def loss_sequence(self) -> List[float]:
        return [s["total"] for s in self.steps]


def read_log(path) -> List[dict]:
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        for line in fh:
            vals = line.rstrip("\n").split("\t")
            row = dict(zip(header, vals))
            for k in ("conf", "cls", "box", "total"):
                row[k] = float(row[k])
            rows.append(row)
    return rows


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


@dataclass
class TrainResult:
    checkpoint: Path
    log: TrainLog
    model: MonoNext
    best_checkpoint: Optional[Path] = None


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    if not cfg.cosine_lr:
        return cfg.learning_rate
    return 0.5 * cfg.learning_rate * (1 + math.cos(math.pi * epoch / cfg.epochs))


def train(cfg: TrainConfig, max_steps: Optional[int] = None,
          on_epoch: Optional[Callable[[int, MonoNext], None]] = None) -> TrainResult:
    """Fit a model on ``cfg.train_split``; ``max_steps`` stops early (used by tests)."""
    if cfg.num_threads > 0:
        torch.set_num_threads(cfg.num_threads)
    seed_everything(cfg.seed)
    root = cfg.resolved_data_root()
    train_ids = require_frames(split_frame_ids(root, cfg.train_split, cfg.max_frames), root, cfg.train_split)
    val_ids = split_frame_ids(root, cfg.val_split) if cfg.val_split else []
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(config_to_text(cfg))

    tlog = TrainLog(path=out_dir / "train_log.tsv")
    tlog.path.write_text("\t".join(LOG_FIELDS) + "\n")

    model = MonoNext(cfg.network)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    source = FrameSource(root, train_ids)
    val_source = FrameSource(root, val_ids) if val_ids else None
    model_config = cfg.model_config()
    best_recognition = -1.0
    best_path = None
    step = 0
    t0 = time.perf_counter()
    last_path = out_dir / "last.npz"

    for epoch in range(cfg.epochs):
        for group in optimizer.param_groups:
            group["lr"] = _lr_at(cfg, epoch)
        model.train()
        sums = {"conf": 0.0, "cls": 0.0, "box": 0.0, "total": 0.0}
        n_batches = 0
        for frame_ids, images, targets in epoch_batches(
            source, epoch, cfg.seed, cfg.batch_size, cfg.grid, cfg.class_names, cfg.network.input_size,
            augment=cfg.augment, flip_prob=cfg.flip_prob, contrast_prob=cfg.contrast_prob,
            contrast_range=cfg.contrast_range, prefetch=cfg.prefetch,
        ):
            pred = model(images)
            breakdown = total_loss(pred, targets, cfg.grid, cfg.loss)
            losses = breakdown.as_floats()
            if not all(math.isfinite(v) for v in losses.values()):
                snapshot = {"epoch": epoch, "step": step, "frames": frame_ids, "losses": losses}
                (out_dir / "diverged.json").write_text(json.dumps(snapshot, indent=2))
                raise TrainingDiverged(f"non-finite loss at step {step}: {losses}", snapshot)
            optimizer.zero_grad(set_to_none=True)
            breakdown.total.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            # logged total is recomputed from the logged parts so the file stays consistent
            losses["total"] = losses["conf"] + losses["cls"] + losses["box"]
            tlog.add_step(epoch, step, losses, time.perf_counter() - t0)
            for k in sums:
                sums[k] += losses[k]
            n_batches += 1
            step += 1
            if max_steps is not None and step >= max_steps:
                break
        means = {k: v / max(1, n_batches) for k, v in sums.items()}
        means["total"] = means["conf"] + means["cls"] + means["box"]
        metrics = None
        last_epoch = epoch == cfg.epochs - 1 or (max_steps is not None and step >= max_steps)
        if val_source is not None and cfg.val_every > 0 and ((epoch + 1) % cfg.val_every == 0 or last_epoch):
            from .predict import evaluate_frames

            report = evaluate_frames(model, val_source, cfg)
            metrics = {"val_recognition_moderate": report.metrics["moderate"]["recognition"],
                       "val_ap50_moderate": report.metrics["moderate"]["ap50"]}
            rec = metrics["val_recognition_moderate"]
            if rec is not None and rec > best_recognition:
                best_recognition = rec
                best_path = save_checkpoint(out_dir / "best.npz", model, _extra(model_config),
                                            {"epoch": epoch, "step": step, **metrics})
                tlog.checkpoints.append(str(best_path))
        tlog.add_epoch(epoch, means, time.perf_counter() - t0, metrics)
        log.info("epoch %d total %.4f", epoch, means["total"])
        if cfg.checkpoint_every > 0 and (epoch + 1) % cfg.checkpoint_every == 0:
            p = save_checkpoint(out_dir / f"epoch_{epoch + 1:04d}.npz", model, _extra(model_config),
                                {"epoch": epoch, "step": step})
            tlog.checkpoints.append(str(p))
        if on_epoch is not None:
            on_epoch(epoch, model)
        if last_epoch:
            break

    save_checkpoint(last_path, model, _extra(model_config), {"epoch": epoch, "step": step})
    tlog.checkpoints.append(str(last_path))
    model.eval()
    return TrainResult(last_path, tlog, model, best_path)


def _extra(model_config: dict) -> dict:
    return {k: v for k, v in model_config.items() if k != "network"}
