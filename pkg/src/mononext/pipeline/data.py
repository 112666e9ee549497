"""Frame loading, target encoding and a bounded prefetching batch iterator."""
from __future__ import annotations

import queue
import threading
from pathlib import Path
from typing import Dict, Iterator, List, Sequence

import numpy as np
import torch

from .. import kitti_io
from ..errors import ConfigError
from ..grid_codec import GridSpec, encode
from ..network import images_to_tensor


def split_frame_ids(root, split_name: str, max_frames: int = 0) -> List[str]:
    """Frame ids of ``ImageSets/<split>.txt`` present on disk, or every frame when absent."""
    available = kitti_io.available_frames(root)
    set_file = kitti_io.dataset_dirs(root)["image_sets"] / f"{split_name}.txt"
    if set_file.is_file():
        wanted = set(kitti_io._read_ids(set_file))
        ids = [i for i in available if i in wanted]
    elif split_name in ("train", "all"):
        ids = available
    else:
        ids = []
    return ids[:max_frames] if max_frames > 0 else ids


def boxes_for_training(labels: Sequence[kitti_io.LabelRecord], class_names: Sequence[str]):
    lookup = {name: i for i, name in enumerate(class_names)}
    return [kitti_io.label_to_box(r, lookup[r.class_name]) for r in labels
            if not r.is_dontcare and r.class_name in lookup]


class FrameSource:
    """Loads frames from a KITTI layout, caching decoded images in memory."""

    def __init__(self, root, frame_ids: Sequence[str], cache: bool = True):
        self.root = Path(root)
        self.frame_ids = list(frame_ids)
        self.cache = cache
        self._frames: Dict[str, kitti_io.Frame] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.frame_ids)

    def get(self, frame_id: str) -> kitti_io.Frame:
        with self._lock:
            frame = self._frames.get(frame_id)
        if frame is None:
            frame = kitti_io.load_frame(self.root, frame_id)
            if self.cache:
                with self._lock:
                    self._frames[frame_id] = frame
        return frame


def make_batch(frames: Sequence[kitti_io.Frame], grid: GridSpec, class_names, input_size: int):
    images = images_to_tensor([f.image for f in frames], input_size)
    targets = np.stack([encode(boxes_for_training(f.labels, class_names), grid) for f in frames])
    return images, torch.from_numpy(targets).float()


def epoch_batches(source: FrameSource, epoch: int, seed: int, batch_size: int, grid: GridSpec,
                  class_names, input_size: int, augment: bool = False, flip_prob: float = 0.5,
                  contrast_prob: float = 0.5, contrast_range=(1.0, 1.5), prefetch: int = 2
                  ) -> Iterator[tuple]:
    """Yield ``(frame_ids, images, targets)`` for one epoch in a seeded order.

    Randomness is keyed on (seed, epoch, frame position), so the worker thread
    never changes what a run sees.
    """
    order = np.random.default_rng([seed, epoch]).permutation(len(source))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]

    def produce(chunk):
        frames = []
        for pos in chunk:
            frame = source.get(source.frame_ids[pos])
            if augment:
                rng = np.random.default_rng([seed, epoch, int(pos), 1])
                frame = kitti_io.augment_frame(frame, rng, flip_prob, contrast_prob, contrast_range)
            frames.append(frame)
        images, targets = make_batch(frames, grid, class_names, input_size)
        return [f.frame_id for f in frames], images, targets

    if prefetch <= 0:
        for chunk in chunks:
            yield produce(chunk)
        return

    q: "queue.Queue" = queue.Queue(maxsize=prefetch)
    stop = threading.Event()

    def worker():
        try:
            for chunk in chunks:
                item = produce(chunk)
                while not stop.is_set():
                    try:
                        q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            q.put(None)
        except BaseException as exc:  # surfaced in the consumer
            q.put(exc)

    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    try:
        while True:
            item = q.get()
            if item is None:
                break
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        thread.join(timeout=5)


def require_frames(ids, root, split_name):
    if not ids:
        raise ConfigError(f"no frames for split {split_name!r} under {root}")
    return ids
