"""KITTI object-detection files: labels, P2 calibration, splits and augmentation.

Label rows follow the devkit layout::

    type trunc occ alpha left top right bottom h w l x y z rotation_y [score]

``location`` is the bottom-center of the box; :func:`label_to_box` moves it
to the geometric center used by :mod:`mononext.geometry`.
"""
from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, ParseError
from .geometry import BoxSpec, box_corners_3d, normalize_angle

DONTCARE = "DontCare"
SENTINEL_ALPHA = -10.0

# neighbouring classes ignored (not penalised) when evaluating a class
NEIGHBOUR_CLASSES = {"Car": ("Van",), "Pedestrian": ("Person_sitting",)}


@dataclass(frozen=True)
class LabelRecord:
    class_name: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: tuple  # (left, top, right, bottom)
    dims: tuple  # (h, w, l)
    location: tuple  # (x, y, z), bottom center
    rotation_y: float
    score: Optional[float] = None

    @property
    def is_dontcare(self):
        return self.class_name == DONTCARE

    @property
    def height_px(self):
        return self.bbox2d[3] - self.bbox2d[1]


@dataclass(frozen=True)
class CalibBundle:
    P2: np.ndarray

    def __post_init__(self):
        P2 = np.asarray(self.P2, dtype=np.float64)
        if P2.shape != (3, 4) or not np.isfinite(P2).all():
            raise ParseError("P2 must be a finite 3x4 matrix")
        object.__setattr__(self, "P2", P2)

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project (N, 3) camera points to (N, 2) pixels. Points need z > 0."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        hom = np.hstack([pts, np.ones((pts.shape[0], 1))]) @ self.P2.T
        return hom[:, :2] / hom[:, 2:3]


@dataclass
class Frame:
    frame_id: str
    image: np.ndarray
    labels: List[LabelRecord]
    calib: Optional[CalibBundle] = None

    def __post_init__(self):
        if self.image is None or self.image.size == 0:
            raise ValueError(f"frame {self.frame_id}: empty image")


class Difficulty(enum.IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3


# (min box height px, max occlusion, max truncation)
DIFFICULTY_RULES = (
    (Difficulty.EASY, 40.0, 0, 0.15),
    (Difficulty.MODERATE, 25.0, 1, 0.30),
    (Difficulty.HARD, 25.0, 2, 0.50),
)


@dataclass(frozen=True)
class SplitSpec:
    train: List[str] = field(default_factory=list)
    val: List[str] = field(default_factory=list)


# ---------------------------------------------------------------- parsing


def _num(tok, line_no, idx, cast=float):
    try:
        val = float(tok)
    except ValueError:
        raise ParseError(f"line {line_no}: field {idx} is not numeric: {tok!r}") from None
    if cast is int:
        if val != int(val):
            raise ParseError(f"line {line_no}: field {idx} is not an integer: {tok!r}")
        return int(val)
    return val


def parse_label_line(line: str, line_no: int = 1) -> LabelRecord:
    """Parse one devkit row. Fields are reported 1-based in errors."""
    toks = line.split()
    if len(toks) not in (15, 16):
        raise ParseError(f"line {line_no}: expected 15 or 16 fields, got {len(toks)}")
    vals = [None] + [_num(t, line_no, i + 1) for i, t in enumerate(toks[1:], start=1)]
    occ = _num(toks[2], line_no, 3, cast=int)
    return LabelRecord(
        class_name=toks[0],
        truncation=vals[1],
        occlusion=occ,
        alpha=vals[3],
        bbox2d=tuple(vals[4:8]),
        dims=tuple(vals[8:11]),
        location=tuple(vals[11:14]),
        rotation_y=vals[14],
        score=vals[15] if len(toks) == 16 else None,
    )


def format_label_line(rec: LabelRecord, decimals: Optional[int] = None) -> str:
    """Inverse of :func:`parse_label_line`; ``decimals=None`` round-trips exactly."""

    def f(v):
        return repr(float(v)) if decimals is None else f"{float(v):.{decimals}f}"

    parts = [rec.class_name, f(rec.truncation), str(int(rec.occlusion)), f(rec.alpha)]
    parts += [f(v) for v in rec.bbox2d]
    parts += [f(v) for v in rec.dims]
    parts += [f(v) for v in rec.location]
    parts.append(f(rec.rotation_y))
    if rec.score is not None:
        parts.append(f(rec.score))
    return " ".join(parts)


def parse_label_file(path) -> List[LabelRecord]:
    records = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(parse_label_line(line, line_no))
            except ParseError as exc:
                raise ParseError(f"{path}: {exc}") from None
    return records


def write_label_file(path, records: Iterable[LabelRecord], decimals: Optional[int] = None):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(format_label_line(rec, decimals) + "\n")


def parse_calib(path) -> CalibBundle:
    with open(path) as fh:
        for line in fh:
            if line.startswith("P2:"):
                toks = line[3:].split()
                if len(toks) != 12:
                    raise ParseError(f"{path}: P2 needs 12 values, got {len(toks)}")
                try:
                    vals = [float(t) for t in toks]
                except ValueError:
                    raise ParseError(f"{path}: non-numeric P2 entry") from None
                return CalibBundle(np.array(vals).reshape(3, 4))
    raise ParseError(f"{path}: no 'P2:' entry")


def write_calib(path, calib: CalibBundle):
    with open(path, "w") as fh:
        fh.write("P2: " + " ".join(repr(float(v)) for v in calib.P2.ravel()) + "\n")


# ---------------------------------------------------------------- difficulty


def assign_difficulty(rec: LabelRecord) -> Difficulty:
    height = rec.height_px
    for level, min_h, max_occ, max_trunc in DIFFICULTY_RULES:
        if height >= min_h and rec.occlusion <= max_occ and rec.truncation <= max_trunc:
            return level
    return Difficulty.IGNORED


# ---------------------------------------------------------------- dataset layout


def dataset_dirs(root) -> dict:
    """Locate ``image_2``/``label_2``/``calib`` under ``root`` or ``root/training``."""
    root = Path(root)
    base = root / "training" if (root / "training" / "label_2").is_dir() else root
    return {
        "image": base / "image_2",
        "label": base / "label_2",
        "calib": base / "calib",
        "image_sets": root / "ImageSets",
    }


def available_frames(root) -> List[str]:
    d = dataset_dirs(root)
    if not d["label"].is_dir():
        return []
    return sorted(p.stem for p in d["label"].glob("*.txt"))


def _read_ids(path) -> List[str]:
    with open(path) as fh:
        return [ln.strip() for ln in fh if ln.strip()]


def make_split(image_set_dir, available: Optional[Iterable[str]] = None) -> SplitSpec:
    """Read ``train.txt``/``val.txt`` and keep only ``available`` frames when given."""
    image_set_dir = Path(image_set_dir)
    paths = [image_set_dir / "train.txt", image_set_dir / "val.txt"]
    for p in paths:
        if not p.is_file():
            raise ConfigError(f"missing split file {p}")
    train, val = (_read_ids(p) for p in paths)
    if available is not None:
        avail = set(available)
        train = [i for i in train if i in avail]
        val = [i for i in val if i in avail]
    overlap = set(train) & set(val)
    if overlap:
        raise ConfigError(f"train and val share {len(overlap)} frame ids")
    return SplitSpec(train=train, val=val)


def seeded_split(frame_ids: Sequence[str], train_fraction: float = 0.8, seed: int = 0) -> SplitSpec:
    ids = sorted(frame_ids)
    random.Random(seed).shuffle(ids)
    n_train = int(round(train_fraction * len(ids)))
    return SplitSpec(train=sorted(ids[:n_train]), val=sorted(ids[n_train:]))


def write_split(image_set_dir, split: SplitSpec):
    image_set_dir = Path(image_set_dir)
    image_set_dir.mkdir(parents=True, exist_ok=True)
    for name, ids in (("train", split.train), ("val", split.val)):
        with open(image_set_dir / f"{name}.txt", "w") as fh:
            fh.writelines(f"{i}\n" for i in ids)


def load_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_frame(root, frame_id: str) -> Frame:
    d = dataset_dirs(root)
    image_path = d["image"] / f"{frame_id}.png"
    if not image_path.is_file():
        raise ConfigError(f"missing image {image_path}")
    calib_path = d["calib"] / f"{frame_id}.txt"
    calib = parse_calib(calib_path) if calib_path.is_file() else None
    label_path = d["label"] / f"{frame_id}.txt"
    labels = parse_label_file(label_path) if label_path.is_file() else []
    return Frame(frame_id, load_image(image_path), labels, calib)


# ---------------------------------------------------------------- label <-> box


def label_to_box(rec: LabelRecord, class_id: int = 0) -> BoxSpec:
    h, w, l = rec.dims
    x, y, z = rec.location
    return BoxSpec((x, y - 0.5 * h, z), (w, h, l), rec.rotation_y, class_id, rec.score)


def box_to_label(box: BoxSpec, class_name: str, calib: Optional[CalibBundle] = None,
                 image_size: Optional[tuple] = None) -> LabelRecord:
    """KITTI row for a box; the 2D box is the clipped projection when ``calib`` is known."""
    x, y, z = box.center
    bbox = (0.0, 0.0, 0.0, 0.0)
    if calib is not None:
        corners = box_corners_3d(box)
        if (corners[:, 2] > 0.1).all():
            uv = calib.project(corners)
            left, top = uv.min(axis=0)
            right, bottom = uv.max(axis=0)
            if image_size is not None:
                width, height = image_size
                left, right = np.clip([left, right], 0, width - 1)
                top, bottom = np.clip([top, bottom], 0, height - 1)
            bbox = (float(left), float(top), float(right), float(bottom))
    alpha = normalize_angle(box.yaw - math.atan2(x, z))
    return LabelRecord(
        class_name=class_name,
        truncation=0.0,
        occlusion=0,
        alpha=alpha,
        bbox2d=bbox,
        dims=(box.h, box.w, box.l),
        location=(x, y + 0.5 * box.h, z),
        rotation_y=box.yaw,
        score=box.score,
    )


# ---------------------------------------------------------------- augmentation


def _flip_label(rec: LabelRecord, width: float) -> LabelRecord:
    left, top, right, bottom = rec.bbox2d
    bbox = (width - right, top, width - left, bottom)
    if rec.is_dontcare:
        return replace(rec, bbox2d=bbox)
    x, y, z = rec.location
    alpha = rec.alpha if rec.alpha == SENTINEL_ALPHA else normalize_angle(math.pi - rec.alpha)
    return replace(
        rec,
        bbox2d=bbox,
        location=(-x, y, z),
        alpha=alpha,
        rotation_y=normalize_angle(math.pi - rec.rotation_y),
    )


def flip_frame(frame: Frame) -> Frame:
    """Mirror the image left-right and every label with it."""
    width = float(frame.image.shape[1])
    return Frame(
        frame.frame_id,
        np.ascontiguousarray(frame.image[:, ::-1]),
        [_flip_label(r, width) for r in frame.labels],
        frame.calib,
    )


def adjust_contrast(image: np.ndarray, factor: float) -> np.ndarray:
    """Scale each channel about its image mean; clamps to the dtype's pixel range."""
    if not (math.isfinite(factor) and factor > 0):
        raise ValueError(f"contrast factor must be positive and finite, got {factor}")
    if factor == 1.0:
        return image.copy()
    img = np.asarray(image)
    hi = 255.0 if np.issubdtype(img.dtype, np.integer) else 1.0
    work = img.astype(np.float64)
    mean = work.reshape(-1, work.shape[-1]).mean(axis=0) if work.ndim == 3 else work.mean()
    out = np.clip(mean + factor * (work - mean), 0.0, hi)
    if np.issubdtype(img.dtype, np.integer):
        return np.rint(out).astype(img.dtype)
    return out.astype(img.dtype)


def augment_frame(frame: Frame, rng: np.random.Generator, flip_prob=0.5, contrast_prob=0.5,
                  contrast_range=(1.0, 1.5)) -> Frame:
    if rng.random() < flip_prob:
        frame = flip_frame(frame)
    if rng.random() < contrast_prob:
        factor = rng.uniform(*contrast_range)
        frame = Frame(frame.frame_id, adjust_contrast(frame.image, factor), frame.labels, frame.calib)
    return frame

