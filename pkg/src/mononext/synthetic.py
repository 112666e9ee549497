"""Synthetic KITTI-layout scenes for smoke tests and overfit checks.

Cars are rendered as shaded 3D boxes projected through a KITTI-like P2, so
the image actually carries the geometry the labels describe.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import kitti_io
from .geometry import BoxSpec, bev_iou, box_corners_3d, normalize_angle
from .grid_codec import GridSpec, cell_index

KITTI_P2 = np.array(
    [
        [721.5377, 0.0, 609.5593, 44.85728],
        [0.0, 721.5377, 172.854, 0.2163791],
        [0.0, 0.0, 1.0, 0.002745884],
    ]
)
IMAGE_SIZE = (1242, 375)

# (corner indices, shade) per face; top face uses 0-3, bottom 4-7
_FACES = (
    ((0, 1, 5, 4), 1.0),  # front (+heading)
    ((1, 2, 6, 5), 0.7),
    ((2, 3, 7, 6), 0.55),  # back
    ((3, 0, 4, 7), 0.7),
    ((0, 1, 2, 3), 0.85),  # top
)


def _background(rng, width, height, horizon):
    img = np.empty((height, width, 3))
    rows = np.arange(height)[:, None]
    sky = np.array([150.0, 180.0, 220.0])
    road = np.array([90.0, 90.0, 95.0])
    t = np.clip((rows - horizon) / max(1, height - horizon), 0, 1)
    img[:] = np.where(rows[..., None] < horizon, sky, road * (0.8 + 0.4 * t[..., None]))
    img += rng.normal(0, 6, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def random_cars(rng, grid: GridSpec, n_min=1, n_max=4, max_tries=200):
    """Non-overlapping cars in distinct grid cells, all in front of the camera."""
    cars = []
    cells = set()
    target = rng.integers(n_min, n_max + 1)
    for _ in range(max_tries):
        if len(cars) >= target:
            break
        h, w, l = rng.uniform(1.4, 1.7), rng.uniform(1.5, 1.8), rng.uniform(3.5, 4.5)
        x, z = rng.uniform(-12, 12), rng.uniform(7, 50)
        bottom = 1.65 + rng.normal(0, 0.05)
        yaw = normalize_angle(rng.uniform(-math.pi, math.pi))
        box = BoxSpec((x, bottom - 0.5 * h, z), (w, h, l), yaw)
        cell = cell_index(x, z, grid)
        corners = box_corners_3d(box)
        if cell is None or cell in cells or (corners[:, 2] < 2.0).any():
            continue
        u = KITTI_P2 @ np.array([x, bottom, z, 1.0])
        if not 0 < u[0] / u[2] < IMAGE_SIZE[0]:
            continue
        if any(bev_iou(box, c) > 0 for c in cars):
            continue
        cars.append(box)
        cells.add(cell)
    return cars


def render(cars, rng, calib: kitti_io.CalibBundle, size=IMAGE_SIZE):
    width, height = size
    horizon = int(calib.P2[1, 2])
    canvas = Image.fromarray(_background(rng, width, height, horizon))
    draw = ImageDraw.Draw(canvas)
    for box in sorted(cars, key=lambda b: -b.z):
        corners = box_corners_3d(box)
        uv = calib.project(corners)
        base = rng.uniform(60, 230, 3)
        faces = sorted(_FACES, key=lambda f: -corners[list(f[0]), 2].mean())
        for idx, shade in faces:
            colour = tuple(int(c * shade) for c in base)
            if idx == _FACES[0][0]:
                colour = (230, 40, 40)  # marks the heading
            draw.polygon([tuple(uv[i]) for i in idx], fill=colour, outline=(20, 20, 20))
    return np.asarray(canvas)


def car_label(box: BoxSpec, calib: kitti_io.CalibBundle, size=IMAGE_SIZE) -> kitti_io.LabelRecord:
    width, height = size
    uv = calib.project(box_corners_3d(box))
    left, top = uv.min(axis=0)
    right, bottom = uv.max(axis=0)
    full = max(1e-6, (right - left) * (bottom - top))
    cl, cr = np.clip([left, right], 0, width - 1)
    ct, cb = np.clip([top, bottom], 0, height - 1)
    trunc = float(np.clip(1.0 - (cr - cl) * (cb - ct) / full, 0.0, 1.0))
    rec = kitti_io.box_to_label(box, "Car")
    return kitti_io.LabelRecord("Car", round(trunc, 2), 0, rec.alpha, (float(cl), float(ct), float(cr), float(cb)),
                                rec.dims, rec.location, rec.rotation_y)


def make_frame(frame_id: str, rng, grid: GridSpec = GridSpec(), **car_kw) -> kitti_io.Frame:
    calib = kitti_io.CalibBundle(KITTI_P2.copy())
    cars = random_cars(rng, grid, **car_kw)
    image = render(cars, rng, calib)
    return kitti_io.Frame(frame_id, image, [car_label(c, calib) for c in cars], calib)


def write_dataset(root, n_frames: int, seed: int = 0, train_fraction: float = 0.8,
                  grid: GridSpec = GridSpec(), **car_kw) -> kitti_io.SplitSpec:
    """Write ``training/{image_2,label_2,calib}`` plus ``ImageSets`` under ``root``."""
    root = Path(root)
    base = root / "training"
    for sub in ("image_2", "label_2", "calib"):
        (base / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids = []
    for i in range(n_frames):
        fid = f"{i:06d}"
        frame = make_frame(fid, rng, grid, **car_kw)
        Image.fromarray(frame.image).save(base / "image_2" / f"{fid}.png")
        kitti_io.write_label_file(base / "label_2" / f"{fid}.txt", frame.labels, decimals=4)
        kitti_io.write_calib(base / "calib" / f"{fid}.txt", frame.calib)
        ids.append(fid)
    split = kitti_io.seeded_split(ids, train_fraction, seed)
    kitti_io.write_split(root / "ImageSets", split)
    return split
