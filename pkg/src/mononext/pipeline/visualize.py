"""Render detections: projected wireframes on the image plus a bird's-eye view."""
from __future__ import annotations

from pathlib import Path
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .. import kitti_io  # noqa: E402
from ..geometry import BoxSpec, box_corners_3d, box_to_bev_corners  # noqa: E402

GT_COLOUR = "green"
PRED_COLOUR = "blue"
EGO_COLOUR = "black"
MIN_DEPTH = 0.1

# wireframe edges over box_corners_3d ordering (top face 0-3, bottom 4-7)
EDGES = ((0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7))


def projectable(box: BoxSpec) -> bool:
    return bool((box_corners_3d(box)[:, 2] > MIN_DEPTH).all())


def _draw_wireframe(ax, box, calib, colour):
    uv = calib.project(box_corners_3d(box))
    for a, b in EDGES:
        ax.plot(uv[[a, b], 0], uv[[a, b], 1], color=colour, linewidth=1.2)
    # heading edge drawn thicker on the front face
    ax.plot(uv[[0, 1], 0], uv[[0, 1], 1], color=colour, linewidth=2.5)


def _draw_bev(ax, box, colour, style="-"):
    pts = box_to_bev_corners(box)
    closed = np.vstack([pts, pts[:1]])
    ax.plot(closed[:, 0], closed[:, 1], style, color=colour, linewidth=1.5)
    front = pts[:2].mean(axis=0)
    ax.plot([box.x, front[0]], [box.z, front[1]], style, color=colour, linewidth=1.0)


def visualize(frame: kitti_io.Frame, dets: Sequence[BoxSpec], gts: Sequence[BoxSpec], out_dir,
              bev_range=((-40.0, 40.0), (0.0, 85.0))) -> List[Path]:
    """Write ``<id>_image.png`` and ``<id>_bev.png``; boxes behind the camera are BEV-only."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    h, w = frame.image.shape[:2]
    fig, ax = plt.subplots(figsize=(w / 100, h / 100), dpi=100)
    ax.imshow(frame.image)
    ax.set_xlim(0, w)
    ax.set_ylim(h, 0)
    ax.axis("off")
    if frame.calib is not None:
        for boxes, colour in ((gts, GT_COLOUR), (dets, PRED_COLOUR)):
            for box in boxes:
                if projectable(box):
                    _draw_wireframe(ax, box, frame.calib, colour)
    path = out_dir / f"{frame.frame_id}_image.png"
    fig.savefig(path, bbox_inches="tight", pad_inches=0)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(5, 6), dpi=100)
    for box in gts:
        _draw_bev(ax, box, GT_COLOUR)
    for box in dets:
        _draw_bev(ax, box, PRED_COLOUR, "--")
    ax.plot([0, -1.0, 1.0, 0], [1.5, -1.5, -1.5, 1.5], color=EGO_COLOUR, linewidth=2)
    ax.plot(0, 0, "o", color=EGO_COLOUR)
    (xlo, xhi), (zlo, zhi) = bev_range
    ax.set_xlim(xlo, xhi)
    ax.set_ylim(min(zlo, -3.0), zhi)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.grid(True, linewidth=0.3)
    path = out_dir / f"{frame.frame_id}_bev.png"
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    paths.append(path)
    return paths
