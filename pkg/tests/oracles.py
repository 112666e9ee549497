"""Independent reference computations used only by the tests."""
import math

import numpy as np
from shapely.geometry import Polygon


def footprint(box):
    """BEV rectangle built from scratch: heading (cos, -sin) carries the length."""
    x, z, w, l, yaw = box.x, box.z, box.w, box.l, box.yaw
    hx, hz = math.cos(yaw), -math.sin(yaw)
    nx, nz = -hz, hx
    pts = []
    for a, b in ((1, 1), (1, -1), (-1, -1), (-1, 1)):
        pts.append((x + a * 0.5 * l * hx + b * 0.5 * w * nx, z + a * 0.5 * l * hz + b * 0.5 * w * nz))
    return pts


def shapely_bev_iou(a, b):
    pa, pb = Polygon(footprint(a)), Polygon(footprint(b))
    inter = pa.intersection(pb).area
    return inter / (pa.area + pb.area - inter)


def shapely_iou3d(a, b):
    pa, pb = Polygon(footprint(a)), Polygon(footprint(b))
    inter = pa.intersection(pb).area
    dy = max(0.0, min(a.y + a.h / 2, b.y + b.h / 2) - max(a.y - a.h / 2, b.y - b.h / 2))
    vi = inter * dy
    return vi / (a.volume + b.volume - vi)


def _inside(box, px, pz):
    dx, dz = px - box.x, pz - box.z
    hx, hz = math.cos(box.yaw), -math.sin(box.yaw)
    along = dx * hx + dz * hz
    across = -dx * hz + dz * hx
    return (np.abs(along) <= box.l / 2) & (np.abs(across) <= box.w / 2)


def monte_carlo_bev_iou(a, b, n=1_000_000, seed=0):
    """Sample the joint bounding square; IoU = hits in both / hits in either."""
    pts = np.array(footprint(a) + footprint(b))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    r = np.random.default_rng(seed)
    px = r.uniform(lo[0], hi[0], n)
    pz = r.uniform(lo[1], hi[1], n)
    ia, ib = _inside(a, px, pz), _inside(b, px, pz)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0
