"""Scalar geometry kernels, built twice: interpreted and numba-compiled.

Boxes are rows ``[x, y, z, w, h, l, yaw]`` in camera coordinates with ``y``
the geometric center. Footprints live in the (x, z) plane.
"""
from types import SimpleNamespace

import numpy as np

from . import _accel


def build(decorate):
    @decorate
    def bev_corners(x, z, w, l, yaw):
        # heading (cos, -sin) carries the length, its left normal the width
        c = np.cos(yaw)
        s = np.sin(yaw)
        hl = 0.5 * l
        hw = 0.5 * w
        out = np.empty((4, 2))
        signs_a = (1.0, 1.0, -1.0, -1.0)
        signs_b = (-1.0, 1.0, 1.0, -1.0)
        for k in range(4):
            a = signs_a[k] * hl
            b = signs_b[k] * hw
            out[k, 0] = x + a * c + b * s
            out[k, 1] = z - a * s + b * c
        return out

    @decorate
    def polygon_area(poly, n):
        acc = 0.0
        for i in range(n):
            j = (i + 1) % n
            acc += poly[i, 0] * poly[j, 1] - poly[j, 0] * poly[i, 1]
        return 0.5 * acc

    @decorate
    def clip_area(subject, n_subject, clip, n_clip):
        """Area of convex ``subject`` clipped by convex CCW ``clip``."""
        cap = 2 * (n_subject + n_clip) + 4
        cur = np.empty((cap, 2))
        nxt = np.empty((cap, 2))
        for i in range(n_subject):
            cur[i, 0] = subject[i, 0]
            cur[i, 1] = subject[i, 1]
        n_cur = n_subject
        for e in range(n_clip):
            if n_cur == 0:
                break
            ax = clip[e, 0]
            az = clip[e, 1]
            bx = clip[(e + 1) % n_clip, 0]
            bz = clip[(e + 1) % n_clip, 1]
            ex = bx - ax
            ez = bz - az
            n_nxt = 0
            for i in range(n_cur):
                px = cur[i, 0]
                pz = cur[i, 1]
                qx = cur[(i + 1) % n_cur, 0]
                qz = cur[(i + 1) % n_cur, 1]
                sp = ex * (pz - az) - ez * (px - ax)
                sq = ex * (qz - az) - ez * (qx - ax)
                if sp >= 0.0:
                    nxt[n_nxt, 0] = px
                    nxt[n_nxt, 1] = pz
                    n_nxt += 1
                    if sq < 0.0:
                        t = sp / (sp - sq)
                        nxt[n_nxt, 0] = px + t * (qx - px)
                        nxt[n_nxt, 1] = pz + t * (qz - pz)
                        n_nxt += 1
                elif sq >= 0.0:
                    t = sp / (sp - sq)
                    nxt[n_nxt, 0] = px + t * (qx - px)
                    nxt[n_nxt, 1] = pz + t * (qz - pz)
                    n_nxt += 1
            tmp = cur
            cur = nxt
            nxt = tmp
            n_cur = n_nxt
        if n_cur < 3:
            return 0.0
        area = polygon_area(cur, n_cur)
        return area if area > 0.0 else 0.0

    @decorate
    def _first_is_smaller(a, b):
        for k in range(a.shape[0]):
            if a[k] < b[k]:
                return True
            if a[k] > b[k]:
                return False
        return True

    @decorate
    def bev_intersection(a, b):
        # fixed argument order keeps f(a, b) == f(b, a) bit for bit
        if not _first_is_smaller(a, b):
            t = a
            a = b
            b = t
        pa = bev_corners(a[0], a[2], a[3], a[5], a[6])
        pb = bev_corners(b[0], b[2], b[3], b[5], b[6])
        return clip_area(pa, 4, pb, 4)

    @decorate
    def vertical_overlap(a, b):
        lo = max(a[1] - 0.5 * a[4], b[1] - 0.5 * b[4])
        hi = min(a[1] + 0.5 * a[4], b[1] + 0.5 * b[4])
        return hi - lo if hi > lo else 0.0

    @decorate
    def _same(a, b):
        for k in range(a.shape[0]):
            if a[k] != b[k]:
                return False
        return True

    @decorate
    def _same_footprint(a, b):
        return a[0] == b[0] and a[2] == b[2] and a[3] == b[3] and a[5] == b[5] and a[6] == b[6]

    @decorate
    def bev_iou(a, b):
        if _same_footprint(a, b):
            return 1.0
        inter = bev_intersection(a, b)
        if inter <= 0.0:
            return 0.0
        union = a[3] * a[5] + b[3] * b[5] - inter
        iou = inter / union
        return iou if iou < 1.0 else 1.0

    @decorate
    def iou3d(a, b):
        if _same(a, b):
            return 1.0
        dy = vertical_overlap(a, b)
        if dy <= 0.0:
            return 0.0
        inter = bev_intersection(a, b) * dy
        if inter <= 0.0:
            return 0.0
        union = a[3] * a[4] * a[5] + b[3] * b[4] * b[5] - inter
        iou = inter / union
        return iou if iou < 1.0 else 1.0

    @decorate
    def bev_iou_matrix(boxes_a, boxes_b):
        out = np.zeros((boxes_a.shape[0], boxes_b.shape[0]))
        for i in range(boxes_a.shape[0]):
            for j in range(boxes_b.shape[0]):
                out[i, j] = bev_iou(boxes_a[i], boxes_b[j])
        return out

    @decorate
    def iou3d_matrix(boxes_a, boxes_b):
        out = np.zeros((boxes_a.shape[0], boxes_b.shape[0]))
        for i in range(boxes_a.shape[0]):
            for j in range(boxes_b.shape[0]):
                out[i, j] = iou3d(boxes_a[i], boxes_b[j])
        return out

    @decorate
    def greedy_nms(boxes, order, thresh):
        """Indices kept by greedy rotated-BEV suppression, visiting ``order``."""
        n = order.shape[0]
        suppressed = np.zeros(n, dtype=np.bool_)
        keep = np.empty(n, dtype=np.int64)
        n_keep = 0
        for ii in range(n):
            if suppressed[ii]:
                continue
            i = order[ii]
            keep[n_keep] = i
            n_keep += 1
            for jj in range(ii + 1, n):
                if not suppressed[jj] and bev_iou(boxes[i], boxes[order[jj]]) > thresh:
                    suppressed[jj] = True
        return keep[:n_keep]

    return SimpleNamespace(
        bev_corners=bev_corners,
        polygon_area=polygon_area,
        clip_area=clip_area,
        bev_intersection=bev_intersection,
        vertical_overlap=vertical_overlap,
        bev_iou=bev_iou,
        iou3d=iou3d,
        bev_iou_matrix=bev_iou_matrix,
        iou3d_matrix=iou3d_matrix,
        greedy_nms=greedy_nms,
    )


python_kernels = build(_accel.no_jit)
numba_kernels = build(_accel.njit)
active = numba_kernels if _accel.USE_NUMBA else python_kernels
