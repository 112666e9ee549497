"""Compare the numba-compiled geometry kernels against the plain Python build.

Run: python3 benchmarks/bench_kernels.py --boxes 200 --repeats 3

Both builds come from the same source, so the script also checks that they
return identical IoU matrices and NMS keep lists.
"""
import argparse
import time

import numpy as np

from mononext import _kernels


def random_boxes(n, seed):
    r = np.random.default_rng(seed)
    out = np.empty((n, 7))
    out[:, 0] = r.uniform(-15, 15, n)
    out[:, 1] = r.uniform(0.5, 1.5, n)
    out[:, 2] = r.uniform(10, 40, n)
    out[:, 3] = r.uniform(1.4, 2.0, n)
    out[:, 4] = r.uniform(1.3, 1.8, n)
    out[:, 5] = r.uniform(3.2, 4.8, n)
    out[:, 6] = r.uniform(-np.pi, np.pi, n)
    return out


def best_of(fn, repeats):
    best, result = float("inf"), None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--boxes", type=int, default=200)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    boxes = random_boxes(args.boxes, args.seed)
    order = np.argsort(-np.random.default_rng(args.seed + 1).random(args.boxes)).astype(np.int64)
    py, nb = _kernels.python_kernels, _kernels.numba_kernels

    # compile once outside the timed region
    nb.bev_iou_matrix(boxes[:2], boxes[:2])
    nb.iou3d_matrix(boxes[:2], boxes[:2])
    nb.greedy_nms(boxes[:2], order[:2] % 2, 0.3)

    cases = [
        ("bev_iou_matrix", lambda k: k.bev_iou_matrix(boxes, boxes)),
        ("iou3d_matrix", lambda k: k.iou3d_matrix(boxes, boxes)),
        ("greedy_nms", lambda k: k.greedy_nms(boxes, order, 0.3)),
    ]
    print(f"{args.boxes} boxes, best of {args.repeats}")
    print(f"{'kernel':<16}{'python [s]':>12}{'numba [s]':>12}{'speedup':>10}  identical")
    for name, call in cases:
        t_py, r_py = best_of(lambda: call(py), args.repeats)
        t_nb, r_nb = best_of(lambda: call(nb), args.repeats)
        same = np.array_equal(r_py, r_nb)
        print(f"{name:<16}{t_py:>12.4f}{t_nb:>12.4f}{t_py / max(t_nb, 1e-12):>9.1f}x  {same}")


if __name__ == "__main__":
    main()
