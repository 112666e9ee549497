import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mononext import geometry, grid_codec
from mononext.geometry import BoxSpec
from mononext.grid_codec import GridSpec

G = GridSpec()


def scene(r, g=G, n_max=8):
    """Random objects, one per cell, kept off cell borders so flips stay inside a cell."""
    cells = r.choice(g.S * g.S, size=r.integers(1, n_max + 1), replace=False)
    cx, cz = g.cell_size
    out = []
    for k in cells:
        row, col = divmod(int(k), g.S)
        x = g.x_range[0] + (col + r.uniform(0.05, 0.95)) * cx
        z = g.z_range[0] + (row + r.uniform(0.05, 0.95)) * cz
        y = r.uniform(g.y_range[0] + 0.1, g.y_range[1] - 0.1)
        dims = tuple(r.uniform(0.1, 0.99) * m for m in g.dim_max)
        out.append(BoxSpec((x, y, z), dims, r.uniform(-math.pi, math.pi) or 0.1, int(r.integers(g.num_classes))))
    return out


class TestGridSpec:
    def test_defaults(self):
        assert G.shape == (15, 15, 9)
        assert G.cell_size == pytest.approx((110 / 15, 85 / 15))

    def test_channels_grow_with_classes(self):
        assert GridSpec(num_classes=3).channels == 11
        assert GridSpec(num_classes=3).yaw_index == 10

    @pytest.mark.parametrize("kw", [{"S": 0}, {"x_range": (1, 1)}, {"dim_max": (1, 0, 1)}, {"num_classes": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GridSpec(**kw)


class TestCellIndex:
    def test_center(self):
        assert grid_codec.cell_index(0.0, 42.5, G) == (7, 7)

    def test_far_edges_clamp(self):
        assert grid_codec.cell_index(55.0, 85.0, G) == (14, 14)
        assert grid_codec.cell_index(-55.0, 0.0, G) == (0, 0)

    @pytest.mark.parametrize("x, z", [(-55.01, 10), (55.01, 10), (0, -0.01), (0, 85.01)])
    def test_outside(self, x, z):
        assert grid_codec.cell_index(x, z, G) is None

    @given(x=st.floats(-55, 55), z=st.floats(0, 85))
    def test_contains_point(self, x, z):
        row, col = grid_codec.cell_index(x, z, G)
        cx, cz = G.cell_size
        assert -55 + col * cx - 1e-9 <= x <= -55 + (col + 1) * cx + 1e-9
        assert row * cz - 1e-9 <= z <= (row + 1) * cz + 1e-9


class TestEncode:
    def test_single_car(self):
        car = BoxSpec((0.0, 5.5, 42.5), (1.6, 1.5, 4.0), 0.0)
        t = grid_codec.encode([car], G)
        assert np.allclose(t[7, 7], [1, 1, 0.5, 0.5, 0.5, 0.4, 0.375, 0.5, 0.5], atol=1e-12)
        rest = t.copy()
        rest[7, 7] = 0
        assert not rest.any()

    def test_nearest_wins(self):
        far = BoxSpec((0.5, 1.0, 43.0), (1.6, 1.5, 4.0), 0.0)
        near = BoxSpec((-0.5, 1.0, 40.0), (1.6, 1.5, 4.0), 0.0)
        t = grid_codec.encode([far, near], G)
        assert grid_codec.decode_cell(t[7, 7], 7, 7, G).z == pytest.approx(40.0)

    def test_out_of_range_dropped(self):
        assert not grid_codec.encode([BoxSpec((0, 1, 90), (1, 1, 1), 0)], G).any()

    def test_ty_and_dims_clamped(self):
        t = grid_codec.encode([BoxSpec((0, 20.0, 40), (5, 1, 9), 0)], G)
        cell = t[grid_codec.cell_index(0, 40, G)]
        assert cell[G.pos_slice][1] == 1.0
        assert cell[G.dim_slice][0] == 1.0 and cell[G.dim_slice][2] == 1.0

    def test_bad_class(self):
        with pytest.raises(ValueError):
            grid_codec.encode([BoxSpec((0, 1, 40), (1, 1, 1), 0, class_id=1)], G)

    def test_yaw_encoding_range(self):
        assert grid_codec.encode_yaw(math.pi) == 1.0
        assert grid_codec.encode_yaw(0.0) == 0.5
        assert grid_codec.decode_yaw(grid_codec.encode_yaw(-3.0)) == pytest.approx(-3.0)


class TestDecode:
    def test_round_trip(self, rng):
        for _ in range(50):
            objs = scene(rng, GridSpec(num_classes=3))
            g = GridSpec(num_classes=3)
            out = grid_codec.decode(grid_codec.encode(objs, g), 0.5, g, nms_iou=None)
            assert len(out) == len(objs)
            key = lambda b: (b.z, b.x)
            for a, b in zip(sorted(objs, key=key), sorted(out, key=key)):
                assert np.allclose(a.center, b.center, atol=1e-6)
                assert np.allclose(a.dims, b.dims, atol=1e-6)
                assert abs(geometry.normalize_angle(a.yaw - b.yaw)) < 1e-6
                assert a.class_id == b.class_id

    def test_threshold_is_strict(self):
        t = np.zeros(G.shape)
        t[3, 4, 0] = 0.5
        t[3, 4, G.dim_slice] = 0.5
        assert grid_codec.decode(t, 0.5, G) == []
        assert len(grid_codec.decode(t, 0.49, G)) == 1

    def test_zero_dims_floored(self):
        t = np.zeros(G.shape)
        t[0, 0, 0] = 1.0
        (box,) = grid_codec.decode(t, 0.5, G)
        assert min(box.dims) == grid_codec.MIN_DIM

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            grid_codec.decode(np.zeros((15, 15, 8)), 0.5, G)

    def test_sorted_by_score(self, rng):
        t = rng.uniform(0.2, 1, G.shape)
        out = grid_codec.decode(t, 0.0, G, nms_iou=None)
        assert len(out) == 225
        assert [b.score for b in out] == sorted((b.score for b in out), reverse=True)


class TestNms:
    def test_adjacent_cells(self):
        # 4 m long cars 1 m apart along their length: BEV IoU 3/5
        a = BoxSpec((10.5, 1.0, 40.0), (1.6, 1.5, 4.0), 0.0, score=0.9)
        b = BoxSpec((11.5, 1.0, 40.0), (1.6, 1.5, 4.0), 0.0, score=0.8)
        assert grid_codec.cell_index(a.x, a.z, G) != grid_codec.cell_index(b.x, b.z, G)
        assert geometry.bev_iou(a, b) == pytest.approx(0.6)
        assert grid_codec.nms([b, a], 0.3) == [a]
        assert grid_codec.nms([b, a], 0.7) == [a, b]

    def test_paths_agree(self, kernels, rng):
        boxes = [BoxSpec((rng.uniform(-5, 5), 1, rng.uniform(20, 30)), (1.6, 1.5, 4), rng.uniform(-3, 3),
                         score=rng.uniform()) for _ in range(40)]
        kept = grid_codec.nms(boxes, 0.3)
        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                assert geometry.bev_iou(a, b) <= 0.3

    def test_empty(self):
        assert grid_codec.nms([], 0.3) == []


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_flip_equivariance(seed):
    r = np.random.default_rng(seed)
    objs = scene(r)
    flipped = [BoxSpec((-b.x, b.y, b.z), b.dims, math.pi - b.yaw, b.class_id) for b in objs]
    lhs = grid_codec.encode(flipped, G)
    rhs = grid_codec.flip_grid(grid_codec.encode(objs, G), G)
    assert np.allclose(lhs, rhs, atol=1e-9)
