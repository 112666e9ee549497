import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mononext import kitti_io
from mononext.errors import ConfigError, ParseError
from mononext.kitti_io import Difficulty, LabelRecord

CAR_LINE = "Car 0.00 0 -1.58 587.0 173.3 614.1 200.1 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59"
DONTCARE_LINE = "DontCare -1 -1 -10 500 160 520 170 -1 -1 -1 -1000 -1000 -1000 -10"


def make_record(height=50.0, occ=0, trunc=0.0, x=1.0, ry=0.3, width=1242.0):
    return LabelRecord("Car", trunc, occ, -0.2, (100.0, 150.0, 180.0, 150.0 + height),
                       (1.5, 1.6, 3.9), (x, 1.7, 20.0), ry)


class TestParseLabel:
    def test_car_line_positional(self):
        toks = CAR_LINE.split()
        rec = kitti_io.parse_label_line(CAR_LINE)
        assert rec.class_name == toks[0] == "Car"
        assert rec.truncation == float(toks[1]) == 0.0
        assert rec.occlusion == 0
        assert rec.alpha == -1.58
        assert rec.bbox2d == (587.0, 173.3, 614.1, 200.1)
        assert rec.dims == (1.65, 1.67, 3.64)
        assert rec.location == (-0.65, 1.71, 46.70)
        assert rec.rotation_y == -1.59
        assert rec.score is None

    def test_dontcare_sentinels_preserved(self):
        rec = kitti_io.parse_label_line(DONTCARE_LINE)
        assert rec.is_dontcare
        assert rec.occlusion == -1
        assert rec.dims == (-1.0, -1.0, -1.0)
        assert rec.location == (-1000.0, -1000.0, -1000.0)
        assert rec.rotation_y == -10.0

    def test_score_field(self):
        rec = kitti_io.parse_label_line(CAR_LINE + " 0.87")
        assert rec.score == 0.87

    def test_fourteen_fields_rejected(self):
        with pytest.raises(ParseError, match="15 or 16"):
            kitti_io.parse_label_line(" ".join(CAR_LINE.split()[:14]))

    def test_non_numeric_field_named(self):
        bad = CAR_LINE.split()
        bad[9] = "abc"
        with pytest.raises(ParseError, match="line 4: field 10"):
            kitti_io.parse_label_line(" ".join(bad), line_no=4)

    def test_round_trip(self):
        rec = kitti_io.parse_label_line(CAR_LINE + " 0.5")
        assert kitti_io.parse_label_line(kitti_io.format_label_line(rec)) == rec


@settings(max_examples=60, deadline=None)
@given(
    vals=st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=13, max_size=13),
    occ=st.integers(0, 3),
    score=st.one_of(st.none(), st.floats(0, 1)),
)
def test_parse_serialize_parse_identity(vals, occ, score):
    rec = LabelRecord("Pedestrian", vals[0], occ, vals[1], tuple(vals[2:6]), tuple(vals[6:9]),
                      tuple(vals[9:12]), vals[12], score)
    assert kitti_io.parse_label_line(kitti_io.format_label_line(rec)) == rec


class TestLabelFile:
    def test_empty(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("")
        assert kitti_io.parse_label_file(p) == []

    def test_order_preserved(self, tmp_path):
        p = tmp_path / "a.txt"
        lines = [CAR_LINE, DONTCARE_LINE, CAR_LINE.replace("Car", "Van")]
        p.write_text("\n".join(lines) + "\n\n")
        recs = kitti_io.parse_label_file(p)
        assert [r.class_name for r in recs] == ["Car", "DontCare", "Van"]

    def test_error_cites_line(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text(f"{CAR_LINE}\n{CAR_LINE}\nCar 1 2\n")
        with pytest.raises(ParseError, match="line 3"):
            kitti_io.parse_label_file(p)


class TestCalib:
    def test_row_major(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("P0: 1 2 3 4 5 6 7 8 9 10 11 12\nP2: 721.5 0 609.6 44.9 0 721.5 172.9 0.2 0 0 1 0.003\n")
        P2 = kitti_io.parse_calib(p).P2
        flat = [721.5, 0, 609.6, 44.9, 0, 721.5, 172.9, 0.2, 0, 0, 1, 0.003]
        for i in range(3):
            for j in range(4):
                assert P2[i, j] == flat[4 * i + j]

    def test_missing_key(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("P0: 1 2 3 4 5 6 7 8 9 10 11 12\n")
        with pytest.raises(ParseError):
            kitti_io.parse_calib(p)

    def test_eleven_numbers(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("P2: 1 2 3 4 5 6 7 8 9 10 11\n")
        with pytest.raises(ParseError, match="12"):
            kitti_io.parse_calib(p)

    def test_projection(self):
        calib = kitti_io.CalibBundle(np.hstack([np.eye(3), np.zeros((3, 1))]))
        assert np.allclose(calib.project([[2.0, 4.0, 2.0]]), [[1.0, 2.0]])


class TestDifficulty:
    @pytest.mark.parametrize(
        "height, occ, trunc, expected",
        [
            (50, 0, 0.0, Difficulty.EASY),
            (30, 1, 0.2, Difficulty.MODERATE),
            (20, 0, 0.0, Difficulty.IGNORED),
            (50, 2, 0.0, Difficulty.HARD),
            (50, 0, 0.4, Difficulty.HARD),
            (40, 0, 0.15, Difficulty.EASY),
            (50, 3, 0.0, Difficulty.IGNORED),
            (50, 0, 0.6, Difficulty.IGNORED),
        ],
    )
    def test_rules(self, height, occ, trunc, expected):
        assert kitti_io.assign_difficulty(make_record(height, occ, trunc)) == expected

    @settings(max_examples=200, deadline=None)
    @given(h=st.floats(0, 100), occ=st.integers(0, 3), trunc=st.floats(0, 1),
           dh=st.floats(0, 50), docc=st.integers(0, 3), dtrunc=st.floats(0, 1))
    def test_monotone(self, h, occ, trunc, dh, docc, dtrunc):
        base = kitti_io.assign_difficulty(make_record(h, occ, trunc))
        easier = kitti_io.assign_difficulty(make_record(h + dh, max(0, occ - docc), max(0.0, trunc - dtrunc)))
        assert easier <= base


class TestSplit:
    def _write(self, d, train, val):
        d.mkdir(parents=True, exist_ok=True)
        (d / "train.txt").write_text("\n".join(train) + "\n")
        (d / "val.txt").write_text("\n".join(val) + "\n")

    def test_full_kitti_sizes(self, tmp_path):
        ids = [f"{i:06d}" for i in range(7481)]
        rng = np.random.default_rng(0)
        perm = rng.permutation(7481)
        train = sorted(ids[i] for i in perm[:3712])
        val = sorted(ids[i] for i in perm[3712:])
        self._write(tmp_path / "ImageSets", train, val)
        split = kitti_io.make_split(tmp_path / "ImageSets", ids)
        assert (len(split.train), len(split.val)) == (3712, 3769)

    def test_subset_intersection(self, tmp_path):
        self._write(tmp_path / "s", [f"{i:06d}" for i in range(0, 40, 2)], [f"{i:06d}" for i in range(1, 40, 2)])
        avail = [f"{i:06d}" for i in range(20)]
        split = kitti_io.make_split(tmp_path / "s", avail)
        assert set(split.train) <= set(avail) and set(split.val) <= set(avail)
        assert not set(split.train) & set(split.val)
        assert len(split.train) + len(split.val) == 20

    def test_empty_data(self, tmp_path):
        self._write(tmp_path / "s", ["000001"], ["000002"])
        split = kitti_io.make_split(tmp_path / "s", [])
        assert split.train == [] and split.val == []

    def test_missing_files(self, tmp_path):
        with pytest.raises(ConfigError):
            kitti_io.make_split(tmp_path / "nothing")

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(0, 60), frac=st.floats(0, 1), seed=st.integers(0, 1000))
    def test_seeded_split_disjoint(self, n, frac, seed):
        ids = [f"{i:06d}" for i in range(n)]
        split = kitti_io.seeded_split(ids, frac, seed)
        assert not set(split.train) & set(split.val)
        assert sorted(split.train + split.val) == ids


class TestFlip:
    def frame(self, labels, width=10):
        img = np.arange(4 * width * 3, dtype=np.uint8).reshape(4, width, 3)
        return kitti_io.Frame("000001", img, labels)

    def test_heading_mirror(self):
        rec = make_record(x=2.0, ry=0.0)
        out = kitti_io.flip_frame(self.frame([rec])).labels[0]
        assert out.location[0] == -2.0
        assert out.rotation_y == pytest.approx(math.pi)
        # mirrored heading vector (cos, -sin) with x negated
        assert math.cos(out.rotation_y) == pytest.approx(-math.cos(0.0))
        assert -math.sin(out.rotation_y) == pytest.approx(-math.sin(0.0), abs=1e-12)

    def test_fixed_point(self):
        rec = make_record(x=0.0, ry=math.pi / 2)
        out = kitti_io.flip_frame(self.frame([rec])).labels[0]
        assert out.location[0] == 0.0
        assert out.rotation_y == pytest.approx(math.pi / 2, abs=1e-15)

    def test_bbox_mirrored_about_width(self):
        rec = make_record()
        out = kitti_io.flip_frame(self.frame([rec], width=1242)).labels[0]
        assert out.bbox2d == (1242 - 180.0, 150.0, 1242 - 100.0, 200.0)
        assert out.dims == rec.dims

    def test_dontcare_keeps_sentinels(self):
        rec = kitti_io.parse_label_line(DONTCARE_LINE)
        out = kitti_io.flip_frame(self.frame([rec], width=1242)).labels[0]
        assert out.location == rec.location and out.rotation_y == rec.rotation_y

    @settings(max_examples=100, deadline=None)
    @given(x=st.floats(-50, 50), ry=st.floats(-math.pi, math.pi), left=st.floats(0, 600),
           w=st.floats(1, 600))
    def test_involution(self, x, ry, left, w):
        rec = LabelRecord("Car", 0.0, 0, 0.3, (left, 10.0, left + w, 60.0), (1.5, 1.6, 4.0), (x, 1.7, 30.0),
                          kitti_io.normalize_angle(ry) if ry > -math.pi else math.pi)
        f = self.frame([rec], width=1242)
        back = kitti_io.flip_frame(kitti_io.flip_frame(f))
        assert np.array_equal(back.image, f.image)
        out = back.labels[0]
        assert out.location[0] == pytest.approx(rec.location[0], abs=1e-9)
        assert abs(kitti_io.normalize_angle(out.rotation_y - rec.rotation_y)) < 1e-9
        assert np.allclose(out.bbox2d, rec.bbox2d, atol=1e-9, rtol=0)


class TestContrast:
    def test_identity(self):
        img = np.random.default_rng(0).integers(0, 256, (5, 6, 3), dtype=np.uint8)
        assert np.array_equal(kitti_io.adjust_contrast(img, 1.0), img)

    @pytest.mark.parametrize("factor", [0.3, 1.7, 4.0])
    def test_constant_image(self, factor):
        img = np.full((4, 4, 3), 77, dtype=np.uint8)
        assert np.array_equal(kitti_io.adjust_contrast(img, factor), img)
        fimg = np.full((4, 4, 3), 0.3, dtype=np.float32)
        assert np.array_equal(kitti_io.adjust_contrast(fimg, factor), fimg)

    def test_two_pixels(self):
        img = np.array([[[100], [150]]], dtype=np.uint8)
        out = kitti_io.adjust_contrast(img, 2.0)
        assert out.ravel().tolist() == [75, 175]

    def test_clamped(self):
        img = np.array([[[0], [255]]], dtype=np.uint8)
        assert kitti_io.adjust_contrast(img, 3.0).ravel().tolist() == [0, 255]

    @pytest.mark.parametrize("factor", [0.0, -1.0, float("nan"), float("inf")])
    def test_bad_factor(self, factor):
        with pytest.raises(ValueError):
            kitti_io.adjust_contrast(np.zeros((2, 2, 3), dtype=np.uint8), factor)


def test_label_box_conversion_round_trip():
    rec = kitti_io.parse_label_line(CAR_LINE)
    box = kitti_io.label_to_box(rec)
    assert box.y == pytest.approx(1.71 - 1.65 / 2)
    assert box.dims == (1.67, 1.65, 3.64)
    back = kitti_io.box_to_label(box, "Car")
    assert np.allclose(back.location, rec.location, atol=1e-12)
    assert back.dims == rec.dims
    assert back.rotation_y == rec.rotation_y
