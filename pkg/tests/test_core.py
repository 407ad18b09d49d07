import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from smearcl.core import (
    Annotation,
    BoundingBox,
    CellClass,
    ImageRecord,
    SiteDataset,
    TaskStream,
    image_is_positive,
    iou,
    iou_matrix,
)

from conftest import boxes, make_record


def box_from_corners(x0, y0, x1, y1):
    return BoundingBox.from_corners(x0, y0, x1, y1)


class TestBoundingBox:
    @pytest.mark.parametrize("w,h", [(0.0, 0.1), (0.1, 0.0), (-0.1, 0.1), (1.2, 0.5)])
    def test_degenerate_sizes_rejected(self, w, h):
        with pytest.raises(ValueError):
            BoundingBox(0.5, 0.5, w, h)

    def test_center_outside_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            BoundingBox(1.1, 0.5, 0.1, 0.1)

    def test_nan_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            BoundingBox(math.nan, 0.5, 0.1, 0.1)

    def test_corner_roundtrip(self):
        b = BoundingBox(0.3, 0.4, 0.2, 0.1)
        r = box_from_corners(*b.corners())
        assert (r.cx, r.cy, r.w, r.h) == pytest.approx((b.cx, b.cy, b.w, b.h), abs=1e-12)


class TestIoU:
    def test_identical(self):
        b = BoundingBox(0.5, 0.5, 0.2, 0.3)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(box_from_corners(0, 0, 0.1, 0.1), box_from_corners(0.5, 0.5, 0.6, 0.6)) == 0.0

    def test_worked_overlap(self):
        a = box_from_corners(0.0, 0.0, 0.2, 0.2)
        b = box_from_corners(0.1, 0.1, 0.3, 0.3)
        assert iou(a, b) == pytest.approx(0.01 / 0.07, abs=1e-12)

    @given(boxes(), boxes())
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0

    @given(boxes())
    def test_self_is_one(self, a):
        assert iou(a, a) == pytest.approx(1.0, abs=1e-12)

    @given(boxes(), boxes(), st.floats(0.2, 1.0), st.floats(0.2, 1.0))
    def test_axis_scaling_invariant(self, a, b, sx, sy):
        def scale(z):
            return BoundingBox(z.cx * sx, z.cy * sy, z.w * sx, z.h * sy)
        assert iou(scale(a), scale(b)) == pytest.approx(iou(a, b), abs=1e-9)

    @given(st.lists(boxes(), min_size=0, max_size=5), st.lists(boxes(), min_size=0, max_size=5))
    def test_matrix_matches_pairwise(self, xs, ys):
        m = iou_matrix(xs, ys)
        assert m.shape == (len(xs), len(ys))
        for i, a in enumerate(xs):
            for j, b in enumerate(ys):
                assert m[i, j] == pytest.approx(iou(a, b), abs=1e-12)


class TestPositivity:
    def test_empty(self):
        assert not image_is_positive([])

    def test_one_infected(self):
        assert image_is_positive([Annotation(BoundingBox(0.5, 0.5, 0.1, 0.1), CellClass.RBC_INFECTED)])

    def test_only_healthy(self):
        anns = [Annotation(BoundingBox(0.1 + 0.15 * k, 0.5, 0.1, 0.1), CellClass.RBC_ANY) for k in range(5)]
        assert not image_is_positive(anns)


class TestContainers:
    def test_image_record_validates_pixels(self):
        with pytest.raises(ValueError, match="uint8"):
            ImageRecord("i", "p", "s", np.zeros((8, 8, 3), np.float32))
        with pytest.raises(ValueError, match="patient_id"):
            ImageRecord("i", "", "s", np.zeros((8, 8, 3), np.uint8))

    def test_site_rejects_patient_leak(self):
        a = make_record("i1", "p1")
        b = make_record("i2", "p1")
        with pytest.raises(ValueError):
            SiteDataset("s", train=[a], test=[b])

    def test_stream_rules(self):
        site = SiteDataset("s", train=[make_record("i", "p")], test=())
        with pytest.raises(ValueError):
            TaskStream(())
        with pytest.raises(ValueError):
            TaskStream((site, site))
        stream = TaskStream((site,))
        assert stream.T == len(stream) == 1
        assert stream[0] is site
