import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import INP, PRE, box
from formpair.errors import InvalidInputError
from formpair.geometry import (
    TextBox,
    centered_iou,
    cluster_anchors,
    intersection_area,
    iou,
    nms,
    spanning_seeds,
)

coord = st.floats(-500, 500, allow_nan=False)
size = st.floats(0.5, 300, allow_nan=False)


@st.composite
def rects(draw):
    x, y, w, h = draw(coord), draw(coord), draw(size), draw(size)
    return (x, y, x + w, y + h)


def test_iou_identity():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0


def test_iou_disjoint():
    assert iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0


def test_iou_half_overlap():
    # intersection 50, union 150
    assert iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-15)


def test_iou_touching_edges_is_zero():
    assert iou((0, 0, 10, 10), (10, 0, 20, 10)) == 0.0


@pytest.mark.parametrize("bad", [(0, 0, 0, 10), (0, 0, 10, 0), (5, 5, 1, 10), (0, 0, math.nan, 1)])
def test_iou_rejects_degenerate(bad):
    with pytest.raises(InvalidInputError):
        iou(bad, (0, 0, 1, 1))


@given(rects(), rects())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert intersection_area(a, b) >= 0


@given(rects())
def test_iou_self_is_one(a):
    assert iou(a, a) == pytest.approx(1.0)


def test_textbox_validation():
    with pytest.raises(InvalidInputError):
        box("a", (0, 0, 0, 1))
    with pytest.raises(InvalidInputError):
        box("a", (0, 0, 1, 1), confidence=1.5)
    with pytest.raises(InvalidInputError):
        box("a", (0, 0, 1, 1), nn_pred=-1)
    with pytest.raises(InvalidInputError):
        box("a", (0, 0, 1, 1), cls_probs=(0.5, 1.2))


def test_textbox_defaults_one_hot():
    assert box("a", (0, 0, 1, 1), PRE).cls_probs == (1.0, 0.0)
    assert box("a", (0, 0, 1, 1), INP).cls_probs == (0.0, 1.0)


def test_nms_singleton():
    b = box("a", (0, 0, 10, 10), confidence=0.9)
    assert nms([b]) == [b]


def test_nms_duplicate_suppressed():
    hi = box("a", (0, 0, 10, 10), confidence=0.9)
    lo = box("b", (0, 0, 10, 10), confidence=0.8)
    assert nms([lo, hi], 0.5, 0.5) == [hi]


def test_nms_per_class():
    a = box("a", (0, 0, 10, 10), PRE, confidence=0.9)
    b = box("b", (0, 0, 10, 10), INP, confidence=0.8)
    assert nms([a, b]) == [a, b]


def test_nms_confidence_threshold_and_order():
    a = box("a", (0, 0, 10, 10), confidence=0.7)
    b = box("b", (50, 0, 60, 10), confidence=0.7)
    c = box("c", (100, 0, 110, 10), confidence=0.95)
    d = box("d", (200, 0, 210, 10), confidence=0.2)
    assert [x.id for x in nms([d, b, a, c])] == ["c", "a", "b"]


def test_nms_empty():
    assert nms([]) == []


def _brute_nms(boxes, conf, thr):
    # repeatedly keep the best remaining box, drop its same-class overlaps
    left = sorted((b for b in boxes if b.confidence >= conf), key=lambda b: (-b.confidence, b.id))
    kept = []
    while left:
        top = left.pop(0)
        kept.append(top)
        left = [b for b in left if b.cls is not top.cls or iou(b.rect, top.rect) < thr]
    return kept


@st.composite
def box_sets(draw):
    n = draw(st.integers(0, 12))
    out = []
    for i in range(n):
        x, y = draw(st.floats(0, 60)), draw(st.floats(0, 60))
        w, h = draw(st.floats(2, 40)), draw(st.floats(2, 40))
        conf = draw(st.floats(0, 1))
        cls = draw(st.sampled_from([PRE, INP]))
        out.append(box(f"b{i:02d}", (x, y, x + w, y + h), cls, confidence=conf))
    return out


@given(box_sets(), st.floats(0, 1), st.floats(0.05, 1))
def test_nms_matches_pairwise_rule(boxes, conf, thr):
    assert nms(boxes, conf, thr) == _brute_nms(boxes, conf, thr)


@given(box_sets(), st.floats(0.05, 1))
def test_nms_idempotent_and_suppressing(boxes, thr):
    once = nms(boxes, 0.3, thr)
    assert nms(once, 0.3, thr) == once
    for i, a in enumerate(once):
        for b in once[i + 1 :]:
            if a.cls is b.cls:
                assert iou(a.rect, b.rect) < thr


def test_cluster_single_shape():
    res = cluster_anchors([(30, 10)] * 5, 1, [(10, 10)])
    assert res.anchors == [(30.0, 10.0)]
    assert res.k == 1


def test_cluster_two_groups():
    shapes = [(100, 20), (104, 22), (96, 18), (102, 20), (98, 20)] + [(20, 100), (22, 104), (18, 96), (20, 102), (20, 98)]
    res = cluster_anchors(shapes, 2, [(90, 25), (25, 90)])
    assert res.anchors[0] == pytest.approx((100, 20))
    assert res.anchors[1] == pytest.approx((20, 100))


def test_cluster_each_point_its_own():
    shapes = [(10, 20), (40, 15), (70, 70)]
    assert cluster_anchors(shapes, 3, shapes).anchors == [(10.0, 20.0), (40.0, 15.0), (70.0, 70.0)]


def test_cluster_empty_cluster_keeps_seed():
    res = cluster_anchors([(10, 10), (11, 10)], 2, [(10, 10), (500, 500)])
    assert res.anchors[1] == (500.0, 500.0)


def test_cluster_errors():
    with pytest.raises(InvalidInputError):
        cluster_anchors([(1, 1)], 2, [(1, 1), (2, 2)])
    with pytest.raises(InvalidInputError):
        cluster_anchors([(1, 1), (2, 2)], 2, [(1, 1)])
    with pytest.raises(InvalidInputError):
        cluster_anchors([(1, 1)], 0, [])


def test_centered_iou_values():
    v = centered_iou(np.array([[10.0, 10.0]]), np.array([[10.0, 10.0], [20.0, 5.0]]))
    assert v[0, 0] == 1.0
    assert v[0, 1] == pytest.approx(50 / 150)


@given(st.lists(st.tuples(st.floats(1, 400), st.floats(1, 100)), min_size=3, max_size=40), st.integers(1, 3))
def test_cluster_monotone_history(shapes, k):
    res = cluster_anchors(shapes, k, spanning_seeds(shapes, k))
    h = res.mean_iou_history
    assert all(b >= a - 1e-12 for a, b in zip(h, h[1:]))


def test_spanning_seeds_are_members_and_deterministic():
    rng = np.random.default_rng(0)
    shapes = [tuple(v) for v in rng.uniform(1, 100, (50, 2))]
    seeds = spanning_seeds(shapes, 5)
    assert seeds == spanning_seeds(shapes, 5)
    assert all(s in shapes for s in seeds)


def test_textbox_is_hashable_and_frozen():
    b = TextBox("x", (0.0, 0.0, 1.0, 1.0), PRE)
    with pytest.raises(Exception):
        b.id = "y"
    assert b.width == 1.0 and b.height == 1.0 and b.center == (0.5, 0.5)
