import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import INP, PRE, box
from formpair.candidates import (
    CandidatePair,
    LosConfig,
    cast_rays,
    generate_candidates,
    ray_bundle,
    ray_entry,
    sight_distances,
)
from formpair.errors import InvalidInputError
from formpair.geometry import intersection_area


def _march(origin, direction, rects, length, step=0.01):
    """First rect whose interior contains a sample point along the ray."""
    for k in range(1, int(length / step) + 1):
        t = k * step
        px, py = origin[0] + t * direction[0], origin[1] + t * direction[1]
        for j, (x0, y0, x1, y1) in enumerate(rects):
            if x0 < px < x1 and y0 < py < y1:
                return j, t
    return None, math.inf


def test_direct_hit_distance():
    src = box("a", (0, 0, 100, 50), PRE)
    tgt = box("b", (150, 0, 250, 50), INP)
    assert cast_rays(src, [tgt], LosConfig(), 600) == [("b", 50.0)]


def test_blocker_is_hit_instead_of_far_box():
    src = box("a", (0, 0, 100, 50), PRE)
    far = box("far", (300, 0, 400, 50), INP)
    blocker = box("blk", (150, -500, 200, 500), PRE)
    hits = dict(cast_rays(src, [far, blocker], LosConfig(), 600))
    assert "far" not in hits
    assert hits["blk"] == 50.0


def test_blocker_agrees_with_marching_oracle():
    src = box("a", (0, 0, 100, 50), PRE)
    others = [box("blk", (150, 10, 170, 40), PRE), box("far", (300, -20, 400, 70), INP)]
    rects = [o.rect for o in others]
    origins, dirs = ray_bundle(src.rect, LosConfig())
    t = ray_entry(origins, dirs, np.array(rects))
    for i in range(0, len(origins), 7):
        j, dist = _march(origins[i], dirs[i], rects, 500)
        if j is None:
            assert not np.isfinite(t[i]).any()
        else:
            assert int(np.argmin(t[i])) == j
            assert t[i, j] == pytest.approx(dist, abs=0.02)


def test_target_beyond_ray_len():
    src = box("a", (0, 0, 100, 50), PRE)
    tgt = box("b", (800, 0, 900, 50), INP)
    assert cast_rays(src, [tgt], LosConfig(), 600) == []


def test_overlap_is_distance_zero():
    src = box("a", (0, 0, 100, 50), PRE)
    tgt = box("b", (90, 10, 150, 40), INP)
    assert cast_rays(src, [tgt], LosConfig(), 600) == [("b", 0.0)]


def test_cast_rays_errors():
    src = box("a", (0, 0, 1, 1))
    with pytest.raises(InvalidInputError):
        cast_rays(src, [src], LosConfig(), 10)
    with pytest.raises(InvalidInputError):
        cast_rays(src, [], LosConfig(), 0)


def test_grazing_ray_misses():
    # a horizontal ray along the top edge y=0 of the target does not enter it
    t = ray_entry(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]), np.array([[10.0, 0.0, 20.0, 5.0]]))
    assert t[0, 0] == math.inf


@given(
    st.floats(-50, 50), st.floats(-50, 50), st.floats(0, 2 * math.pi),
    st.floats(-40, 40), st.floats(-40, 40), st.floats(1, 30), st.floats(1, 30),
)
def test_ray_entry_against_sampling(ox, oy, ang, x0, y0, w, h):
    rect = (x0, y0, x0 + w, y0 + h)
    o = np.array([[ox, oy]])
    d = np.array([[math.cos(ang), math.sin(ang)]])
    t = ray_entry(o, d, np.array([rect]))[0, 0]
    if math.isfinite(t):
        p = (ox + (t + 1e-6) * d[0, 0], oy + (t + 1e-6) * d[0, 1])
        q = (ox + (t + 1e-3) * d[0, 0], oy + (t + 1e-3) * d[0, 1])
        assert x0 - 1e-6 <= p[0] <= x0 + w + 1e-6 and y0 - 1e-6 <= p[1] <= y0 + h + 1e-6
        inside = x0 <= q[0] <= x0 + w and y0 <= q[1] <= y0 + h
        assert inside or min(w, h) < 1e-2
        if t > 0:
            r = (ox + (t - 1e-3) * d[0, 0], oy + (t - 1e-3) * d[0, 1])
            assert not (x0 < r[0] < x0 + w and y0 < r[1] < y0 + h)


def test_two_opposite_boxes_one_pair():
    pairs = generate_candidates([box("a", (0, 0, 50, 20), PRE), box("b", (80, 0, 150, 20), INP)])
    assert [p.key for p in pairs] == [("a", "b")]
    assert pairs[0].sight_distance == 30.0


def test_same_class_filtered():
    boxes = [box("a", (0, 0, 50, 20), PRE), box("b", (80, 0, 150, 20), PRE)]
    assert generate_candidates(boxes) == []
    assert len(generate_candidates(boxes, LosConfig(opposite_class_only=False))) == 1


def test_trivial_inputs():
    assert generate_candidates([]) == []
    assert generate_candidates([box("a", (0, 0, 1, 1))]) == []


def _grid(n):
    boxes = []
    for i in range(n):
        for j in range(n):
            cls = PRE if (i + j) % 2 == 0 else INP
            boxes.append(box(f"g{i:02d}{j:02d}", (j * 40, i * 30, j * 40 + 30, i * 30 + 20), cls))
    return boxes


def test_cap_enforced_and_subset():
    boxes = _grid(6)
    full = {p.key for p in generate_candidates(boxes, LosConfig(cap=10**6))}
    capped = generate_candidates(boxes, LosConfig(cap=20))
    assert len(full) > 20
    assert len(capped) <= 20
    assert {p.key for p in capped} <= full


def test_cap_fallback_keeps_nearest():
    # all pairs at distance 0 cannot be separated by shrinking
    boxes = [box(f"o{i}", (i, 0, i + 10, 10), PRE if i % 2 else INP) for i in range(6)]
    capped = generate_candidates(boxes, LosConfig(cap=3))
    assert len(capped) == 3
    assert all(p.sight_distance == 0 for p in capped)


def test_output_sorted_and_unique():
    pairs = generate_candidates(_grid(5))
    keys = [p.key for p in pairs]
    assert keys == sorted(set(keys))
    assert all(a < b for a, b in keys)


@given(st.lists(st.tuples(st.floats(0, 300), st.floats(0, 300), st.floats(5, 80), st.floats(5, 40), st.booleans()),
                min_size=2, max_size=10),
       st.floats(10, 200), st.floats(10, 200))
def test_monotone_in_ray_length(specs, l1, l2):
    l1, l2 = sorted((l1, l2))
    boxes = [box(f"r{i}", (x, y, x + w, y + h), PRE if c else INP) for i, (x, y, w, h, c) in enumerate(specs)]
    for src in boxes:
        others = [b for b in boxes if b.id != src.id]
        near = {k for k, _ in cast_rays(src, others, LosConfig(), l1)}
        far = {k for k, _ in cast_rays(src, others, LosConfig(), l2)}
        assert near <= far


@given(st.integers(0, 10**6))
def test_unobstructed_facing_boxes_found(seed):
    rng = np.random.default_rng(seed)
    x0, y0 = rng.uniform(0, 200, 2)
    w, h = rng.uniform(20, 200), rng.uniform(10, 40)
    gap = rng.uniform(0.5, 500)
    a = box("a", (x0, y0, x0 + w, y0 + h), PRE)
    if rng.random() < 0.5:
        b = box("b", (x0 + w + gap, y0, x0 + w + gap + 50, y0 + h), INP)
    else:
        b = box("b", (x0, y0 + h + gap, x0 + w, y0 + h + gap + 20), INP)
    pairs = generate_candidates([a, b])
    assert [p.key for p in pairs] == [("a", "b")]
    assert pairs[0].sight_distance == pytest.approx(gap)


def test_sight_distances_symmetric_union():
    a = box("a", (0, 0, 50, 20), PRE)
    b = box("b", (80, 0, 150, 20), INP)
    assert sight_distances([b, a], LosConfig()) == {("a", "b"): 30.0}


def test_candidate_pair_orders_ids():
    p = CandidatePair("z", "a", 1.0)
    assert p.key == ("a", "z")
    with pytest.raises(InvalidInputError):
        CandidatePair("a", "a", 0)
    with pytest.raises(InvalidInputError):
        CandidatePair("a", "b", -1)


def test_los_config_validation():
    with pytest.raises(InvalidInputError):
        LosConfig(points_per_edge=0)
    with pytest.raises(InvalidInputError):
        LosConfig(shrink_factor=1.0)
    with pytest.raises(InvalidInputError):
        LosConfig(cap=0)
    with pytest.raises(InvalidInputError):
        LosConfig(max_ray_len=0)


def test_intersection_helper_consistent():
    assert intersection_area((0, 0, 10, 10), (5, 5, 15, 15)) == 25
