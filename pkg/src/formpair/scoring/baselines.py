"""Hand-written pair scorers: inverse center distance and a layout heuristic."""

from __future__ import annotations

import math
from typing import Sequence

from formpair.errors import InvalidInputError
from formpair.geometry import TextBox
from formpair.scoring.features import orient


def _minmax(values: Sequence[float], flip: bool = False) -> list[float]:
    if not values:
        return []
    lo, hi = min(values), max(values)
    if hi == lo:
        return [1.0] * len(values)
    scaled = [(v - lo) / (hi - lo) for v in values]
    return [1.0 - s for s in scaled] if flip else scaled


def center_distance(a: TextBox, b: TextBox) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)


def score_distance(pairs, boxes_by_id: dict[str, TextBox]) -> list[float]:
    """``1 - (d - d_min) / (d_max - d_min)`` over the page's candidate pairs.

    All scores are 1 when every pair has the same center distance.
    """
    dists = [center_distance(boxes_by_id[p.a_id], boxes_by_id[p.b_id]) for p in pairs]
    return _minmax(dists, flip=True)


def heuristic_raw(label: TextBox, value: TextBox) -> float:
    """Unnormalized layout score ``1 - g_height - g_distance - g_side``.

    ``g_height`` is the height ratio (>= 1). ``g_distance`` measures the gap
    from the label's right-edge midpoint to the value's left-edge midpoint in
    label widths, saturating at 1 until the gap exceeds two label widths.
    ``g_side`` is the center x offset of the label past the value, in value
    widths, so a label right of its value is penalized.
    """
    for box in (label, value):
        if box.width <= 0 or box.height <= 0:
            raise InvalidInputError(f"box {box.id!r} has zero width or height")
    g_height = max(label.height, value.height) / min(label.height, value.height)
    (lx, ly), (vx, vy) = label.center, value.center
    gap = math.hypot((lx + label.width / 2) - (vx - value.width / 2), ly - vy)
    ratio = gap / label.width
    g_distance = ratio if gap > 2 * label.width else min(1.0, ratio)
    g_side = (lx - vx) / value.width
    return 1.0 - g_height - g_distance - g_side


def score_heuristic(pairs, boxes_by_id: dict[str, TextBox]) -> tuple[list[float], list[float]]:
    """Raw heuristic scores and their per-page min-max normalization into [0, 1]."""
    raw = [heuristic_raw(*orient(boxes_by_id[p.a_id], boxes_by_id[p.b_id])) for p in pairs]
    return raw, _minmax(raw)
