"""Spatial feature vectors for candidate pairs."""

from __future__ import annotations

import math

import numpy as np

from formpair.geometry import BoxClass, TextBox

FEATURE_NAMES = (
    "dx_center",
    "dy_center",
    "d_tl",
    "d_tr",
    "d_bl",
    "d_br",
    "h_a/50",
    "w_a/400",
    "h_b/50",
    "w_b/400",
    "p_pre_a",
    "p_input_a",
    "p_pre_b",
    "p_input_b",
    "nn_a",
    "nn_b",
)
N_FEATURES = len(FEATURE_NAMES)

HEIGHT_SCALE = 50.0
WIDTH_SCALE = 400.0


def orient(a: TextBox, b: TextBox) -> tuple[TextBox, TextBox]:
    """Put the pre-printed box first when classes differ, else the lower id."""
    if a.cls is not b.cls:
        return (a, b) if a.cls is BoxClass.PREPRINTED else (b, a)
    return (a, b) if a.id <= b.id else (b, a)


def extract_features(a: TextBox, b: TextBox) -> np.ndarray:
    """16-dim feature vector for the pair; the caller orients it with :func:`orient`."""
    ax0, ay0, ax1, ay1 = a.rect
    bx0, by0, bx1, by1 = b.rect
    (acx, acy), (bcx, bcy) = a.center, b.center
    return np.array(
        [
            acx - bcx,
            acy - bcy,
            math.hypot(ax0 - bx0, ay0 - by0),
            math.hypot(ax1 - bx1, ay0 - by0),
            math.hypot(ax0 - bx0, ay1 - by1),
            math.hypot(ax1 - bx1, ay1 - by1),
            a.height / HEIGHT_SCALE,
            a.width / WIDTH_SCALE,
            b.height / HEIGHT_SCALE,
            b.width / WIDTH_SCALE,
            a.cls_probs[0],
            a.cls_probs[1],
            b.cls_probs[0],
            b.cls_probs[1],
            a.nn_pred,
            b.nn_pred,
        ],
        dtype=float,
    )


def pair_features(pairs, boxes_by_id: dict[str, TextBox]) -> np.ndarray:
    """Stack oriented feature vectors for a list of candidate pairs, shape (n, 16)."""
    rows = [extract_features(*orient(boxes_by_id[p.a_id], boxes_by_id[p.b_id])) for p in pairs]
    if not rows:
        return np.zeros((0, N_FEATURES))
    return np.vstack(rows)
