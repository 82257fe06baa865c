"""Rectangle math, detection post-processing and anchor-shape clustering.

Rectangles are ``(x_min, y_min, x_max, y_max)`` tuples of reals. Area is
``(x_max - x_min) * (y_max - y_min)``; there is no +1 pixel convention.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from formpair.errors import InvalidInputError

Rect = tuple[float, float, float, float]


class BoxClass(str, enum.Enum):
    PREPRINTED = "preprinted"
    INPUT = "input"

    @property
    def other(self) -> "BoxClass":
        return BoxClass.INPUT if self is BoxClass.PREPRINTED else BoxClass.PREPRINTED


def _one_hot(cls: BoxClass) -> tuple[float, float]:
    return (1.0, 0.0) if cls is BoxClass.PREPRINTED else (0.0, 1.0)


@dataclass(frozen=True)
class TextBox:
    """A detected or ground-truth text line.

    ``cls_probs`` defaults to the one-hot encoding of ``cls``; ``nn_pred`` is
    the predicted number of relationships the box takes part in.
    """

    id: str
    rect: Rect
    cls: BoxClass
    confidence: float = 1.0
    cls_probs: tuple[float, float] | None = None
    nn_pred: float = 0.0
    page_id: str = ""

    def __post_init__(self):
        rect = tuple(float(v) for v in self.rect)
        if len(rect) != 4:
            raise InvalidInputError(f"box {self.id!r}: rect must have 4 coordinates")
        object.__setattr__(self, "rect", rect)
        validate_rect(rect, what=f"box {self.id!r}")
        object.__setattr__(self, "cls", BoxClass(self.cls))
        if self.cls_probs is None:
            object.__setattr__(self, "cls_probs", _one_hot(self.cls))
        else:
            object.__setattr__(self, "cls_probs", tuple(float(p) for p in self.cls_probs))
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInputError(f"box {self.id!r}: confidence {self.confidence} not in [0, 1]")
        if len(self.cls_probs) != 2 or not all(0.0 <= p <= 1.0 for p in self.cls_probs):
            raise InvalidInputError(f"box {self.id!r}: class probabilities must be two values in [0, 1]")
        if not (self.nn_pred >= 0.0 and math.isfinite(self.nn_pred)):
            raise InvalidInputError(f"box {self.id!r}: nn_pred must be finite and >= 0")

    @property
    def width(self) -> float:
        return self.rect[2] - self.rect[0]

    @property
    def height(self) -> float:
        return self.rect[3] - self.rect[1]

    @property
    def center(self) -> tuple[float, float]:
        return ((self.rect[0] + self.rect[2]) / 2.0, (self.rect[1] + self.rect[3]) / 2.0)


def validate_rect(rect: Sequence[float], what: str = "rect") -> None:
    x0, y0, x1, y1 = rect
    if not all(math.isfinite(v) for v in rect):
        raise InvalidInputError(f"{what}: non-finite coordinate in {tuple(rect)}")
    if not (x0 < x1 and y0 < y1):
        raise InvalidInputError(f"{what}: degenerate rectangle {tuple(rect)}")


def area(rect: Rect) -> float:
    return (rect[2] - rect[0]) * (rect[3] - rect[1])


def intersection_area(a: Rect, b: Rect) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: Rect, b: Rect) -> float:
    """Intersection over union of two rectangles.

    Raises:
        InvalidInputError: if either rectangle has zero or negative area.
    """
    validate_rect(a)
    validate_rect(b)
    if tuple(a) == tuple(b):
        return 1.0
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (area(a) + area(b) - inter)


def nms(boxes: Sequence[TextBox], conf_threshold: float = 0.5, iou_threshold: float = 0.5) -> list[TextBox]:
    """Confidence threshold followed by greedy per-class suppression.

    Boxes below ``conf_threshold`` are dropped. The survivors are visited in
    descending confidence (ties by ascending id); a box is kept unless a kept
    box of the same class overlaps it with IoU >= ``iou_threshold``.
    """
    for name, t in (("conf_threshold", conf_threshold), ("iou_threshold", iou_threshold)):
        if not 0.0 <= t <= 1.0:
            raise InvalidInputError(f"{name} must be in [0, 1], got {t}")
    ordered = sorted((b for b in boxes if b.confidence >= conf_threshold), key=lambda b: (-b.confidence, b.id))
    kept: list[TextBox] = []
    for box in ordered:
        if all(k.cls is not box.cls or iou(k.rect, box.rect) < iou_threshold for k in kept):
            kept.append(box)
    return kept


@dataclass
class AnchorSet:
    """Clustered anchor shapes.

    ``mean_iou_history`` holds the mean co-centered IoU between shapes and
    their assigned anchor, recorded after every assignment and every update.
    """

    anchors: list[tuple[float, float]]
    iterations: int = 0
    mean_iou_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.anchors)


def centered_iou(shapes: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (w, h) shapes placed on a common center, shape (n, k)."""
    w = np.minimum(shapes[:, None, 0], anchors[None, :, 0])
    h = np.minimum(shapes[:, None, 1], anchors[None, :, 1])
    inter = w * h
    union = (shapes[:, 0] * shapes[:, 1])[:, None] + (anchors[:, 0] * anchors[:, 1])[None, :] - inter
    return inter / union


def cluster_anchors(
    shapes: Sequence[tuple[float, float]],
    k: int,
    seeds: Sequence[tuple[float, float]],
    max_iter: int = 300,
) -> AnchorSet:
    """k-means over (w, h) shapes with ``1 - centered IoU`` as the distance.

    Centroids start at ``seeds`` and are updated to the component-wise mean of
    their members. An empty cluster keeps its previous centroid, and so does a
    cluster whose mean would lower the summed IoU of its members: the plain
    mean is not the IoU-optimal center, and without this guard the mean IoU
    can drop between iterations. Stops when the assignment no longer changes
    or after ``max_iter`` iterations.
    """
    pts = np.asarray(shapes, dtype=float).reshape(-1, 2)
    centroids = np.asarray(seeds, dtype=float).reshape(-1, 2).copy()
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if len(pts) < k:
        raise InvalidInputError(f"need at least k={k} shapes, got {len(pts)}")
    if len(centroids) != k:
        raise InvalidInputError(f"expected {k} seeds, got {len(centroids)}")
    if np.any(pts <= 0) or np.any(centroids <= 0) or not np.all(np.isfinite(pts)):
        raise InvalidInputError("shape widths and heights must be positive and finite")

    history: list[float] = []
    assign = None
    it = 0
    for it in range(1, max_iter + 1):
        overlap = centered_iou(pts, centroids)
        # argmax returns the lowest index on ties, which keeps the run deterministic
        new_assign = np.argmax(overlap, axis=1)
        history.append(float(overlap[np.arange(len(pts)), new_assign].mean()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = pts[assign == j]
            if not len(members):
                continue
            mean = members.mean(axis=0)
            before = centered_iou(members, centroids[j : j + 1]).sum()
            after = centered_iou(members, mean[None, :]).sum()
            if after >= before:
                centroids[j] = mean
        overlap = centered_iou(pts, centroids)
        history.append(float(overlap[np.arange(len(pts)), assign].mean()))

    return AnchorSet(
        anchors=[(float(w), float(h)) for w, h in centroids],
        iterations=it,
        mean_iou_history=history,
    )


def spanning_seeds(shapes: Sequence[tuple[float, float]], k: int) -> list[tuple[float, float]]:
    """Pick ``k`` seed shapes spread across the distribution.

    Shapes are ordered by (log area, log aspect) and seeds taken at evenly
    spaced ranks, so the result is deterministic.
    """
    pts = sorted(
        (math.log(w * h), math.log(w / h), float(w), float(h)) for w, h in shapes
    )
    if len(pts) < k:
        raise InvalidInputError(f"need at least k={k} shapes, got {len(pts)}")
    idx = np.linspace(0, len(pts) - 1, k).round().astype(int)
    return [(pts[i][2], pts[i][3]) for i in idx]
