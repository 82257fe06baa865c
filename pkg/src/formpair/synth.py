"""Synthetic form pages with known label-value relationships.

Pages are a grid of fields. A field is a pre-printed label with zero, one
or two input values, laid out either to the right of the label or below it.
Every related label and value face each other across an empty corridor, so
each ground-truth pair is in line of sight within a few dozen pixels.

Predicted neighbor counts mimic an imperfect regression model: the true
count plus Gaussian noise, clipped at 0, with the noise scale chosen so that
rounding recovers the true count with probability ``nn_accuracy``.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from formpair.errors import InvalidInputError
from formpair.geometry import BoxClass, TextBox, intersection_area
from formpair.io import Page

LAYOUTS = ("label-left", "label-above", "mixed")

CELL_W = 620.0
MARGIN = 60.0
HEADER = 110.0
ROW_H = {"label-left": 72.0, "label-above": 84.0}
# distractors keep this much clearance; it exceeds the unjittered label-value gap
CLEARANCE = 12.0


@dataclass(frozen=True)
class SynthSpec:
    n_pages: int = 60
    rows: int = 8
    cols: int = 2
    layout: str = "mixed"
    jitter: float = 0.5
    distractors: int = 4
    seed: int = 0
    nn_accuracy: float = 0.72
    p_blank: float = 0.15
    p_multi: float = 0.15
    prefix: str = "synth"

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidInputError("rows and cols must be >= 1")
        if self.layout not in LAYOUTS:
            raise InvalidInputError(f"layout must be one of {LAYOUTS}")
        if not 0.0 < self.nn_accuracy <= 1.0:
            raise InvalidInputError("nn_accuracy must be in (0, 1]")
        if not 0.0 <= self.jitter <= 1.0:
            raise InvalidInputError("jitter must be in [0, 1]")
        if self.distractors < 0 or self.n_pages < 0:
            raise InvalidInputError("counts must be >= 0")


def _field_left(rng, x0, y0, kind, jitter):
    """Label at the left, values to its right, vertically overlapping it."""
    wl = rng.uniform(60, 200)
    gap = 8.0 + jitter * rng.uniform(-2, 16)
    wv = rng.uniform(80, 240)
    if kind == "multi":
        hl = rng.uniform(42, 54)
        label = (x0, y0, x0 + wl, y0 + hl)
        hv = (hl - 4) / 2
        vx = x0 + wl + gap
        dy = jitter * rng.uniform(-2, 2)
        values = [
            (vx, y0 + dy, vx + wv, y0 + dy + hv),
            (vx, y0 + dy + hv + 4, vx + wv * rng.uniform(0.6, 1.0), y0 + dy + 2 * hv + 4),
        ]
    else:
        hl = rng.uniform(18, 30)
        hv = rng.uniform(16, 32)
        label = (x0, y0, x0 + wl, y0 + hl)
        cy = y0 + hl / 2 + jitter * rng.uniform(-5, 5)
        vx = x0 + wl + gap
        values = [(vx, cy - hv / 2, vx + wv, cy + hv / 2)]
    return label, values if kind != "blank" else []


def _field_above(rng, x0, y0, kind, jitter):
    """Label on top, values below it and horizontally overlapping it."""
    hl = rng.uniform(16, 24)
    vgap = 8.0 + jitter * rng.uniform(-4, 8)
    hv = rng.uniform(18, 30)
    vy = y0 + hl + vgap
    if kind == "multi":
        wl = rng.uniform(220, 320)
        label = (x0, y0, x0 + wl, y0 + hl)
        w1 = (wl - 12) / 2
        return label, [
            (x0, vy, x0 + w1, vy + hv),
            (x0 + w1 + 12, vy, x0 + wl + rng.uniform(0, 60), vy + hv),
        ]
    wl = rng.uniform(60, 220)
    label = (x0, y0, x0 + wl, y0 + hl)
    off = jitter * rng.uniform(0, 0.5) * wl
    wv = rng.uniform(80, 260)
    return label, ([(x0 + off, vy, x0 + off + wv, vy + hv)] if kind != "blank" else [])


def _inflate(r, d):
    return (r[0] - d, r[1] - d, r[2] + d, r[3] + d)


def _union(a, b):
    return (min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))


def nn_noise_scale(accuracy: float) -> float:
    """Gaussian sigma with P(|e| < 0.5) = accuracy."""
    if accuracy >= 1.0:
        return 0.0
    return 0.5 / NormalDist().inv_cdf((1.0 + accuracy) / 2.0)


def generate_page(rng: np.random.Generator, spec: SynthSpec, page_id: str) -> Page:
    bands = []
    for _ in range(spec.rows):
        if spec.layout == "mixed":
            bands.append("label-left" if rng.random() < 0.5 else "label-above")
        else:
            bands.append(spec.layout)

    rects: list[tuple[tuple, BoxClass]] = []
    rels: list[tuple[int, int]] = []
    corridors = []
    y = MARGIN + HEADER
    for band in bands:
        for c in range(spec.cols):
            x0 = MARGIN + c * CELL_W
            u = rng.random()
            kind = "blank" if u < spec.p_blank else "multi" if u < spec.p_blank + spec.p_multi else "single"
            make = _field_left if band == "label-left" else _field_above
            label, values = make(rng, x0, y, kind, spec.jitter)
            li = len(rects)
            rects.append((label, BoxClass.PREPRINTED))
            for v in values:
                rels.append((li, len(rects)))
                corridors.append(_union(label, v))
                rects.append((v, BoxClass.INPUT))
        y += ROW_H[band]
    width = MARGIN * 2 + spec.cols * CELL_W
    height = y + MARGIN

    placed = 0
    for _ in range(spec.distractors * 200):
        if placed == spec.distractors:
            break
        w, h = rng.uniform(30, 220), rng.uniform(14, 30)
        x, yy = rng.uniform(0, width - w), rng.uniform(0, height - h)
        r = (x, yy, x + w, yy + h)
        if any(intersection_area(_inflate(r, CLEARANCE), o) > 0 for o, _ in rects):
            continue
        if any(intersection_area(_inflate(r, CLEARANCE), cor) > 0 for cor in corridors):
            continue
        rects.append((r, BoxClass.PREPRINTED if rng.random() < 0.6 else BoxClass.INPUT))
        placed += 1

    counts = [0] * len(rects)
    for a, b in rels:
        counts[a] += 1
        counts[b] += 1
    sigma = nn_noise_scale(spec.nn_accuracy)
    boxes = []
    for i, ((r, cls), n) in enumerate(zip(rects, counts)):
        nn = max(0.0, n + sigma * rng.standard_normal())
        boxes.append(TextBox(f"b{i:03d}", tuple(round(v, 2) for v in r), cls, nn_pred=round(nn, 4), page_id=page_id))
    return Page(page_id, width, round(height, 2), boxes, [(f"b{a:03d}", f"b{b:03d}") for a, b in rels])


def generate_synthetic_pages(spec: SynthSpec = SynthSpec()) -> list[Page]:
    """Deterministic corpus of ``spec.n_pages`` pages."""
    rng = np.random.default_rng(spec.seed)
    return [generate_page(rng, spec, f"{spec.prefix}-{i:04d}") for i in range(spec.n_pages)]
