"""SVG overlays of boxes and relationship outcomes on a blank canvas.

Color code: pre-printed boxes blue, input boxes cyan; relationship lines
green for true positives, red for false positives and orange for missed
ground-truth relationships. Candidates the optimizer rejected although their
raw score was above threshold are drawn as thin lines, yellow when the
rejection was correct and pink when it removed a true relationship.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Sequence

from formpair.errors import InvalidInputError
from formpair.evaluation import match_detections, pair_key, score_relationships
from formpair.geometry import BoxClass, TextBox
from formpair.io import Page

BOX_COLORS = {BoxClass.PREPRINTED: "blue", BoxClass.INPUT: "cyan"}
LINE_STYLES = {
    "pruned-correct": ("yellow", 1.0),
    "pruned-incorrect": ("pink", 1.0),
    "fn": ("orange", 3.0),
    "fp": ("red", 3.0),
    "tp": ("green", 3.0),
}

SVG_NS = "http://www.w3.org/2000/svg"
XLINK_NS = "http://www.w3.org/1999/xlink"


def _num(v: float) -> str:
    return format(float(v), ".10g")


def render_overlay(
    page: Page,
    pairs: Sequence[tuple[str, str, float]],
    accepted: Sequence[bool] | None = None,
    boxes: Sequence[TextBox] | None = None,
    raw_scores: Sequence[float] | None = None,
    score_threshold: float = 0.5,
    iou_threshold: float = 0.5,
    background: str | None = None,
) -> str:
    """SVG document for one page.

    ``pairs`` holds ``(a_id, b_id, score)`` over ``boxes`` (the page's own
    boxes by default). With ``accepted`` the pairs are optimizer decisions
    and ``raw_scores`` (defaulting to the pair scores) decides which
    rejections count as pruned. ``background`` is an optional image href;
    it is referenced, never fetched.
    """
    boxes = list(page.boxes if boxes is None else boxes)
    by_id = {b.id: b for b in boxes}
    gt_by_id = page.boxes_by_id
    for a, b, _ in pairs:
        for k in (a, b):
            if k not in by_id:
                raise InvalidInputError(f"pair references unknown box {k!r} on page {page.page_id!r}")
    for a, b in page.relationships:
        for k in (a, b):
            if k not in gt_by_id:
                raise InvalidInputError(f"relationship references unknown box {k!r} on page {page.page_id!r}")
    if accepted is not None and len(accepted) != len(pairs):
        raise InvalidInputError("accepted must align with pairs")
    raw = [s for _, _, s in pairs] if raw_scores is None else list(raw_scores)
    if len(raw) != len(pairs):
        raise InvalidInputError("raw_scores must align with pairs")

    match = match_detections(boxes, page.boxes, iou_threshold)
    positive = list(accepted) if accepted is not None else [s > score_threshold for _, _, s in pairs]
    # only the kept pairs compete for GT credit
    kept = [(a, b, s) for (a, b, s), pos in zip(pairs, positive) if pos]
    kept_labels, _ = score_relationships(kept, match, page.relationships)
    related = {pair_key(a, b) for a, b in page.relationships}

    lines: list[tuple[str, tuple[str, str], TextBox, TextBox]] = []
    claimed, pink = set(), set()
    hits = iter(kept_labels)
    for (a, b, _), pos, r in zip(pairs, positive, raw):
        if pos:
            hit = next(hits)
            if hit:
                claimed.add(pair_key(match.pred_to_gt[a], match.pred_to_gt[b]))
            lines.append(("tp" if hit else "fp", pair_key(a, b), by_id[a], by_id[b]))
        elif accepted is not None and r > score_threshold:
            ga, gb = match.pred_to_gt.get(a), match.pred_to_gt.get(b)
            true_pair = ga is not None and gb is not None and pair_key(ga, gb) in related
            if true_pair:
                pink.add(pair_key(ga, gb))
            lines.append(("pruned-incorrect" if true_pair else "pruned-correct", pair_key(a, b), by_id[a], by_id[b]))
    for key in sorted(related - claimed - pink):
        lines.append(("fn", key, gt_by_id[key[0]], gt_by_id[key[1]]))

    ET.register_namespace("", SVG_NS)
    ET.register_namespace("xlink", XLINK_NS)
    svg = ET.Element(
        f"{{{SVG_NS}}}svg",
        {
            "version": "1.1",
            "width": _num(page.width),
            "height": _num(page.height),
            "viewBox": f"0 0 {_num(page.width)} {_num(page.height)}",
        },
    )
    ET.SubElement(svg, f"{{{SVG_NS}}}title").text = page.page_id
    ET.SubElement(svg, f"{{{SVG_NS}}}rect", {"x": "0", "y": "0", "width": _num(page.width),
                                            "height": _num(page.height), "fill": "white"})
    if background:
        ET.SubElement(svg, f"{{{SVG_NS}}}image", {f"{{{XLINK_NS}}}href": background, "x": "0", "y": "0",
                                                 "width": _num(page.width), "height": _num(page.height)})
    group = ET.SubElement(svg, f"{{{SVG_NS}}}g", {"class": "boxes", "fill": "none", "stroke-width": "2"})
    for box in sorted(boxes, key=lambda b: b.id):
        x0, y0, x1, y1 = box.rect
        ET.SubElement(group, f"{{{SVG_NS}}}rect", {
            "id": f"box-{box.id}", "class": box.cls.value, "stroke": BOX_COLORS[box.cls],
            "x": _num(x0), "y": _num(y0), "width": _num(x1 - x0), "height": _num(y1 - y0),
        })
    order = list(LINE_STYLES)
    group = ET.SubElement(svg, f"{{{SVG_NS}}}g", {"class": "relationships"})
    for kind, key, ba, bb in sorted(lines, key=lambda t: (order.index(t[0]), t[1])):
        color, width = LINE_STYLES[kind]
        (x1, y1), (x2, y2) = ba.center, bb.center
        ET.SubElement(group, f"{{{SVG_NS}}}line", {
            "class": kind, "data-pair": f"{key[0]} {key[1]}", "stroke": color, "stroke-width": _num(width),
            "x1": _num(x1), "y1": _num(y1), "x2": _num(x2), "y2": _num(y2),
        })
    ET.indent(svg, space=" ")
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(svg, encoding="unicode") + "\n"
