"""Detection and relationship metrics.

A detection is correct when it matches an unclaimed ground-truth box of the
same class with IoU >= 0.5. A predicted relationship is correct when both
its boxes are correct detections whose ground-truth boxes are related; each
ground-truth relationship is credited once, to its highest-scoring claimant.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from formpair.geometry import BoxClass, TextBox, iou

Pair = tuple[str, str]


def pair_key(a: str, b: str) -> Pair:
    return (a, b) if a <= b else (b, a)


@dataclass
class MatchResult:
    pred_to_gt: dict[str, str | None]
    pred_iou: dict[str, float]
    gt_to_pred: dict[str, str | None]

    @property
    def n_matched(self) -> int:
        return sum(g is not None for g in self.pred_to_gt.values())


def match_detections(pred: Sequence[TextBox], gt: Sequence[TextBox], iou_threshold: float = 0.5) -> MatchResult:
    """Greedy class-aware matching in descending prediction confidence.

    Each prediction takes the unmatched same-class GT box with the highest
    IoU at or above the threshold; ties go to the lower GT id.
    """
    gt_to_pred: dict[str, str | None] = {g.id: None for g in gt}
    pred_to_gt: dict[str, str | None] = {}
    pred_iou: dict[str, float] = {}
    for p in sorted(pred, key=lambda b: (-b.confidence, b.id)):
        best, best_iou = None, iou_threshold
        for g in sorted(gt, key=lambda b: b.id):
            if g.cls is not p.cls or gt_to_pred[g.id] is not None:
                continue
            v = iou(p.rect, g.rect)
            if v > best_iou or (v == best_iou and best is None):
                best, best_iou = g.id, v
        pred_to_gt[p.id] = best
        pred_iou[p.id] = best_iou if best is not None else 0.0
        if best is not None:
            gt_to_pred[best] = p.id
    return MatchResult(pred_to_gt, pred_iou, gt_to_pred)


def score_relationships(
    pairs: Sequence[tuple[str, str, float]],
    match: MatchResult,
    gt_relationships: Iterable[Pair],
) -> tuple[list[bool], int]:
    """Label scored pairs TP/FP and count unclaimed GT relationships.

    Returns the TP flags aligned with ``pairs`` and the FN count.
    """
    related = {pair_key(a, b) for a, b in gt_relationships}
    claimed: set[Pair] = set()
    labels = [False] * len(pairs)
    order = sorted(range(len(pairs)), key=lambda i: (-pairs[i][2], pair_key(pairs[i][0], pairs[i][1])))
    for i in order:
        a, b, _ = pairs[i]
        ga, gb = match.pred_to_gt.get(a), match.pred_to_gt.get(b)
        if ga is None or gb is None:
            continue
        k = pair_key(ga, gb)
        if k in related and k not in claimed:
            claimed.add(k)
            labels[i] = True
    return labels, len(related - claimed)


def average_precision(items: Sequence[tuple[float, bool, object]], total_positives: int) -> float:
    """All-point interpolated AP of ``(score, is_tp, tie_key)`` items.

    Items are ranked by descending score, then ascending ``tie_key``.
    """
    if total_positives <= 0:
        return 0.0
    ranked = sorted(items, key=lambda it: (-it[0], it[2]))
    precisions, hits = [], []
    tp = 0
    for k, (_, hit, _) in enumerate(ranked, start=1):
        tp += bool(hit)
        precisions.append(Fraction(tp, k))
        hits.append(bool(hit))
    # running max of precision from the right
    for k in range(len(precisions) - 2, -1, -1):
        precisions[k] = max(precisions[k], precisions[k + 1])
    # recall rises by 1/total_positives at each hit and nowhere else
    # exact rational sum so that simple cases round to the nearest float
    return float(sum((p for p, hit in zip(precisions, hits) if hit), Fraction(0)) / total_positives)


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f


def assign_training_labels(
    pred_boxes: Sequence[TextBox],
    gt_boxes: Sequence[TextBox],
    gt_relationships: Iterable[Pair],
    pairs: Sequence[Pair],
    align_iou: float = 0.4,
) -> dict[Pair, str]:
    """Training labels for candidate pairs over predicted boxes.

    A pair of two aligned boxes whose GT boxes are related is ``positive``.
    A pair touching a box with no GT overlap at all is ``negative``. A pair
    whose boxes are not both aligned but whose best-overlap GT boxes are
    related is ``ignore``. Everything else is ``negative``.
    """
    related = {pair_key(a, b) for a, b in gt_relationships}
    aligned = match_detections(pred_boxes, gt_boxes, align_iou).pred_to_gt
    best_overlap: dict[str, str | None] = {}
    max_overlap: dict[str, float] = {}
    for p in pred_boxes:
        scored = sorted(((iou(p.rect, g.rect), g.id) for g in gt_boxes), key=lambda t: (-t[0], t[1]))
        top = scored[0] if scored else (0.0, None)
        max_overlap[p.id] = top[0]
        best_overlap[p.id] = top[1] if top[0] > 0 else None

    out: dict[Pair, str] = {}
    for a, b in pairs:
        key = pair_key(a, b)
        ga, gb = aligned.get(a), aligned.get(b)
        if ga is not None and gb is not None and pair_key(ga, gb) in related:
            out[key] = "positive"
        elif max_overlap[a] == 0.0 or max_overlap[b] == 0.0:
            out[key] = "negative"
        else:
            oa = ga if ga is not None else best_overlap[a]
            ob = gb if gb is not None else best_overlap[b]
            if (ga is None or gb is None) and pair_key(oa, ob) in related:
                out[key] = "ignore"
            else:
                out[key] = "negative"
    return out


@dataclass
class PageResult:
    """Everything needed to evaluate one page.

    ``pairs`` holds ``(a_id, b_id, score)`` over predicted box ids. When
    ``accepted`` is given, the thresholded metrics use it instead of
    ``score > threshold``; scores are then expected to be AP-ordering scores
    such as the optimizer's adjusted scores.
    """

    page_id: str
    gt_boxes: list[TextBox]
    gt_relationships: list[Pair]
    pred_boxes: list[TextBox]
    pairs: list[tuple[str, str, float]]
    accepted: list[bool] | None = None


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, other: "Counts") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn


@dataclass
class EvalReport:
    detection_ap: dict[str, float]
    detection_map: float
    detection_precision: float
    detection_recall: float
    detection_f: float
    detection_counts: Counts
    relationship_ap: float
    relationship_precision: float
    relationship_recall: float
    relationship_f: float
    relationship_counts: Counts
    per_page_relationship_ap: dict[str, float] = field(default_factory=dict)
    n_pages: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["detection_counts"] = Counts(**d["detection_counts"])
        d["relationship_counts"] = Counts(**d["relationship_counts"])
        return cls(**d)

    def table(self) -> str:
        """Aligned plain-text summary."""
        rows = [("metric", "AP", "precision", "recall", "F-m", "TP", "FP", "FN")]
        dc, rc = self.detection_counts, self.relationship_counts
        rows.append(("detection", self.detection_map, self.detection_precision, self.detection_recall,
                     self.detection_f, dc.tp, dc.fp, dc.fn))
        rows.append(("relationship", self.relationship_ap, self.relationship_precision,
                     self.relationship_recall, self.relationship_f, rc.tp, rc.fp, rc.fn))
        for cls, ap in sorted(self.detection_ap.items()):
            rows.append((f"  det:{cls}", ap, "", "", "", "", "", ""))
        cells = [[f"{v:.4f}" if isinstance(v, float) else str(v) for v in row] for row in rows]
        widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in cells]
        return "\n".join(line.rstrip() for line in lines) + "\n"


def evaluate(pages: Sequence[PageResult], conf_threshold: float = 0.5, score_threshold: float = 0.5,
             iou_threshold: float = 0.5) -> EvalReport:
    """Pool counts and ranked lists over pages (sorted by page id) into one report.

    Thresholded detections are those with confidence >= ``conf_threshold``;
    thresholded relationships are those with score > ``score_threshold``
    (or the ``accepted`` flags when present).
    """
    det_items: dict[str, list] = {c.value: [] for c in BoxClass}
    det_total = {c.value: 0 for c in BoxClass}
    det_counts = Counts()
    rel_items: list = []
    rel_total = 0
    rel_counts = Counts()
    per_page: dict[str, float] = {}

    for page in sorted(pages, key=lambda p: p.page_id):
        match = match_detections(page.pred_boxes, page.gt_boxes, iou_threshold)
        for g in page.gt_boxes:
            det_total[g.cls.value] += 1
        kept_tp = 0
        kept = 0
        for p in page.pred_boxes:
            hit = match.pred_to_gt[p.id] is not None
            det_items[p.cls.value].append((p.confidence, hit, (page.page_id, p.id)))
            if p.confidence >= conf_threshold:
                kept += 1
                kept_tp += hit
        # greedy matching in confidence order makes the thresholded matches a prefix
        det_counts.add(Counts(kept_tp, kept - kept_tp, len(page.gt_boxes) - kept_tp))

        labels, _ = score_relationships(page.pairs, match, page.gt_relationships)
        n_gt = len({pair_key(a, b) for a, b in page.gt_relationships})
        rel_total += n_gt
        items = [(s, hit, (page.page_id, *pair_key(a, b))) for (a, b, s), hit in zip(page.pairs, labels)]
        rel_items.extend(items)
        per_page[page.page_id] = average_precision(items, n_gt)
        positive = page.accepted if page.accepted is not None else [s > score_threshold for _, _, s in page.pairs]
        tp = sum(1 for hit, pos in zip(labels, positive) if hit and pos)
        npos = sum(bool(p) for p in positive)
        rel_counts.add(Counts(tp, npos - tp, n_gt - tp))

    det_ap = {c: average_precision(items, det_total[c]) for c, items in det_items.items()}
    present = [c for c in det_ap if det_total[c] > 0]
    d_p, d_r, d_f = prf(det_counts.tp, det_counts.fp, det_counts.fn)
    r_p, r_r, r_f = prf(rel_counts.tp, rel_counts.fp, rel_counts.fn)
    return EvalReport(
        detection_ap=det_ap,
        detection_map=sum(det_ap[c] for c in present) / len(present) if present else 0.0,
        detection_precision=d_p,
        detection_recall=d_r,
        detection_f=d_f,
        detection_counts=det_counts,
        relationship_ap=average_precision(rel_items, rel_total),
        relationship_precision=r_p,
        relationship_recall=r_r,
        relationship_f=r_f,
        relationship_counts=rel_counts,
        per_page_relationship_ap=per_page,
        n_pages=len(pages),
    )
