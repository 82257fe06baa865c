"""JSON documents: pages, candidate/score lists, decisions, models and reports.

Every document carries ``format_version`` and ``kind``. Output is written
with sorted keys and Python's shortest round-trip float repr, so equal data
always produces equal bytes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from formpair.candidates import CandidatePair
from formpair.errors import InvalidInputError, SchemaError, VersionError
from formpair.evaluation import EvalReport, pair_key
from formpair.geometry import BoxClass, TextBox
from formpair.scoring.mlp import SpatialClassifier

FORMAT_VERSION = 1


@dataclass
class Page:
    page_id: str
    width: float
    height: float
    boxes: list[TextBox]
    relationships: list[tuple[str, str]] = field(default_factory=list)

    @property
    def boxes_by_id(self) -> dict[str, TextBox]:
        return {b.id: b for b in self.boxes}

    def gt_neighbor_counts(self) -> dict[str, int]:
        counts = {b.id: 0 for b in self.boxes}
        for a, b in {pair_key(a, b) for a, b in self.relationships}:
            counts[a] += 1
            counts[b] += 1
        return counts


@dataclass
class PagePairs:
    """Candidate or scored pairs of one page."""

    page_id: str
    pairs: list[CandidatePair]


@dataclass
class PageDecision:
    page_id: str
    pairs: list[tuple[str, str]]
    scores: list[float]
    accepted: list[bool]
    adjusted_scores: list[float]
    objective: float
    neighbor_targets: dict[str, float]
    nodes: int = 0
    certified: bool = True


# ---------------------------------------------------------------- writing


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path: str | os.PathLike, doc: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(doc))


def page_to_dict(page: Page) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "page",
        "page_id": page.page_id,
        "width": page.width,
        "height": page.height,
        "boxes": [
            {
                "id": b.id,
                "class": b.cls.value,
                "bbox": list(b.rect),
                "confidence": b.confidence,
                "class_probs": list(b.cls_probs),
                "nn_pred": b.nn_pred,
            }
            for b in page.boxes
        ],
        "relationships": [list(r) for r in page.relationships],
    }


def save_pages(path, pages: Iterable[Page]) -> None:
    docs = [page_to_dict(p) for p in sorted(pages, key=lambda p: p.page_id)]
    for d in docs:
        del d["format_version"], d["kind"]
    write_json(path, {"format_version": FORMAT_VERSION, "kind": "pages", "pages": docs})


def pairs_to_dict(kind: str, pages: Iterable[PagePairs], method: str | None = None, with_features: bool = False) -> dict:
    out = []
    for pp in sorted(pages, key=lambda p: p.page_id):
        rows = []
        for p in pp.pairs:
            row: dict[str, Any] = {"a": p.a_id, "b": p.b_id, "sight_distance": p.sight_distance}
            if p.score is not None:
                row["score"] = p.score
            if with_features and p.features is not None:
                row["features"] = list(p.features)
            rows.append(row)
        out.append({"page_id": pp.page_id, "pairs": rows})
    doc = {"format_version": FORMAT_VERSION, "kind": kind, "pages": out}
    if method is not None:
        doc["method"] = method
    return doc


def save_candidates(path, pages: Iterable[PagePairs]) -> None:
    write_json(path, pairs_to_dict("candidates", pages))


def save_scores(path, pages: Iterable[PagePairs], method: str) -> None:
    write_json(path, pairs_to_dict("scores", pages, method))


def decisions_to_dict(pages: Iterable[PageDecision], params: dict) -> dict:
    out = []
    for d in sorted(pages, key=lambda p: p.page_id):
        out.append(
            {
                "page_id": d.page_id,
                "objective": d.objective,
                "certified": d.certified,
                "nodes": d.nodes,
                "neighbor_targets": d.neighbor_targets,
                "pairs": [
                    {"a": a, "b": b, "score": s, "accepted": acc, "adjusted_score": adj}
                    for (a, b), s, acc, adj in zip(d.pairs, d.scores, d.accepted, d.adjusted_scores)
                ],
            }
        )
    return {"format_version": FORMAT_VERSION, "kind": "decisions", "params": params, "pages": out}


def save_decisions(path, pages: Iterable[PageDecision], params: dict) -> None:
    write_json(path, decisions_to_dict(pages, params))


def save_model(path, model: SpatialClassifier) -> None:
    write_json(path, model.to_dict())


def save_report(path, report: EvalReport, extra: dict | None = None) -> None:
    doc = {"format_version": FORMAT_VERSION, "kind": "report", **report.to_dict()}
    if extra:
        doc["run"] = extra
    write_json(path, doc)


# ---------------------------------------------------------------- reading


class _Reader:
    """Small schema checker that reports the file and JSON path of a problem."""

    def __init__(self, file: str):
        self.file = file

    def fail(self, path: str, rule: str):
        raise SchemaError(rule, self.file, path)

    def get(self, obj: dict, key: str, path: str, kind, default=...):
        if not isinstance(obj, dict):
            self.fail(path, "expected an object")
        if key not in obj:
            if default is ...:
                self.fail(f"{path}.{key}", "required field is missing")
            return default
        val = obj[key]
        if kind is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
                self.fail(f"{path}.{key}", "expected a finite number")
            return float(val)
        if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
            self.fail(f"{path}.{key}", "expected an integer")
        if kind is not int and not isinstance(val, kind):
            self.fail(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}")
        return val

    def header(self, doc, kinds: tuple[str, ...]) -> str:
        if not isinstance(doc, dict):
            self.fail("$", "expected a JSON object")
        if "format_version" not in doc:
            raise VersionError("format_version is missing", self.file, "$.format_version")
        if doc["format_version"] != FORMAT_VERSION:
            raise VersionError(f"unsupported format_version {doc['format_version']!r}", self.file, "$.format_version")
        kind = doc.get("kind")
        if kind not in kinds:
            self.fail("$.kind", f"expected one of {list(kinds)}, got {kind!r}")
        return kind


def _read(path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON: {e.msg} (line {e.lineno})", str(path)) from None
    except OSError as e:
        raise SchemaError(f"cannot read file: {e.strerror}", str(path)) from None


def _parse_page(r: _Reader, d: dict, path: str) -> Page:
    page_id = r.get(d, "page_id", path, str)
    width = r.get(d, "width", path, float)
    height = r.get(d, "height", path, float)
    boxes: list[TextBox] = []
    seen: set[str] = set()
    for i, bd in enumerate(r.get(d, "boxes", path, list)):
        bp = f"{path}.boxes[{i}]"
        bid = r.get(bd, "id", bp, str)
        if bid in seen:
            r.fail(f"{bp}.id", f"duplicate box id {bid!r}")
        seen.add(bid)
        cls = r.get(bd, "class", bp, str)
        if cls not in ("preprinted", "input"):
            r.fail(f"{bp}.class", f"class must be 'preprinted' or 'input', got {cls!r}")
        bbox = r.get(bd, "bbox", bp, list)
        probs = r.get(bd, "class_probs", bp, list, None)
        try:
            if len(bbox) != 4 or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox):
                raise InvalidInputError("bbox must be 4 numbers")
            boxes.append(
                TextBox(
                    id=bid,
                    rect=tuple(bbox),
                    cls=BoxClass(cls),
                    confidence=r.get(bd, "confidence", bp, float, 1.0),
                    cls_probs=tuple(probs) if probs is not None else None,
                    nn_pred=r.get(bd, "nn_pred", bp, float, 0.0),
                    page_id=page_id,
                )
            )
        except (InvalidInputError, TypeError) as e:
            r.fail(bp, str(e))
    by_id = {b.id: b for b in boxes}
    rels: list[tuple[str, str]] = []
    for i, rel in enumerate(r.get(d, "relationships", path, list, [])):
        rp = f"{path}.relationships[{i}]"
        if not (isinstance(rel, list) and len(rel) == 2 and all(isinstance(v, str) for v in rel)):
            r.fail(rp, "relationship must be a pair of box ids")
        a, b = rel
        for v in rel:
            if v not in by_id:
                r.fail(rp, f"unknown box id {v!r}")
        if by_id[a].cls is by_id[b].cls:
            r.fail(rp, f"relationship {a!r}-{b!r} joins two boxes of class {by_id[a].cls.value!r}")
        rels.append((a, b))
    return Page(page_id, width, height, boxes, rels)


def load_pages(path) -> list[Page]:
    """Read a page document, a ``pages`` corpus, or a directory of either.

    Pages come back sorted by ``page_id``; duplicate page ids are rejected.
    """
    p = Path(path)
    files = sorted(p.glob("*.json")) if p.is_dir() else [p]
    pages: list[Page] = []
    for f in files:
        r = _Reader(str(f))
        doc = _read(f)
        kind = r.header(doc, ("page", "pages"))
        if kind == "page":
            pages.append(_parse_page(r, doc, "$"))
        else:
            for i, pd in enumerate(r.get(doc, "pages", "$", list)):
                pages.append(_parse_page(r, pd, f"$.pages[{i}]"))
    ids = [pg.page_id for pg in pages]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise SchemaError(f"duplicate page id {dupes[0]!r}", str(path))
    return sorted(pages, key=lambda pg: pg.page_id)


def load_pairs(path, kinds=("candidates", "scores")) -> tuple[str, str | None, list[PagePairs]]:
    """Read a candidates or scores document; returns ``(kind, method, pages)``."""
    r = _Reader(str(path))
    doc = _read(path)
    kind = r.header(doc, kinds)
    out = []
    for i, pd in enumerate(r.get(doc, "pages", "$", list)):
        pp = f"$.pages[{i}]"
        pairs = []
        for j, row in enumerate(r.get(pd, "pairs", pp, list)):
            rp = f"{pp}.pairs[{j}]"
            a, b = r.get(row, "a", rp, str), r.get(row, "b", rp, str)
            if a == b:
                r.fail(rp, "a pair needs two distinct boxes")
            score = r.get(row, "score", rp, float, None)
            if kind == "scores" and score is None:
                r.fail(f"{rp}.score", "required field is missing")
            if score is not None and not 0.0 <= score <= 1.0:
                r.fail(f"{rp}.score", "score must be in [0, 1]")
            dist = r.get(row, "sight_distance", rp, float, 0.0)
            if dist < 0:
                r.fail(f"{rp}.sight_distance", "must be >= 0")
            feats = r.get(row, "features", rp, list, None)
            pairs.append(CandidatePair(a, b, dist, feats, score))
        keys = [p.key for p in pairs]
        if len(set(keys)) != len(keys):
            r.fail(pp, "duplicate pair")
        out.append(PagePairs(r.get(pd, "page_id", pp, str), pairs))
    method = doc.get("method")
    return kind, method, sorted(out, key=lambda p: p.page_id)


def load_decisions(path) -> tuple[dict, list[PageDecision]]:
    r = _Reader(str(path))
    doc = _read(path)
    r.header(doc, ("decisions",))
    out = []
    for i, pd in enumerate(r.get(doc, "pages", "$", list)):
        pp = f"$.pages[{i}]"
        pairs, scores, accepted, adjusted = [], [], [], []
        for j, row in enumerate(r.get(pd, "pairs", pp, list)):
            rp = f"{pp}.pairs[{j}]"
            pairs.append((r.get(row, "a", rp, str), r.get(row, "b", rp, str)))
            scores.append(r.get(row, "score", rp, float))
            accepted.append(r.get(row, "accepted", rp, bool))
            adjusted.append(r.get(row, "adjusted_score", rp, float))
        targets = r.get(pd, "neighbor_targets", pp, dict)
        out.append(
            PageDecision(
                page_id=r.get(pd, "page_id", pp, str),
                pairs=pairs,
                scores=scores,
                accepted=accepted,
                adjusted_scores=adjusted,
                objective=r.get(pd, "objective", pp, float),
                neighbor_targets={k: float(v) for k, v in targets.items()},
                nodes=r.get(pd, "nodes", pp, int, 0),
                certified=r.get(pd, "certified", pp, bool, True),
            )
        )
    return dict(doc.get("params", {})), sorted(out, key=lambda p: p.page_id)


def load_model(path) -> SpatialClassifier:
    r = _Reader(str(path))
    doc = _read(path)
    r.header(doc, ("model",))
    try:
        return SpatialClassifier.from_dict(doc)
    except (InvalidInputError, KeyError, ValueError, TypeError) as e:
        raise SchemaError(f"invalid model: {e}", str(path)) from None


def load_report(path) -> EvalReport:
    r = _Reader(str(path))
    doc = _read(path)
    r.header(doc, ("report",))
    d = {k: v for k, v in doc.items() if k not in ("format_version", "kind", "run")}
    try:
        return EvalReport.from_dict(d)
    except TypeError as e:
        raise SchemaError(f"invalid report: {e}", str(path)) from None
