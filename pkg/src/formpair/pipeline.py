"""Per-page pipeline stages and the run configuration that drives them.

Stages are pure functions of one page, so they can be fanned out over a
process pool; results are always re-sorted by page id before being merged.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from formpair.candidates import CandidatePair, LosConfig, generate_candidates
from formpair.errors import InvalidInputError
from formpair.evaluation import PageResult, assign_training_labels, evaluate, match_detections, pair_key
from formpair.geometry import TextBox, nms
from formpair.io import Page, PageDecision, PagePairs
from formpair.optimizer import PairingProblem, apply_neighbor_mode, solve_bnb
from formpair.scoring.baselines import score_distance, score_heuristic
from formpair.scoring.features import pair_features
from formpair.scoring.mlp import SpatialClassifier

METHODS = ("distance", "heuristic", "mlp")
NEIGHBOR_MODES = ("predicted", "ground_truth_noisy")
CONFIG_ENV = "FORMPAIR_CONFIG"


@dataclass(frozen=True)
class OptimizerParams:
    c: float = 0.25
    T: float = 0.7
    neighbor_mode: str = "predicted"
    seed: int = 0
    node_budget: int = 10**7

    def __post_init__(self):
        if self.neighbor_mode not in NEIGHBOR_MODES:
            raise InvalidInputError(f"neighbor_mode must be one of {NEIGHBOR_MODES}")
        if not self.c >= 0 or not 0 <= self.T <= 1:
            raise InvalidInputError("need c >= 0 and T in [0, 1]")
        if self.node_budget < 1:
            raise InvalidInputError("node_budget must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    los: LosConfig = LosConfig()
    method: str = "distance"
    model: str | None = None
    optimizer: OptimizerParams = OptimizerParams(T=0.5)
    use_detections: bool = False
    nms_conf: float = 0.5
    nms_iou: float = 0.5
    match_iou: float = 0.5
    conf_threshold: float = 0.5
    score_threshold: float = 0.5
    workers: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"method must be one of {METHODS}")
        if self.method == "mlp" and not self.model:
            raise InvalidInputError("the mlp method needs a model path")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        if "los" in d:
            d["los"] = LosConfig(**{k: tuple(v) if k == "fan_degrees" else v for k, v in d["los"].items()})
        if "optimizer" in d:
            d["optimizer"] = OptimizerParams(**d["optimizer"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["los"]["fan_degrees"] = list(self.los.fan_degrees)
        return d


def available_workers() -> int:
    if hasattr(os, "sched_getaffinity"):
        return len(os.sched_getaffinity(0))
    return os.cpu_count() or 1


def map_pages(fn: Callable, items: Sequence, workers: int = 0) -> list:
    """Apply ``fn`` to every item, in a process pool when ``workers`` > 1.

    ``workers=0`` means one worker per available CPU. Output order always
    matches input order.
    """
    n = workers or available_workers()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * n))))


def working_boxes(page: Page, detections: Page | None, cfg: RunConfig) -> list[TextBox]:
    """Boxes the pairing stages run on: GT boxes, or NMS-filtered detections."""
    if detections is None:
        return list(page.boxes)
    return sorted(nms(detections.boxes, cfg.nms_conf, cfg.nms_iou), key=lambda b: b.id)


def page_candidates(boxes: Sequence[TextBox], page_id: str, los: LosConfig) -> PagePairs:
    return PagePairs(page_id, generate_candidates(boxes, los))


def score_pairs(
    boxes: Sequence[TextBox],
    pairs: Sequence[CandidatePair],
    method: str,
    model: SpatialClassifier | None = None,
) -> list[float]:
    """Scores in [0, 1] for one page's pairs with the chosen scorer."""
    by_id = {b.id: b for b in boxes}
    missing = [k for p in pairs for k in p.key if k not in by_id]
    if missing:
        raise InvalidInputError(f"pair references unknown box {missing[0]!r}")
    if not pairs:
        return []
    if method == "distance":
        return score_distance(pairs, by_id)
    if method == "heuristic":
        return score_heuristic(pairs, by_id)[1]
    if method == "mlp":
        if model is None:
            raise InvalidInputError("the mlp method needs a model")
        return [float(p) for p in model.predict(pair_features(pairs, by_id))]
    raise InvalidInputError(f"unknown scoring method {method!r}")


def page_seed(seed: int, page_id: str) -> int:
    """Per-page RNG seed that does not depend on processing order."""
    return (seed * 1_000_003 + zlib.crc32(page_id.encode("utf-8"))) % 2**32


def optimize_page(
    page_id: str,
    boxes: Sequence[TextBox],
    pairs: Sequence[tuple[str, str]],
    scores: Sequence[float],
    params: OptimizerParams,
    gt_counts: dict[str, int] | None = None,
) -> PageDecision:
    ids = sorted(b.id for b in boxes)
    targets = apply_neighbor_mode(
        ids,
        {b.id: b.nn_pred for b in boxes},
        params.neighbor_mode,
        gt_counts,
        page_seed(params.seed, page_id),
    )
    problem, _ = PairingProblem.from_pairs(pairs, scores, targets, params.c, params.T)
    dec = solve_bnb(problem, params.node_budget)
    return PageDecision(
        page_id=page_id,
        pairs=[tuple(p) for p in pairs],
        scores=[float(s) for s in scores],
        accepted=[bool(v) for v in dec.x],
        adjusted_scores=[float(v) for v in dec.adjusted_scores],
        objective=dec.objective,
        neighbor_targets=targets,
        nodes=dec.nodes,
        certified=dec.certified,
    )


def gt_counts_for(page: Page, boxes: Sequence[TextBox], match_iou: float = 0.5) -> dict[str, int]:
    """Ground-truth neighbor counts for the working boxes.

    With detections, each detection inherits the count of the GT box it
    matches; unmatched detections get 0.
    """
    counts = page.gt_neighbor_counts()
    gt_ids = set(counts)
    if all(b.id in gt_ids for b in boxes) and len(boxes) == len(page.boxes):
        return {b.id: counts[b.id] for b in boxes}
    match = match_detections(boxes, page.boxes, match_iou)
    return {b.id: counts[match.pred_to_gt[b.id]] if match.pred_to_gt[b.id] else 0 for b in boxes}


def training_examples(pages: Sequence[Page], los: LosConfig, detections: dict[str, Page] | None = None,
                      nms_conf: float = 0.5, nms_iou: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Feature rows and 0/1 labels from candidate pairs of every page.

    With ground-truth boxes a pair is positive iff it is a GT relationship.
    With detections the 0.4-IoU alignment rules decide, and ``ignore`` pairs
    are left out.
    """
    xs, ys = [], []
    for page in sorted(pages, key=lambda p: p.page_id):
        if detections is None:
            boxes = page.boxes
        else:
            boxes = sorted(nms(detections[page.page_id].boxes, nms_conf, nms_iou), key=lambda b: b.id)
        pairs = generate_candidates(boxes, los)
        if not pairs:
            continue
        if detections is None:
            related = {pair_key(a, b) for a, b in page.relationships}
            labels = [1.0 if p.key in related else 0.0 for p in pairs]
        else:
            tags = assign_training_labels(boxes, page.boxes, page.relationships, [p.key for p in pairs])
            keep = [p for p in pairs if tags[p.key] != "ignore"]
            labels = [1.0 if tags[p.key] == "positive" else 0.0 for p in keep]
            pairs = keep
        if pairs:
            xs.append(pair_features(pairs, {b.id: b for b in boxes}))
            ys.extend(labels)
    if not xs:
        return np.zeros((0, 16)), np.zeros(0)
    return np.vstack(xs), np.array(ys)


@dataclass
class PageOutput:
    candidates: PagePairs
    scored: PagePairs
    decision: PageDecision
    result_raw: PageResult
    result_opt: PageResult


@dataclass
class _PageJob:
    page: Page
    detections: Page | None
    cfg: RunConfig
    model: SpatialClassifier | None

    def __call__(self, _=None) -> PageOutput:
        return run_page(self.page, self.detections, self.cfg, self.model)


def run_page(page: Page, detections: Page | None, cfg: RunConfig, model: SpatialClassifier | None) -> PageOutput:
    """candidates -> scores -> optimization -> evaluation inputs for one page."""
    boxes = working_boxes(page, detections, cfg)
    cands = page_candidates(boxes, page.page_id, cfg.los)
    scores = score_pairs(boxes, cands.pairs, cfg.method, model)
    scored = PagePairs(page.page_id, [replace(p, score=s) for p, s in zip(cands.pairs, scores)])
    counts = gt_counts_for(page, boxes, cfg.match_iou) if cfg.optimizer.neighbor_mode == "ground_truth_noisy" else None
    decision = optimize_page(page.page_id, boxes, [p.key for p in cands.pairs], scores, cfg.optimizer, counts)
    raw = PageResult(page.page_id, page.boxes, page.relationships, boxes,
                     [(p.a_id, p.b_id, s) for p, s in zip(cands.pairs, scores)])
    opt = PageResult(page.page_id, page.boxes, page.relationships, boxes,
                     [(a, b, s) for (a, b), s in zip(decision.pairs, decision.adjusted_scores)],
                     accepted=decision.accepted)
    return PageOutput(cands, scored, decision, raw, opt)


def _call(job: _PageJob) -> PageOutput:
    return job()


def run_pages(pages: Sequence[Page], cfg: RunConfig, model: SpatialClassifier | None = None,
              detections: dict[str, Page] | None = None) -> list[PageOutput]:
    jobs = [_PageJob(p, detections.get(p.page_id) if detections else None, cfg, model)
            for p in sorted(pages, key=lambda p: p.page_id)]
    if detections is not None:
        missing = [j.page.page_id for j in jobs if j.detections is None]
        if missing:
            raise InvalidInputError(f"no detections for page {missing[0]!r}")
    return map_pages(_call, jobs, cfg.workers)


def evaluate_outputs(outputs: Sequence[PageOutput], cfg: RunConfig, optimized: bool = True):
    results = [o.result_opt if optimized else o.result_raw for o in outputs]
    return evaluate(results, cfg.conf_threshold, cfg.score_threshold, cfg.match_iou)
