"""``formpair`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 2 usage error, 3 data or schema error, 4 internal
invariant failure. Diagnostics go to stderr; results go to files, and short
summaries to stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from formpair import __version__
from formpair.candidates import LosConfig
from formpair.errors import InvalidInputError
from formpair.evaluation import PageResult, evaluate
from formpair.geometry import cluster_anchors, spanning_seeds
from formpair.io import (
    FORMAT_VERSION,
    PagePairs,
    load_decisions,
    load_model,
    load_pages,
    load_pairs,
    save_candidates,
    save_decisions,
    save_model,
    save_pages,
    save_report,
    save_scores,
    write_json,
)
from formpair.overlay import render_overlay
from formpair.pipeline import (
    CONFIG_ENV,
    METHODS,
    NEIGHBOR_MODES,
    OptimizerParams,
    RunConfig,
    evaluate_outputs,
    gt_counts_for,
    map_pages,
    optimize_page,
    page_candidates,
    run_pages,
    score_pairs,
    training_examples,
    working_boxes,
)
from formpair.scoring.mlp import TrainConfig, train_classifier
from formpair.synth import LAYOUTS, SynthSpec, generate_synthetic_pages

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _add_boxes_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--detections", help="page file or directory with predicted boxes to use instead of GT boxes")
    p.add_argument("--nms-conf", type=float, default=0.5, help="detection confidence threshold (default 0.5)")
    p.add_argument("--nms-iou", type=float, default=0.5, help="NMS IoU threshold (default 0.5)")


def _add_los_args(p: argparse.ArgumentParser) -> None:
    d = LosConfig()
    p.add_argument("--points-per-edge", type=_positive_int, default=d.points_per_edge)
    p.add_argument("--fan-degrees", type=float, nargs="+", default=list(d.fan_degrees))
    p.add_argument("--max-ray-len", type=float, default=d.max_ray_len)
    p.add_argument("--cap", type=_positive_int, default=d.cap)
    p.add_argument("--shrink-factor", type=float, default=d.shrink_factor)
    p.add_argument("--all-classes", action="store_true", help="keep same-class pairs")


def _add_workers(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int, default=0, help="worker processes (default: available CPUs)")


def _los(args) -> LosConfig:
    return LosConfig(
        points_per_edge=args.points_per_edge,
        fan_degrees=tuple(args.fan_degrees),
        max_ray_len=args.max_ray_len,
        cap=args.cap,
        shrink_factor=args.shrink_factor,
        opposite_class_only=not args.all_classes,
    )


def _run_config(args, **kw) -> RunConfig:
    return RunConfig(nms_conf=args.nms_conf, nms_iou=args.nms_iou, use_detections=bool(args.detections), **kw)


def _detections(args) -> dict | None:
    if not args.detections:
        return None
    return {p.page_id: p for p in load_pages(args.detections)}


def _boxes_for(page, dets, cfg):
    if dets is None:
        return working_boxes(page, None, cfg)
    if page.page_id not in dets:
        raise InvalidInputError(f"no detections for page {page.page_id!r}")
    return working_boxes(page, dets[page.page_id], cfg)


def _pages_by_id(pages) -> dict:
    return {p.page_id: p for p in pages}


def _lookup(pages: dict, page_id: str):
    if page_id not in pages:
        raise InvalidInputError(f"page {page_id!r} is not in the pages input")
    return pages[page_id]


# ---------------------------------------------------------------- subcommands


class _CandidateJob:
    def __init__(self, los):
        self.los = los

    def __call__(self, item):
        page_id, boxes = item
        return page_candidates(boxes, page_id, self.los)


def cmd_candidates(args) -> int:
    pages = load_pages(args.pages)
    dets = _detections(args)
    cfg = _run_config(args)
    items = [(p.page_id, _boxes_for(p, dets, cfg)) for p in pages]
    out = map_pages(_CandidateJob(_los(args)), items, args.workers)
    save_candidates(args.output, out)
    print(f"{sum(len(o.pairs) for o in out)} candidates on {len(out)} pages")
    return EXIT_OK


class _ScoreJob:
    def __init__(self, method, model):
        self.method, self.model = method, model

    def __call__(self, item):
        page_id, boxes, pairs = item
        scores = score_pairs(boxes, pairs, self.method, self.model)
        return PagePairs(page_id, [replace(p, score=s) for p, s in zip(pairs, scores)])


def cmd_score(args) -> int:
    if args.method == "mlp" and not args.model:
        raise UsageError("--method mlp needs --model")
    pages = _pages_by_id(load_pages(args.pages))
    dets = _detections(args)
    cfg = _run_config(args)
    model = load_model(args.model) if args.method == "mlp" else None
    _, _, cands = load_pairs(args.pairs)
    items = [(pp.page_id, _boxes_for(_lookup(pages, pp.page_id), dets, cfg), pp.pairs) for pp in cands]
    out = map_pages(_ScoreJob(args.method, model), items, args.workers)
    save_scores(args.output, out, args.method)
    print(f"scored {sum(len(o.pairs) for o in out)} pairs with {args.method}")
    return EXIT_OK


def cmd_train(args) -> int:
    pages = []
    for path in args.pages:
        pages.extend(load_pages(path))
    dets = _detections(args)
    x, y = training_examples(pages, _los(args), dets, args.nms_conf, args.nms_iou)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, iterations=args.iterations, rng_seed=args.seed)
    model = train_classifier(x, y, cfg, hidden=(args.hidden, args.hidden), dropout=args.dropout)
    save_model(args.output, model)
    loss = model.metadata.get("final_loss")
    print(f"trained on {len(y)} pairs ({int(y.sum())} positive); final loss {loss:.6f}" if loss is not None
          else f"trained on {len(y)} pairs; no iterations run")
    return EXIT_OK


class _OptimizeJob:
    def __init__(self, params):
        self.params = params

    def __call__(self, item):
        page_id, boxes, keys, scores, counts = item
        return optimize_page(page_id, boxes, keys, scores, self.params, counts)


def cmd_optimize(args) -> int:
    params = OptimizerParams(c=args.c, T=args.T, neighbor_mode=args.neighbor_mode, seed=args.seed,
                             node_budget=args.node_budget)
    pages = _pages_by_id(load_pages(args.pages))
    dets = _detections(args)
    cfg = _run_config(args, optimizer=params)
    _, _, scored = load_pairs(args.scores, kinds=("scores",))
    items = []
    for pp in scored:
        page = _lookup(pages, pp.page_id)
        boxes = _boxes_for(page, dets, cfg)
        counts = gt_counts_for(page, boxes, cfg.match_iou) if params.neighbor_mode == "ground_truth_noisy" else None
        items.append((pp.page_id, boxes, [p.key for p in pp.pairs], [p.score for p in pp.pairs], counts))
    out = map_pages(_OptimizeJob(params), items, args.workers)
    save_decisions(args.output, out, {"c": params.c, "T": params.T, "neighbor_mode": params.neighbor_mode,
                                      "seed": params.seed, "node_budget": params.node_budget})
    uncertified = [d.page_id for d in out if not d.certified]
    for pid in uncertified:
        print(f"warning: node budget exhausted on page {pid}; decision not certified optimal", file=sys.stderr)
    print(f"accepted {sum(sum(d.accepted) for d in out)} of {sum(len(d.pairs) for d in out)} pairs")
    return EXIT_OK


def _results_from_file(path, pages: dict, dets, cfg) -> list[PageResult]:
    with open(path, encoding="utf-8") as fh:
        kind = json.load(fh).get("kind")
    results = []
    if kind == "decisions":
        _, decisions = load_decisions(path)
        for d in decisions:
            page = _lookup(pages, d.page_id)
            results.append(PageResult(d.page_id, page.boxes, page.relationships, _boxes_for(page, dets, cfg),
                                      [(a, b, s) for (a, b), s in zip(d.pairs, d.adjusted_scores)],
                                      accepted=d.accepted))
    else:
        _, _, scored = load_pairs(path, kinds=("scores",))
        for pp in scored:
            page = _lookup(pages, pp.page_id)
            results.append(PageResult(pp.page_id, page.boxes, page.relationships, _boxes_for(page, dets, cfg),
                                      [(p.a_id, p.b_id, p.score) for p in pp.pairs]))
    return results


def cmd_evaluate(args) -> int:
    pages = _pages_by_id(load_pages(args.pages))
    dets = _detections(args)
    cfg = _run_config(args)
    results = _results_from_file(args.results, pages, dets, cfg)
    report = evaluate(results, args.conf_threshold, args.score_threshold, args.iou)
    save_report(args.output, report)
    sys.stdout.write(report.table())
    return EXIT_OK


def _load_config(path: str | None) -> RunConfig:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise InvalidInputError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(doc)


def cmd_pipeline(args) -> int:
    cfg = _load_config(args.config)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    if args.detections:
        cfg = replace(cfg, use_detections=True)
    pages = load_pages(args.pages)
    dets = _detections(args) if cfg.use_detections else None
    if cfg.use_detections and dets is None:
        raise UsageError("the config asks for detections; pass --detections")
    model = load_model(cfg.model) if cfg.method == "mlp" else None
    outputs = run_pages(pages, cfg, model, dets)

    out = Path(args.output)
    save_candidates(out / "candidates.json", [o.candidates for o in outputs])
    save_scores(out / "scores.json", [o.scored for o in outputs], cfg.method)
    p = cfg.optimizer
    save_decisions(out / "decisions.json", [o.decision for o in outputs],
                   {"c": p.c, "T": p.T, "neighbor_mode": p.neighbor_mode, "seed": p.seed, "node_budget": p.node_budget})
    run = {k: v for k, v in cfg.to_dict().items() if k != "workers"}
    raw = evaluate_outputs(outputs, cfg, optimized=False)
    opt = evaluate_outputs(outputs, cfg, optimized=True)
    save_report(out / "report_scores.json", raw, run)
    save_report(out / "report.json", opt, run)
    print("scores:")
    sys.stdout.write(raw.table())
    print("optimized:")
    sys.stdout.write(opt.table())
    print(f"relationship F-m {opt.relationship_f:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(n_pages=args.n_pages, rows=args.rows, cols=args.cols, layout=args.layout, jitter=args.jitter,
                     distractors=args.distractors, seed=args.seed, nn_accuracy=args.nn_accuracy, prefix=args.prefix)
    pages = generate_synthetic_pages(spec)
    save_pages(args.output, pages)
    print(f"wrote {len(pages)} pages")
    return EXIT_OK


def cmd_overlay(args) -> int:
    pages = _pages_by_id(load_pages(args.pages))
    dets = _detections(args)
    cfg = _run_config(args)
    with open(args.results, encoding="utf-8") as fh:
        kind = json.load(fh).get("kind")
    jobs = []
    if kind == "decisions":
        for d in load_decisions(args.results)[1]:
            jobs.append((d.page_id, [(a, b, s) for (a, b), s in zip(d.pairs, d.adjusted_scores)], d.accepted, d.scores))
    else:
        for pp in load_pairs(args.results, kinds=("scores",))[2]:
            jobs.append((pp.page_id, [(p.a_id, p.b_id, p.score) for p in pp.pairs], None, None))
    if args.page_id:
        jobs = [j for j in jobs if j[0] == args.page_id]
        if not jobs:
            raise InvalidInputError(f"page {args.page_id!r} is not in {args.results}")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for page_id, pairs, accepted, raw in jobs:
        page = _lookup(pages, page_id)
        svg = render_overlay(page, pairs, accepted, _boxes_for(page, dets, cfg), raw,
                             args.score_threshold, background=args.background)
        with open(out / f"{page_id}.svg", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(svg)
    print(f"wrote {len(jobs)} overlays to {out}")
    return EXIT_OK


def cmd_anchors(args) -> int:
    shapes = []
    for path in args.pages:
        for page in load_pages(path):
            shapes.extend((b.width, b.height) for b in page.boxes)
    if len(shapes) < args.k:
        raise InvalidInputError(f"need at least k={args.k} boxes, found {len(shapes)}")
    result = cluster_anchors(shapes, args.k, spanning_seeds(shapes, args.k), args.max_iter)
    final = result.mean_iou_history[-1] if result.mean_iou_history else float("nan")
    write_json(args.output, {
        "format_version": FORMAT_VERSION,
        "kind": "anchors",
        "anchors": [list(a) for a in result.anchors],
        "iterations": result.iterations,
        "mean_iou_history": result.mean_iou_history,
    })
    print(f"{result.k} anchors after {result.iterations} iterations; mean IoU {final:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="formpair", description="Pair form labels with their values.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("candidates", help="line-of-sight candidate pairs")
    p.add_argument("pages")
    p.add_argument("-o", "--output", required=True)
    _add_boxes_args(p)
    _add_los_args(p)
    _add_workers(p)
    p.set_defaults(func=cmd_candidates)

    p = sub.add_parser("score", help="score candidate pairs")
    p.add_argument("pages")
    p.add_argument("pairs", help="candidates or scores file")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--model", help="model file for --method mlp")
    p.add_argument("-o", "--output", required=True)
    _add_boxes_args(p)
    _add_workers(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="train the spatial-feature classifier")
    p.add_argument("pages", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--gt-boxes", action="store_true", help="train on ground-truth boxes (the default)")
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--batch-size", type=_positive_int, default=TrainConfig.batch_size)
    p.add_argument("--iterations", type=int, default=TrainConfig.iterations)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=_positive_int, default=256)
    p.add_argument("--dropout", type=float, default=0.5)
    _add_boxes_args(p)
    _add_los_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("optimize", help="select a globally coherent set of pairs")
    p.add_argument("scores")
    p.add_argument("--pages", required=True, help="pages supplying boxes and neighbor counts")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--c", type=float, default=0.25)
    p.add_argument("--T", type=float, default=0.7)
    p.add_argument("--neighbor-mode", choices=NEIGHBOR_MODES, default="predicted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--node-budget", type=_positive_int, default=10**7)
    _add_boxes_args(p)
    _add_workers(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("evaluate", help="detection and relationship metrics")
    p.add_argument("pages")
    p.add_argument("results", help="scores or decisions file")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--conf-threshold", type=float, default=0.5)
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--iou", type=float, default=0.5)
    _add_boxes_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="candidates, scores, optimization and evaluation in one run")
    p.add_argument("pages")
    p.add_argument("--config", help=f"run config JSON (default: ${CONFIG_ENV} if set)")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--detections")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("synth", help="generate a synthetic page corpus")
    d = SynthSpec()
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--n-pages", type=int, default=d.n_pages)
    p.add_argument("--rows", type=_positive_int, default=d.rows)
    p.add_argument("--cols", type=_positive_int, default=d.cols)
    p.add_argument("--layout", choices=LAYOUTS, default=d.layout)
    p.add_argument("--jitter", type=float, default=d.jitter)
    p.add_argument("--distractors", type=int, default=d.distractors)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--nn-accuracy", type=float, default=d.nn_accuracy)
    p.add_argument("--prefix", default=d.prefix)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("overlay", help="render SVG overlays")
    p.add_argument("pages")
    p.add_argument("results", help="scores or decisions file")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--page-id")
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--background", help="image href to place under the overlay")
    _add_boxes_args(p)
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("anchors", help="cluster box shapes into anchor shapes")
    p.add_argument("pages", nargs="+")
    p.add_argument("-k", type=_positive_int, default=25)
    p.add_argument("--max-iter", type=_positive_int, default=300)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_anchors)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"formpair: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidInputError, OSError, json.JSONDecodeError, UnicodeDecodeError) as e:
        print(f"formpair: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001
        print(f"formpair: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
