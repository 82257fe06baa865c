"""Line-of-sight candidate relationships.

Rays leave every edge of every box along a small fan around the outward
normal and stop at the first box they enter. Two boxes become a candidate
pair when either one sees the other within the ray length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from formpair.errors import InvalidInputError
from formpair.geometry import TextBox, intersection_area


@dataclass(frozen=True)
class LosConfig:
    points_per_edge: int = 16
    fan_degrees: tuple[float, ...] = (-45.0, -22.5, 0.0, 22.5, 45.0)
    max_ray_len: float = 600.0
    cap: int = 370
    shrink_factor: float = 0.75
    opposite_class_only: bool = True

    def __post_init__(self):
        object.__setattr__(self, "fan_degrees", tuple(float(a) for a in self.fan_degrees))
        if self.points_per_edge < 1:
            raise InvalidInputError("points_per_edge must be >= 1")
        if not 0.0 < self.shrink_factor < 1.0:
            raise InvalidInputError("shrink_factor must be in (0, 1)")
        if self.cap < 1:
            raise InvalidInputError("cap must be >= 1")
        if not self.max_ray_len > 0:
            raise InvalidInputError("max_ray_len must be > 0")
        if not self.fan_degrees:
            raise InvalidInputError("fan_degrees must not be empty")


@dataclass
class CandidatePair:
    """An unordered pair of box ids, stored with ``a_id < b_id``."""

    a_id: str
    b_id: str
    sight_distance: float
    features: list[float] | None = None
    score: float | None = None

    def __post_init__(self):
        if self.a_id == self.b_id:
            raise InvalidInputError(f"pair of box {self.a_id!r} with itself")
        if self.a_id > self.b_id:
            self.a_id, self.b_id = self.b_id, self.a_id
        if not self.sight_distance >= 0:
            raise InvalidInputError("sight_distance must be >= 0")

    @property
    def key(self) -> tuple[str, str]:
        return (self.a_id, self.b_id)


# outward normals for the top, bottom, left and right edges (image y grows downward)
_EDGES = (
    ((0.0, -1.0), lambda r, f: (r[0] + f * (r[2] - r[0]), r[1])),
    ((0.0, 1.0), lambda r, f: (r[0] + f * (r[2] - r[0]), r[3])),
    ((-1.0, 0.0), lambda r, f: (r[0], r[1] + f * (r[3] - r[1]))),
    ((1.0, 0.0), lambda r, f: (r[2], r[1] + f * (r[3] - r[1]))),
)


def ray_bundle(rect, cfg: LosConfig) -> tuple[np.ndarray, np.ndarray]:
    """Origins and unit directions of every ray cast from ``rect``."""
    fracs = [(i + 0.5) / cfg.points_per_edge for i in range(cfg.points_per_edge)]
    origins, dirs = [], []
    for (nx, ny), point_at in _EDGES:
        for f in fracs:
            o = point_at(rect, f)
            for deg in cfg.fan_degrees:
                a = math.radians(deg)
                ca, sa = math.cos(a), math.sin(a)
                origins.append(o)
                dirs.append((nx * ca - ny * sa, nx * sa + ny * ca))
    return np.asarray(origins, dtype=float), np.asarray(dirs, dtype=float)


def ray_entry(origins: np.ndarray, dirs: np.ndarray, rects: np.ndarray) -> np.ndarray:
    """Entry parameter of each ray into each rectangle, shape (n_rays, n_rects).

    Uses the slab method. A ray must pass through the rectangle's interior to
    count; grazing an edge or corner is a miss (``inf``). Rays starting inside
    or on the boundary of a rectangle they then enter get ``0``.
    """
    t_lo = np.full((len(origins), len(rects)), -np.inf)
    t_hi = np.full((len(origins), len(rects)), np.inf)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for axis in (0, 1):
            o = origins[:, axis][:, None]
            d = dirs[:, axis][:, None]
            lo = rects[:, axis][None, :]
            hi = rects[:, axis + 2][None, :]
            parallel = np.abs(d) < 1e-12
            t1 = (lo - o) / d
            t2 = (hi - o) / d
            near = np.where(parallel, np.where((o > lo) & (o < hi), -np.inf, np.inf), np.minimum(t1, t2))
            far = np.where(parallel, np.where((o > lo) & (o < hi), np.inf, -np.inf), np.maximum(t1, t2))
            t_lo = np.maximum(t_lo, near)
            t_hi = np.minimum(t_hi, far)
    entry = np.maximum(t_lo, 0.0)
    return np.where(t_hi > entry, entry, np.inf)


def _first_hits(source: TextBox, others: Sequence[TextBox], cfg: LosConfig) -> dict[str, float]:
    """Nearest hit per ray, reduced to the shortest distance per hit box."""
    if not others:
        return {}
    others = sorted(others, key=lambda b: b.id)
    rects = np.array([b.rect for b in others], dtype=float)
    origins, dirs = ray_bundle(source.rect, cfg)
    t = ray_entry(origins, dirs, rects)
    first = np.argmin(t, axis=1)
    first_t = t[np.arange(len(t)), first]
    hits: dict[str, float] = {}
    for j, dist in zip(first, first_t):
        if np.isfinite(dist):
            bid = others[j].id
            hits[bid] = min(hits.get(bid, math.inf), float(dist))
    for b in others:
        if intersection_area(source.rect, b.rect) > 0.0:
            hits[b.id] = 0.0
    return hits


def cast_rays(source: TextBox, others: Sequence[TextBox], cfg: LosConfig, ray_len: float) -> list[tuple[str, float]]:
    """Boxes seen from ``source`` within ``ray_len``, as sorted ``(hit_id, distance)``.

    Overlapping boxes are hit at distance 0.
    """
    if not ray_len > 0:
        raise InvalidInputError("ray_len must be > 0")
    if any(o.id == source.id for o in others):
        raise InvalidInputError(f"source box {source.id!r} is also among the targets")
    hits = _first_hits(source, others, cfg)
    return sorted((bid, d) for bid, d in hits.items() if d <= ray_len)


def sight_distances(boxes: Sequence[TextBox], cfg: LosConfig) -> dict[tuple[str, str], float]:
    """Shortest hit distance for every unordered pair seen within ``max_ray_len``.

    No class filtering and no cap.
    """
    ids = [b.id for b in boxes]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("box ids must be unique within a page")
    out: dict[tuple[str, str], float] = {}
    for i, src in enumerate(boxes):
        others = boxes[:i] + boxes[i + 1 :]
        for bid, d in _first_hits(src, others, cfg).items():
            if d > cfg.max_ray_len:
                continue
            key = (src.id, bid) if src.id < bid else (bid, src.id)
            out[key] = min(out.get(key, math.inf), d)
    return out


def generate_candidates(boxes: Sequence[TextBox], cfg: LosConfig = LosConfig()) -> list[CandidatePair]:
    """Candidate pairs for one page, sorted by ``(a_id, b_id)``.

    While there are more than ``cfg.cap`` pairs the ray length is multiplied by
    ``cfg.shrink_factor``. A ray's first hit does not depend on its length, so
    shortening the rays only drops pairs whose sight distance exceeds the new
    length; this is the same result as re-casting at every length. If the rays
    fall below one pixel and the cap still does not hold, the ``cap`` pairs
    with the smallest sight distance are kept.
    """
    boxes = list(boxes)
    if len(boxes) <= 1:
        return []
    by_id = {b.id: b for b in boxes}
    dist = sight_distances(boxes, cfg)
    if cfg.opposite_class_only:
        dist = {k: d for k, d in dist.items() if by_id[k[0]].cls is not by_id[k[1]].cls}

    ray_len = cfg.max_ray_len
    kept = dist
    while len(kept) > cfg.cap and ray_len >= 1.0:
        ray_len *= cfg.shrink_factor
        kept = {k: d for k, d in kept.items() if d <= ray_len}
    if len(kept) > cfg.cap:
        kept = dict(sorted(kept.items(), key=lambda kv: (kv[1], kv[0]))[: cfg.cap])
    return [CandidatePair(a, b, d) for (a, b), d in sorted(kept.items())]
