"""Exact global selection of relationships.

Maximizes over binary ``x``::

    f(x) = sum_r (p_r - T) x_r  -  c * sum_b (n_b - sum_{r in R_b} x_r)^2

where every candidate ``r`` touches exactly two boxes. ``solve_bnb`` is a
depth-first branch-and-bound over the connected components of the
box/candidate graph, bounding each node with a continuous relaxation;
``solve_bruteforce`` enumerates and serves as the test oracle.

Ties in ``f`` (within ``TIE_TOL``) go to the solution with fewer accepted
relationships, then to the lexicographically smallest ``x``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from formpair.errors import InvalidInputError, SizeError

TIE_TOL = 1e-9
BRUTEFORCE_MAX = 22


@dataclass
class PairingProblem:
    """One page's selection problem.

    ``endpoints[r]`` holds the two box indices of candidate ``r``; boxes are
    indexed ``0..len(n_targets)-1``.
    """

    probs: np.ndarray
    endpoints: np.ndarray
    n_targets: np.ndarray
    c: float = 0.25
    T: float = 0.7

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float).reshape(-1)
        self.endpoints = np.asarray(self.endpoints, dtype=int).reshape(-1, 2)
        self.n_targets = np.asarray(self.n_targets, dtype=float).reshape(-1)
        if len(self.endpoints) != len(self.probs):
            raise InvalidInputError("one endpoint pair is needed per candidate")
        if not np.all(np.isfinite(self.probs)) or np.any((self.probs < 0) | (self.probs > 1)):
            raise InvalidInputError("probabilities must lie in [0, 1]")
        if not np.all(np.isfinite(self.n_targets)) or np.any(self.n_targets < 0):
            raise InvalidInputError("neighbor targets must be finite and >= 0")
        if len(self.endpoints) and (
            self.endpoints.min() < 0
            or self.endpoints.max() >= len(self.n_targets)
            or np.any(self.endpoints[:, 0] == self.endpoints[:, 1])
        ):
            raise InvalidInputError("each candidate must join two distinct known boxes")
        if not (math.isfinite(self.c) and self.c >= 0):
            raise InvalidInputError("c must be >= 0")
        if not 0 <= self.T <= 1:
            raise InvalidInputError("T must be in [0, 1]")

    @property
    def size(self) -> int:
        return len(self.probs)

    @classmethod
    def from_pairs(
        cls,
        pairs: Sequence[tuple[str, str]],
        probs: Sequence[float],
        n_targets: Mapping[str, float],
        c: float = 0.25,
        T: float = 0.7,
    ) -> tuple["PairingProblem", list[str]]:
        """Build a problem from id pairs; returns it with the box-id order used."""
        box_ids = sorted(n_targets)
        index = {b: i for i, b in enumerate(box_ids)}
        try:
            ends = [(index[a], index[b]) for a, b in pairs]
        except KeyError as e:
            raise InvalidInputError(f"no neighbor target for box {e.args[0]!r}") from None
        targets = [n_targets[b] for b in box_ids]
        return cls(probs, np.array(ends, dtype=int).reshape(-1, 2), targets, c, T), box_ids


@dataclass
class PairingDecision:
    x: np.ndarray
    objective: float
    adjusted_scores: np.ndarray
    nodes: int = 0
    wall_time: float = 0.0
    certified: bool = True

    @property
    def accepted(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.x)]


def objective(problem: PairingProblem, x) -> float:
    x = np.asarray(x)
    if x.shape != (problem.size,):
        raise InvalidInputError(f"x has shape {x.shape}, expected ({problem.size},)")
    if not np.all((x == 0) | (x == 1)):
        raise InvalidInputError("x must be binary")
    return _objective(problem, x.astype(float))


def _objective(problem: PairingProblem, x: np.ndarray) -> float:
    load = np.zeros(len(problem.n_targets))
    np.add.at(load, problem.endpoints[:, 0], x)
    np.add.at(load, problem.endpoints[:, 1], x)
    return float(np.dot(problem.probs - problem.T, x) - problem.c * np.sum((problem.n_targets - load) ** 2))


def _decision(problem: PairingProblem, x: np.ndarray, nodes: int, started: float, certified: bool = True):
    x = x.astype(np.int8)
    adjusted = problem.probs - (1 - x)
    return PairingDecision(x, objective(problem, x), adjusted, nodes, time.perf_counter() - started, certified)


def _better(f_new: float, x_new, f_old: float, x_old) -> bool:
    """Tie-aware comparison shared by both solvers."""
    if x_old is None:
        return True
    if f_new > f_old + TIE_TOL:
        return True
    if f_new < f_old - TIE_TOL:
        return False
    n_new, n_old = int(np.sum(x_new)), int(np.sum(x_old))
    if n_new != n_old:
        return n_new < n_old
    return tuple(x_new) < tuple(x_old)


def solve_bruteforce(problem: PairingProblem) -> PairingDecision:
    """Enumerate every assignment; refuses more than ``BRUTEFORCE_MAX`` candidates.

    Among assignments within ``TIE_TOL`` of the best value the one with the
    fewest acceptances wins, then the lexicographically smallest.
    """
    started = time.perf_counter()
    m = problem.size
    if m > BRUTEFORCE_MAX:
        raise SizeError(f"brute force is limited to {BRUTEFORCE_MAX} candidates, got {m}")
    # rows in lexicographic order: bit j of row k is the (m-1-j)th binary digit of k
    codes = np.arange(2**m, dtype=np.int64)[:, None]
    xs = ((codes >> np.arange(m - 1, -1, -1)) & 1).astype(float)
    incidence = np.zeros((m, len(problem.n_targets)))
    incidence[np.arange(m), problem.endpoints[:, 0]] += 1
    incidence[np.arange(m), problem.endpoints[:, 1]] += 1
    f = xs @ (problem.probs - problem.T) - problem.c * np.sum((problem.n_targets - xs @ incidence) ** 2, axis=1)
    near = np.flatnonzero(f >= f.max() - TIE_TOL)
    counts = xs[near].sum(axis=1)
    best = near[counts == counts.min()][0]
    return _decision(problem, xs[best], 2**m, started)


class _Component:
    """Branch-and-bound over one connected component of the box/candidate graph.

    Boxes outside the component only add a constant to ``f``, so components
    are solved independently. Local variables are kept in ascending global
    order, which keeps the lexicographic tie-break consistent.

    Two node bounds are available. ``quadratic`` maximizes the concave
    continuous relaxation by coordinate ascent. ``envelope`` first replaces
    each box penalty by its piecewise-linear interpolation between integer
    neighbor counts (equal at every binary point, never below the quadratic
    penalty), which turns the relaxation into an LP. It is never looser, and
    on pages whose candidates join opposite classes only the LP is a flow
    problem whose optimum is already binary.
    """

    def __init__(self, problem: PairingProblem, rs: list[int], node_budget: int, bound: str = "envelope"):
        self.rs = rs
        boxes = sorted({int(b) for r in rs for b in problem.endpoints[r]})
        local = {b: i for i, b in enumerate(boxes)}
        self.lin = problem.probs[rs] - problem.T
        self.ends = [(local[int(problem.endpoints[r, 0])], local[int(problem.endpoints[r, 1])]) for r in rs]
        self.targets = problem.n_targets[boxes].astype(float)
        self.c = problem.c
        self.budget = node_budget
        self.bound = bound
        self.nodes = 0
        self.best_x: tuple | None = None
        self.best_f = -math.inf
        # -1 free, 0 rejected, 1 accepted
        self.fixed = [-1] * len(rs)
        if bound == "envelope" and self.c > 0:
            self._build_lp()

    def value(self, x) -> float:
        load = self.targets * 0.0
        for xi, (a, b) in zip(x, self.ends):
            load[a] += xi
            load[b] += xi
        return float(np.dot(self.lin, x) - self.c * np.sum((self.targets - load) ** 2))

    def _loads(self, x) -> list[float]:
        load = [0.0] * len(self.targets)
        for xi, (a, b) in zip(x, self.ends):
            load[a] += xi
            load[b] += xi
        return load

    def _build_lp(self) -> None:
        # columns: x_r, then one y per (box, unit of degree); sum_r x_r = sum_k y_bk
        m, nb = len(self.rs), len(self.targets)
        degree = [0] * nb
        for a, b in self.ends:
            degree[a] += 1
            degree[b] += 1
        cost = [-v for v in self.lin]
        rows, cols, vals = [], [], []
        for r, (a, b) in enumerate(self.ends):
            rows += [a, b]
            cols += [r, r]
            vals += [1.0, 1.0]
        col = m
        for b in range(nb):
            n = self.targets[b]
            for k in range(1, degree[b] + 1):
                # penalty increment (n-k)^2 - (n-k+1)^2, increasing in k
                cost.append(self.c * (2 * k - 2 * n - 1))
                rows.append(b)
                cols.append(col)
                vals.append(-1.0)
                col += 1
        self.lp_cost = np.array(cost)
        self.lp_eq = sparse.csr_matrix((vals, (rows, cols)), shape=(nb, col))
        self.lp_const = -self.c * float(np.sum(self.targets**2))
        self.lp_cols = col

    def _relax_envelope(self) -> tuple[float, list[float]]:
        m = len(self.rs)
        if self.c == 0:
            x = [float(f) if f >= 0 else (1.0 if self.lin[i] > 0 else 0.0) for i, f in enumerate(self.fixed)]
            return self.value(x), x
        bounds = [(f, f) if f >= 0 else (0.0, 1.0) for f in self.fixed] + [(0.0, 1.0)] * (self.lp_cols - m)
        res = linprog(self.lp_cost, A_eq=self.lp_eq, b_eq=np.zeros(self.lp_eq.shape[0]), bounds=bounds, method="highs")
        if res.status != 0:
            raise RuntimeError(f"LP relaxation failed: {res.message}")
        # solver tolerances are ~1e-7; pad so the bound stays an upper bound
        bound = -res.fun + self.lp_const + 1e-6 * (1.0 + abs(res.fun))
        return bound, [float(v) for v in res.x[:m]]

    def _relax_quadratic(self, start: list[float]) -> tuple[float, list[float]]:
        """Coordinate ascent on the concave relaxation plus its Frank-Wolfe gap.

        Each step is an exact 1-D maximization; the sweeps stop once no
        coordinate moves by 1e-7 or after 1000 sweeps. By concavity the
        relaxed value plus the gap bounds the relaxed maximum from above even
        if the sweeps stop early.
        """
        x = [float(f) if f >= 0 else min(1.0, max(0.0, s)) for f, s in zip(self.fixed, start)]
        load = self._loads(x)
        free = [i for i, f in enumerate(self.fixed) if f < 0]
        lin, tg, c = self.lin, self.targets, self.c
        if c > 0:
            for _ in range(1000):
                biggest = 0.0
                for i in free:
                    a, b = self.ends[i]
                    g = lin[i] + 2 * c * ((tg[a] - load[a]) + (tg[b] - load[b]))
                    new = min(1.0, max(0.0, x[i] + g / (4 * c)))
                    delta = new - x[i]
                    if delta:
                        x[i] = new
                        load[a] += delta
                        load[b] += delta
                        biggest = max(biggest, abs(delta))
                if biggest < 1e-7:
                    break
        else:
            for i in free:
                x[i] = 1.0 if lin[i] > 0 else 0.0
        gap = 0.0
        for i in free:
            a, b = self.ends[i]
            g = lin[i] + 2 * c * ((tg[a] - load[a]) + (tg[b] - load[b]))
            gap += max(g * (1.0 - x[i]), -g * x[i], 0.0)
        return self.value(x) + gap, x

    def relax(self, start: list[float]) -> tuple[float, list[float]]:
        """Upper bound on ``f`` over the current node, with the relaxed point."""
        if self.bound == "envelope":
            return self._relax_envelope()
        return self._relax_quadratic(start)

    def _offer(self, x) -> None:
        key = tuple(int(v) for v in x)
        f = self.value(key)
        if _better(f, key, self.best_f, self.best_x):
            self.best_f, self.best_x = f, key

    def _may_win_tie(self) -> bool:
        """Whether some completion of the current node beats the incumbent on the tie-break."""
        ones = sum(1 for f in self.fixed if f == 1)
        best_count = sum(self.best_x)
        if ones != best_count:
            return ones < best_count
        for f, b in zip(self.fixed, self.best_x):
            if f < 0:
                if b == 1:
                    return True
            elif f != b:
                return f < b
        return False

    def solve(self) -> bool:
        """Run the search; returns False when the node budget ran out."""
        self._offer([0] * len(self.rs))
        return self._search([0.5] * len(self.rs))

    def _search(self, warm: list[float]) -> bool:
        self.nodes += 1
        if self.nodes > self.budget:
            return False
        bound, x = self.relax(warm)
        if bound < self.best_f - TIE_TOL:
            return True
        self._offer([1 if v > 0.5 else 0 for v in x])
        if bound <= self.best_f + TIE_TOL and not self._may_win_tie():
            return True
        free = [i for i, f in enumerate(self.fixed) if f < 0]
        if not free:
            return True
        load = self._loads(x)

        def weight(i):
            a, b = self.ends[i]
            return abs(self.lin[i]) + 2 * self.c * (abs(self.targets[a] - load[a]) + abs(self.targets[b] - load[b]))

        # fractional variables first, then the one whose decision moves f the most
        pick = max(free, key=lambda i: (1e-6 < x[i] < 1 - 1e-6, weight(i), -i))
        first = 1 if x[pick] > 0.5 else 0
        for v in (first, 1 - first):
            self.fixed[pick] = v
            ok = self._search(x)
            self.fixed[pick] = -1
            if not ok:
                return False
        return True


def _components(problem: PairingProblem) -> list[list[int]]:
    parent = list(range(len(problem.n_targets)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in problem.endpoints:
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for r, (a, _) in enumerate(problem.endpoints):
        groups.setdefault(find(int(a)), []).append(r)
    return [groups[k] for k in sorted(groups)]


def solve_bnb(problem: PairingProblem, node_budget: int = 10**7, bound: str = "envelope") -> PairingDecision:
    """Provably optimal selection by depth-first branch-and-bound.

    ``bound`` picks the node relaxation (see :class:`_Component`). When
    ``node_budget`` nodes are exhausted in some component the best solution
    found so far is returned with ``certified=False``.
    """
    if bound not in ("envelope", "quadratic"):
        raise InvalidInputError(f"unknown bound {bound!r}")
    started = time.perf_counter()
    x = np.zeros(problem.size)
    nodes = 0
    certified = True
    for rs in _components(problem):
        comp = _Component(problem, rs, node_budget, bound)
        certified &= comp.solve()
        nodes += comp.nodes
        x[rs] = comp.best_x
    return _decision(problem, x, nodes, started, certified)


def relaxation_bound(problem: PairingProblem, bound: str = "quadratic") -> float:
    """Root upper bound: relaxed maximum plus the constant from untouched boxes."""
    total = 0.0
    touched = set()
    for rs in _components(problem):
        comp = _Component(problem, rs, 1, bound)
        total += comp.relax([0.5] * len(rs))[0]
        touched.update(int(b) for r in rs for b in problem.endpoints[r])
    rest = [i for i in range(len(problem.n_targets)) if i not in touched]
    return total - problem.c * float(np.sum(problem.n_targets[rest] ** 2))


def apply_neighbor_mode(
    box_ids: Sequence[str],
    nn_pred: Mapping[str, float],
    mode: str = "predicted",
    gt_counts: Mapping[str, float] | None = None,
    seed: int = 0,
) -> dict[str, float]:
    """Neighbor targets per box.

    ``predicted`` copies the predicted counts. ``ground_truth_noisy`` adds
    continuous Uniform(-1, 1) noise to the ground-truth counts, drawn from a
    generator seeded with ``seed`` in ``box_ids`` order, then clips at zero
    since a target must be non-negative.
    """
    if mode == "predicted":
        return {b: float(nn_pred[b]) for b in box_ids}
    if mode == "ground_truth_noisy":
        if gt_counts is None or any(b not in gt_counts for b in box_ids):
            missing = [b for b in box_ids if gt_counts is None or b not in gt_counts]
            raise InvalidInputError(f"ground-truth neighbor counts missing for {missing[:5]}")
        rng = np.random.default_rng(seed)
        noise = rng.uniform(-1.0, 1.0, size=len(box_ids))
        return {b: max(0.0, float(gt_counts[b]) + float(u)) for b, u in zip(box_ids, noise)}
    raise InvalidInputError(f"unknown neighbor mode {mode!r}")
