"""BM-tree curve training: quadtree partitioning plus per-partition merge-order search.

The curve is grown top-down.  Dense cells are first split quadtree style
(one x bit then one y bit).  Each resulting partition then gets its own bit
merge order for the remaining explicit levels, found by beam search over
"take the next x bit" / "take the next y bit" steps.  Below the explicit
levels the curve finishes in plain Z order.

Candidate curves are scored by the leaf blocks the training queries touch
once the sample is packed in curve order.  The measured reward builds that
packed index and runs the queries; the estimated reward computes the same
count from leaf bounding boxes without building anything.
"""
from __future__ import annotations

import time

import numpy as np

from ..base import as_points, data_domain
from ..geometry import (BMTreeCurve, CurveNode, bmtree_eval_cells, bmtree_eval_many, default_order,
                        quantize_many)
from ..index_mp import Z_BITS, MPIndex
from ..query import range_query
from ..storage import NODE_CAPACITY

BEAM = 8
MARGIN = 0.02
DENSITY = 0.5


class CurveTrainingError(ValueError):
    pass


class RewardEstimator:
    """Reward of a curve = minus the leaf blocks touched by the training queries."""

    def __init__(self, mode: str = "estimated", queries=None, capacity: int = NODE_CAPACITY):
        if mode not in ("measured", "estimated"):
            raise ValueError(f"unknown reward mode {mode!r}")
        self.mode = mode
        self.queries = np.zeros((0, 4)) if queries is None else np.asarray(queries, dtype=np.float64).reshape(-1, 4)
        self.capacity = capacity
        self.evaluations = 0

    def cost(self, curve: BMTreeCurve, pts: np.ndarray) -> int:
        self.evaluations += 1
        if self.mode == "measured":
            idx = MPIndex.bulk_load(pts, "bmtree", curve=curve)
            return sum(range_query(idx, q).leaf_io for q in self.queries)
        return leaf_block_cost(curve, pts, self.queries, self.capacity)

    def reward(self, curve: BMTreeCurve, pts: np.ndarray) -> float:
        return -float(self.cost(curve, pts))


def leaf_block_cost(curve: BMTreeCurve, pts: np.ndarray, queries: np.ndarray,
                    capacity: int = NODE_CAPACITY) -> int:
    """Leaves of the curve-packed sample whose bounding box meets a query,
    summed over queries.  A packed tree reads a leaf exactly when its box
    meets the query, so this matches the measured count."""
    keys = bmtree_eval_many(curve, pts["x"], pts["y"], data_domain(pts))
    order = np.lexsort((pts["id"], keys))
    x, y = pts["x"][order], pts["y"][order]
    starts = np.arange(0, len(x), capacity)
    lx, hx = np.minimum.reduceat(x, starts), np.maximum.reduceat(x, starts)
    ly, hy = np.minimum.reduceat(y, starts), np.maximum.reduceat(y, starts)
    q = queries
    hit = ((lx[None, :] <= q[:, 2:3]) & (q[:, 0:1] <= hx[None, :])
           & (ly[None, :] <= q[:, 3:4]) & (q[:, 1:2] <= hy[None, :]))
    return int(hit.sum())


def _next_bit(used: frozenset, dim: int, bits: int):
    for k in range(1, bits + 1):
        if (dim, k) not in used:
            return (dim, k)
    return None


def _chain(seq, used: frozenset, bits: int) -> CurveNode:
    """Subtree applying the dimension sequence ``seq`` uniformly below a node."""
    if not seq:
        return CurveNode()
    bit = _next_bit(used, seq[0], bits)
    child = lambda: _chain(seq[1:], used | {bit}, bits)  # noqa: E731
    return CurveNode(bit, [child(), child()])


def _valid(seq, used: frozenset, bits: int) -> bool:
    for d in seq:
        bit = _next_bit(used, d, bits)
        if bit is None:
            return False
        used = used | {bit}
    return True


def _used_after(seq, used: frozenset, bits: int) -> frozenset:
    for d in seq:
        used = used | {_next_bit(used, d, bits)}
    return used


def _default_seq(used: frozenset, length: int, bits: int):
    return tuple(d for d, _ in default_order(bits, used)[:length])


def _install(holder: CurveNode, sub: CurveNode) -> None:
    holder.bit, holder.children = sub.bit, sub.children


def train_bmtree(sample, height: int, training_queries, reward: RewardEstimator | str = "estimated",
                 seed: int = 0, bits: int = Z_BITS, beam: int = BEAM, margin: float = MARGIN,
                 density: float = DENSITY) -> BMTreeCurve:
    if not 1 <= height <= 2 * bits:
        raise CurveTrainingError(f"height must lie in [1, {2 * bits}], got {height}")
    pts = as_points(sample)
    if len(pts) == 0:
        raise CurveTrainingError("empty training sample")
    if isinstance(reward, str):
        reward = RewardEstimator(reward, training_queries)
    elif reward.queries.size == 0:
        reward.queries = np.asarray(training_queries, dtype=np.float64).reshape(-1, 4)
    t0 = time.perf_counter()
    domain = data_domain(pts)
    cx, cy = quantize_many(pts["x"], pts["y"], bits, domain)
    cells = (cx, cy)
    root = CurveNode()
    curve = BMTreeCurve(root, bits)

    # quadtree phase: split cells holding more than `density` of the sample
    partitions = []

    def quad(node, used, mask, depth):
        if depth + 2 <= height - 1 and mask.sum() > density * len(pts):
            bx = _next_bit(used, 0, bits)
            by = _next_bit(used, 1, bits)
            if bx is not None and by is not None:
                node.bit, node.children = bx, [CurveNode(by, [CurveNode(), CurveNode()]),
                                                CurveNode(by, [CurveNode(), CurveNode()])]
                u2 = used | {bx, by}
                for i in (0, 1):
                    for j in (0, 1):
                        sx = ((cells[0] >> np.uint64(bits - bx[1])) & np.uint64(1)) == i
                        sy = ((cells[1] >> np.uint64(bits - by[1])) & np.uint64(1)) == j
                        quad(node.children[i].children[j], u2, mask & sx & sy, depth + 2)
                return
        partitions.append((node, used, depth))

    quad(root, frozenset(), np.ones(len(pts), dtype=bool), 0)

    # merge-order phase: beam search per partition, keep plain Z unless clearly better
    for holder, used, depth in partitions:
        # a tree of height h has h - 1 levels of bit decisions above its leaves
        length = height - 1 - depth
        if length <= 0:
            continue
        default = _default_seq(used, length, bits)

        seen = {}

        def cost_of(seq):
            # a prefix and its plain-Z completion describe the same curve
            full = seq + _default_seq(_used_after(seq, used, bits), length - len(seq), bits)
            if full not in seen:
                _install(holder, _chain(full, used, bits))
                seen[full] = reward.cost(curve, pts)
            return seen[full]

        default_cost = cost_of(default)
        best_seq, best_cost = default, default_cost
        frontier = [()]
        for _ in range(length):
            scored = []
            for seq in frontier:
                for d in (0, 1):
                    cand = seq + (d,)
                    if not _valid(cand, used, bits):
                        continue
                    scored.append((cost_of(cand), cand))
            if not scored:
                break
            scored.sort()
            frontier = [s for _, s in scored[:beam]]
            if scored[0][0] < best_cost:
                best_cost, best_seq = scored[0]
        if not best_cost < default_cost * (1.0 - margin):
            best_seq = default
        _install(holder, _chain(best_seq, used, bits))

    curve.validate()
    curve.meta = {"height": height, "mode": reward.mode, "seed": seed, "partitions": len(partitions),
                  "evaluations": reward.evaluations, "train_seconds": time.perf_counter() - t0}
    return curve


def exhaustive_orders(used: frozenset, length: int, bits: int):
    """Every valid dimension sequence of the given length (for small checks)."""
    out = [()]
    for _ in range(length):
        out = [s + (d,) for s in out for d in (0, 1) if _valid(s + (d,), used, bits)]
    return out


def curve_for_orders(seq, bits: int) -> BMTreeCurve:
    return BMTreeCurve(_chain(tuple(seq), frozenset(), bits), bits)


def keys_injective(curve: BMTreeCurve) -> bool:
    """True when every cell of the curve's grid gets a distinct key."""
    side = 1 << curve.bits
    cx, cy = np.meshgrid(np.arange(side, dtype=np.uint64), np.arange(side, dtype=np.uint64))
    keys = bmtree_eval_cells(curve, cx.ravel(), cy.ravel())
    return len(np.unique(keys)) == side * side and int(keys.max()) < side * side

