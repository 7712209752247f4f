"""Point, range, kNN and join queries over any index, with per-query I/O."""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import rects_contain_point, rects_intersect, rects_min_dist_sq
from .storage import IOCounters


@dataclass
class QueryResult:
    ids: list
    leaf_io: int = 0
    inner_io: int = 0
    wall_nanos: int = 0
    page_writes: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def io(self) -> int:
        return self.leaf_io + self.inner_io


class _Measure:
    """Counter and clock deltas over one query on one or two stores."""

    def __init__(self, stores, clock):
        self.stores = list({id(s): s for s in stores}.values())
        self.clock = clock

    def __enter__(self):
        self.before = [s.snapshot() for s in self.stores]
        self.t0 = self.clock()
        return self

    def __exit__(self, *exc):
        self.nanos = self.clock() - self.t0
        delta = IOCounters()
        for s, b in zip(self.stores, self.before):
            delta = delta + (s.snapshot() - b)
        self.delta = delta
        return False

    def result(self, ids) -> QueryResult:
        d = self.delta
        return QueryResult(ids, d.leaf_reads, d.inner_reads, int(self.nanos), d.page_writes)


def _clock(clock):
    return clock if clock is not None else time.perf_counter_ns


# -- point and range ------------------------------------------------------------

def _tree_point(idx, x, y) -> list:
    out = []
    stack = [idx.root]
    while stack:
        page = idx.store.read_page(stack.pop())
        if page.is_leaf:
            r = page.rects
            hit = (r[:, 0] == x) & (r[:, 1] == y)
            out.extend(int(v) for v in page.payload[hit])
        else:
            inside = rects_contain_point(page.rects, x, y)
            stack.extend(int(c) for c in page.payload[inside][::-1])
    return out


def _tree_range(idx, box) -> list:
    out = []
    stack = [idx.root]
    while stack:
        page = idx.store.read_page(stack.pop())
        r = page.rects
        if page.is_leaf:
            m = (r[:, 0] >= box[0]) & (r[:, 0] <= box[2]) & (r[:, 1] >= box[1]) & (r[:, 1] <= box[3])
            out.extend(int(v) for v in page.payload[m])
        else:
            stack.extend(int(c) for c in page.payload[rects_intersect(r, box)][::-1])
    return out


def point_query(idx, q, clock=None) -> QueryResult:
    x, y = float(q[0]), float(q[1])
    with _Measure([idx.store], _clock(clock)) as m:
        if idx.is_tree:
            ids = _tree_point(idx, x, y)
        else:
            ids = [int(v) for v in idx.point_ids(x, y)]
    return m.result(ids)


def range_query(idx, box, clock=None) -> QueryResult:
    box = tuple(float(v) for v in box)
    with _Measure([idx.store], _clock(clock)) as m:
        if idx.is_tree:
            ids = _tree_range(idx, box)
        else:
            ids = [int(v) for v in idx.range_ids(box)]
    return m.result(ids)


# -- kNN ------------------------------------------------------------------------

def _tree_knn(idx, x, y, k) -> list:
    """Best-first search.  Heap order is (squared distance, kind, tiebreak):
    nodes (kind 0) are expanded before points at equal distance, and points
    at equal distance come out in id order."""
    heap = [(0.0, 0, 0, idx.root)]
    seq = 1
    out = []
    while heap and len(out) < k:
        d, kind, tb, ref = heapq.heappop(heap)
        if kind == 1:
            out.append(tb)
            continue
        page = idx.store.read_page(ref)
        ds = rects_min_dist_sq(page.rects, x, y)
        if page.is_leaf:
            for dv, pid in zip(ds.tolist(), page.payload.tolist()):
                heapq.heappush(heap, (dv, 1, pid, None))
        else:
            for dv, child in zip(ds.tolist(), page.payload.tolist()):
                heapq.heappush(heap, (dv, 0, seq, child))
                seq += 1
    return out


def _flat_knn(idx, x, y, k) -> list:
    """Growing-window search for indices without a node hierarchy.  A window
    of half-width r holds every point within distance r, so once the k-th
    nearest candidate lies within r the answer is final.  The first window
    is the expected k-NN radius under uniform density over the index extent."""
    n = idx.count
    k = min(k, n)
    x0, y0, x1, y1 = idx.extent
    r = max(math.sqrt(k * (x1 - x0) * (y1 - y0) / (math.pi * n)), 1e-12)
    while True:
        px, py, ids = idx.range_points((x - r, y - r, x + r, y + r))
        if len(ids) >= k:
            d = (px - x) ** 2 + (py - y) ** 2
            order = np.lexsort((ids, d))
            if d[order[k - 1]] <= r * r or len(ids) >= n:
                return [int(v) for v in ids[order[:k]]]
        r *= 2.0


def knn_query(idx, q, k: int, clock=None) -> QueryResult:
    if k < 1:
        raise ValueError("k must be at least 1")
    x, y = float(q[0]), float(q[1])
    with _Measure([idx.store], _clock(clock)) as m:
        ids = _tree_knn(idx, x, y, k) if idx.is_tree else _flat_knn(idx, x, y, k)
    return m.result(ids)


# -- join -----------------------------------------------------------------------

def _expand(r, eps):
    return (r[0] - eps, r[1] - eps, r[2] + eps, r[3] + eps)


def _leaf_pairs(pa, pb, eps, out) -> None:
    a, b = pa.rects, pb.rects
    hit = ((np.abs(a[:, None, 0] - b[None, :, 0]) <= eps)
           & (np.abs(a[:, None, 1] - b[None, :, 1]) <= eps))
    ia, ib = np.nonzero(hit)
    out.extend(zip(pa.payload[ia].tolist(), pb.payload[ib].tolist()))


def _tree_join(a, b, eps) -> list:
    """Synchronized descent.  Both inner: recurse into intersecting child
    pairs.  One side at a leaf: keep descending the other side alone, so
    trees of different (or uneven) depth meet at their leaves."""
    out = []
    stack = [(a.root, b.root)]
    while stack:
        ra, rb = stack.pop()
        pa, pb = a.store.read_page(ra), b.store.read_page(rb)
        if pa.is_leaf and pb.is_leaf:
            _leaf_pairs(pa, pb, eps, out)
        elif pa.is_leaf:
            box = _expand(_bounds(pa.rects), eps)
            for c in pb.payload[rects_intersect(pb.rects, box)][::-1]:
                stack.append((ra, int(c)))
        elif pb.is_leaf:
            box = _expand(_bounds(pb.rects), eps)
            for c in pa.payload[rects_intersect(pa.rects, box)][::-1]:
                stack.append((int(c), rb))
        else:
            ea = pa.rects
            eb = pb.rects
            hit = ((ea[:, None, 0] - eps <= eb[None, :, 2]) & (eb[None, :, 0] <= ea[:, None, 2] + eps)
                   & (ea[:, None, 1] - eps <= eb[None, :, 3]) & (eb[None, :, 1] <= ea[:, None, 3] + eps))
            ia, ib = np.nonzero(hit)
            for i, j in reversed(list(zip(ia.tolist(), ib.tolist()))):
                stack.append((int(pa.payload[i]), int(pb.payload[j])))
    return out


def _bounds(rects: np.ndarray):
    return (rects[:, 0].min(), rects[:, 1].min(), rects[:, 2].max(), rects[:, 3].max())


def _eps_edge(x: float, eps: float, sign: float) -> float:
    """Outermost float v on one side of x with abs(v - x) <= eps in floating point."""
    inside = x
    pad = 4 * math.ulp(max(abs(x), eps))
    outside = x + sign * (eps + pad)
    # the predicate is monotone in v, so bisect between a passing and a failing bound
    while True:
        mid = (inside + outside) / 2
        if mid == inside or mid == outside:
            return inside
        if abs(mid - x) <= eps:
            inside = mid
        else:
            outside = mid


def _eps_span(x: float, eps: float):
    """Closed float interval matching the leaf-level pair test, so range probes
    and the tree join agree on boundary pairs."""
    return _eps_edge(x, eps, -1.0), _eps_edge(x, eps, 1.0)


def _nested_join(a, b, eps) -> list:
    """Index nested loop: scan the smaller side, probe the other with range lookups."""
    swap = a.count < b.count
    outer, inner = (a, b) if swap else (b, a)
    pts = outer.scan_counted()
    out = []
    for x, y, pid in zip(pts["x"].tolist(), pts["y"].tolist(), pts["id"].tolist()):
        (x0, x1), (y0, y1) = _eps_span(x, eps), _eps_span(y, eps)
        box = (x0, y0, x1, y1)
        hits = _tree_range(inner, box) if inner.is_tree else inner.range_ids(box)
        for h in hits:
            out.append((pid, int(h)) if swap else (int(h), pid))
    return out


def spatial_join(a, b, eps: float = 0.0, clock=None) -> QueryResult:
    """All (id_a, id_b) with |dx| <= eps and |dy| <= eps, sorted."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    with _Measure([a.store, b.store], _clock(clock)) as m:
        if a.is_tree and b.is_tree:
            pairs = _tree_join(a, b, eps)
        else:
            pairs = _nested_join(a, b, eps)
    return m.result(sorted(pairs))
