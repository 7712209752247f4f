"""Space-partitioning indices: KD-tree, greedy KD-tree, Qd-tree and LISA-lite.

The binary trees share one page layout: a cut node is an inner page with two
entries whose rectangles are the child regions (outer edges are infinite, so
every point of the plane falls in some region); leaves are standard point
pages of capacity 100.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import POINT_DTYPE, SpatialIndex, TreeIndex, as_points, make_points
from .storage import (LARGE_LEAF_CAPACITY, NODE_CAPACITY, BlockStore, NodePage, PageClass,
                      alloc_large_leaf, append_large_leaf, read_large_leaf, write_large_leaf)

INF = math.inf
FULL_REGION = (-INF, -INF, INF, INF)
SP_VARIANTS = ("kd", "gkd", "qd")
MEDIAN, QUERY = 0, 1


class SelectorError(ValueError):
    """Missing or unusable cut selector."""


@dataclass(frozen=True)
class CutCandidate:
    dimension: int
    threshold: float
    provenance: int  # MEDIAN or QUERY
    n_left: int


def levels_needed(n: int, capacity: int = NODE_CAPACITY) -> int:
    """Cut levels a balanced binary partition needs for n points."""
    blocks = math.ceil(n / capacity)
    return math.ceil(math.log2(blocks)) if blocks > 1 else 0


def median_cut(pts: np.ndarray, depth: int) -> tuple[CutCandidate, np.ndarray]:
    """Lower median along the alternating axis (x first); ties broken by id.
    Returns the cut and the left-side mask."""
    dim = depth % 2
    coord = pts["x"] if dim == 0 else pts["y"]
    order = np.lexsort((pts["id"], coord))
    k = (len(pts) - 1) // 2
    left = np.zeros(len(pts), dtype=bool)
    left[order[:k + 1]] = True
    return CutCandidate(dim, float(coord[order[k]]), MEDIAN, k + 1), left


def queries_in_region(queries: np.ndarray, region) -> np.ndarray:
    if len(queries) == 0:
        return queries
    m = ((queries[:, 0] <= region[2]) & (region[0] <= queries[:, 2])
         & (queries[:, 1] <= region[3]) & (region[1] <= queries[:, 3]))
    return queries[m]


class CutSpace:
    """Candidate cuts of one region and their expected block cost.

    Candidates are the training-query edges strictly inside the region plus
    the median.  A cut is only admitted when neither side needs more cut
    levels than a median split would, so query-aware trees never grow deeper
    than the KD-tree on the same points.  The cost of a cut is the number of
    leaf blocks the region's training queries would touch on each side.
    """

    def __init__(self, pts: np.ndarray, region, depth: int, queries: np.ndarray,
                 capacity: int = NODE_CAPACITY):
        self.pts = pts
        self.region = region
        self.depth = depth
        self.capacity = capacity
        self.queries = queries_in_region(queries, region)
        n = self.n = len(pts)
        med, self.median_left = median_cut(pts, depth)
        cands = [med]
        limit = capacity * 2 ** max(levels_needed(n, capacity) - 1, 0)
        if len(self.queries):
            for dim in (0, 1):
                coord = np.sort(pts["x"] if dim == 0 else pts["y"])
                ts = np.unique(np.concatenate([self.queries[:, dim], self.queries[:, dim + 2]]))
                ts = ts[(ts > region[dim]) & (ts < region[dim + 2])]
                nl = np.searchsorted(coord, ts, side="right")
                ok = (nl > 0) & (nl < n) & (np.maximum(nl, n - nl) <= limit)
                cands.extend(CutCandidate(dim, float(t), QUERY, int(k)) for t, k in zip(ts[ok], nl[ok]))
        self.candidates = cands
        self.costs = np.array([self.cost(c) for c in cands], dtype=np.float64)

    def blocks(self, n: int) -> int:
        return math.ceil(n / self.capacity)

    def cost(self, c: CutCandidate) -> float:
        q = self.queries
        if len(q) == 0:
            return 0.0
        touch_left = np.count_nonzero(q[:, c.dimension] <= c.threshold)
        touch_right = np.count_nonzero(q[:, c.dimension + 2] >= c.threshold)
        return float(touch_left * self.blocks(c.n_left) + touch_right * self.blocks(self.n - c.n_left))

    def tie_key(self, i: int):
        c = self.candidates[i]
        return (abs(c.n_left - self.n / 2), c.provenance, c.dimension, c.threshold)

    def ranked(self, scores: np.ndarray) -> list[int]:
        """Candidate indices, best (highest score) first, deterministic ties."""
        return sorted(range(len(self.candidates)), key=lambda i: (-scores[i], self.tie_key(i)))

    def greedy_scores(self) -> np.ndarray:
        return -self.costs / self.norm()

    def norm(self) -> float:
        return max(len(self.queries), 1) * max(self.blocks(self.n), 1)

    def greedy(self) -> int:
        return self.ranked(self.greedy_scores())[0]

    def features(self) -> np.ndarray:
        """Per-candidate (query provenance, blocks-skipped estimate, balance)."""
        prov = np.array([c.provenance for c in self.candidates], dtype=np.float64)
        skipped = 1.0 + self.greedy_scores()
        bal = np.array([min(c.n_left, self.n - c.n_left) / self.n for c in self.candidates])
        return np.column_stack([prov, skipped, bal])

    def split(self, i: int):
        """(left points, left region, right points, right region) for candidate i."""
        c = self.candidates[i]
        if c.provenance == MEDIAN:
            left = self.median_left
        else:
            coord = self.pts["x"] if c.dimension == 0 else self.pts["y"]
            left = coord <= c.threshold
        lr = list(self.region)
        rr = list(self.region)
        lr[c.dimension + 2] = c.threshold
        rr[c.dimension] = c.threshold
        return self.pts[left], tuple(lr), self.pts[~left], tuple(rr)


class GreedySelector:
    """Picks the cut with the lowest expected block cost."""

    def select(self, space: CutSpace) -> int:
        return space.greedy()


class SPIndex(TreeIndex):
    family = "sp"

    def __init__(self, store: BlockStore | None = None, variant: str = "kd",
                 queries=None, selector=None, capacity: int = NODE_CAPACITY):
        super().__init__(store)
        if variant not in SP_VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.name = variant
        self.capacity = capacity
        self.queries = np.zeros((0, 4)) if queries is None else np.asarray(queries, dtype=np.float64).reshape(-1, 4)
        self.selector = selector
        self.root = -1
        self.height = 1
        self._building = True

    @classmethod
    def build(cls, points, variant: str = "kd", queries=None, selector=None,
              store: BlockStore | None = None) -> "SPIndex":
        pts = as_points(points)
        if len(pts) == 0:
            raise ValueError("cannot build on an empty point set")
        if variant in ("gkd", "qd") and (queries is None or len(queries) == 0):
            raise ValueError(f"{variant} needs at least one training query")
        if variant == "qd":
            if selector is None or not hasattr(selector, "select"):
                raise SelectorError("qd build needs a trained selector")
        idx = cls(store, variant, queries, selector)
        idx.root, idx.height = idx._build(pts, FULL_REGION, 0)
        idx.count = len(pts)
        idx._building = False
        return idx

    def _cut(self, pts, region, depth):
        if self.variant == "kd":
            c, left = median_cut(pts, depth)
            lr, rr = list(region), list(region)
            lr[c.dimension + 2] = c.threshold
            rr[c.dimension] = c.threshold
            return pts[left], tuple(lr), pts[~left], tuple(rr)
        space = CutSpace(pts, region, depth, self.queries, self.capacity)
        if self.variant == "qd" and self._building:
            i = self.selector.select(space)
            if not 0 <= i < len(space.candidates):
                raise SelectorError(f"selector returned candidate {i} of {len(space.candidates)}")
        else:
            i = space.greedy()
        return space.split(i)

    def _build(self, pts, region, depth, at: int | None = None) -> tuple[int, int]:
        if len(pts) <= self.capacity:
            rects = np.column_stack([pts["x"], pts["y"], pts["x"], pts["y"]])
            return self.store.write_page(NodePage(0, rects, pts["id"].astype(np.uint64)), at), 1
        lp, lr, rp, rr = self._cut(pts, region, depth)
        if not self._building:
            self.stats.splits += 1
        lid, lh = self._build(lp, lr, depth + 1)
        rid, rh = self._build(rp, rr, depth + 1)
        page = NodePage(1, np.array([lr, rr], dtype=np.float64), np.array([lid, rid], dtype=np.uint64))
        return self.store.write_page(page, at), 1 + max(lh, rh)

    def insert(self, p) -> None:
        x, y = p[0], p[1]
        pid_ = int(p[2]) if len(p) > 2 else self.count
        pid, region, depth = self.root, FULL_REGION, 0
        node = self.store.read_page(pid)
        while not node.is_leaf:
            r = node.rects
            inside = np.flatnonzero((r[:, 0] <= x) & (x <= r[:, 2]) & (r[:, 1] <= y) & (y <= r[:, 3]))
            i = int(inside[0])
            region = tuple(float(v) for v in r[i])
            pid = int(node.payload[i])
            node = self.store.read_page(pid)
            depth += 1
        node.append((x, y, x, y), pid_)
        if node.count <= self.capacity:
            self.store.write_page(node, pid)
        else:
            pts = make_points(node.rects[:, 0], node.rects[:, 1], node.payload)
            _, h = self._build(pts, region, depth, at=pid)
            self.height = max(self.height, depth + h)
        self.count += 1
        self.stats.inserts += 1

    def meta(self) -> dict:
        return {**super().meta(), "variant": self.variant}


def kd_build(points, store=None) -> SPIndex:
    return SPIndex.build(points, "kd", store=store)


def gkd_build(points, training_queries, store=None) -> SPIndex:
    return SPIndex.build(points, "gkd", training_queries, store=store)


def qd_build(points, selector, training_queries, store=None) -> SPIndex:
    return SPIndex.build(points, "qd", training_queries, selector, store=store)


def sp_insert(idx: SPIndex, p) -> SPIndex:
    idx.insert(p)
    return idx


def leaf_regions(idx: SPIndex) -> list[tuple]:
    """(region, points) for every leaf, from an uncounted walk."""
    out = []
    stack = [(idx.root, FULL_REGION)]
    while stack:
        pid, region = stack.pop()
        page = idx.store.peek_page(pid)
        if page.is_leaf:
            out.append((region, page))
        else:
            for rect, child in zip(page.rects, page.payload):
                stack.append((int(child), tuple(float(v) for v in rect)))
    return out


# -- LISA-lite ------------------------------------------------------------------

_FRAC_MAX = 1.0 - 2.0 ** -40


def grid_size(n: int) -> int:
    return math.ceil(math.sqrt(n / LARGE_LEAF_CAPACITY)) * 2


class LisaIndex(SpatialIndex):
    """Grid of equi-depth cells, a mapped value per point (cell index plus the
    x offset inside the cell), and shards of 10,000 points cut along the
    mapped order.  A monotone piecewise-linear model sends a mapped value to
    its shard; full shards grow overflow leaves instead of splitting."""

    name = "lisa"
    family = "sp"
    is_tree = False
    capacity = LARGE_LEAF_CAPACITY

    def __init__(self, store=None):
        super().__init__(store)
        self.g = 1
        self.bx = np.array([0.0, 1.0])
        self.by = np.array([0.0, 1.0])
        self.knots_m = np.zeros(1)
        self.knots_s = np.zeros(1)
        self.model_pages: list[int] = []
        self.dir_pages: list[int] = []
        # leaf entries: [lo_M, hi_M, shard, count, first_page]
        self.leaves: list[list] = []

    @classmethod
    def build(cls, points, store=None) -> "LisaIndex":
        pts = as_points(points)
        n = len(pts)
        if n == 0:
            raise ValueError("cannot build on an empty point set")
        idx = cls(store)
        idx.g = g = grid_size(n)
        qs = np.linspace(0.0, 1.0, g + 1)
        idx.bx = np.quantile(pts["x"], qs)
        idx.by = np.quantile(pts["y"], qs)
        mv = idx.mapped(pts["x"], pts["y"])
        order = np.lexsort((pts["id"], mv))
        pts, mv = pts[order], mv[order]
        shards = math.ceil(n / LARGE_LEAF_CAPACITY)
        starts = np.arange(shards) * LARGE_LEAF_CAPACITY
        idx.knots_m = mv[starts].astype(np.float64)
        idx.knots_s = np.arange(shards, dtype=np.float64)
        for s, a in enumerate(starts):
            b = min(a + LARGE_LEAF_CAPACITY, n)
            first = alloc_large_leaf(idx.store)
            write_large_leaf(idx.store, first, pts["x"][a:b], pts["y"][a:b], pts["id"][a:b])
            idx.leaves.append([float(mv[a]), float(mv[b - 1]), s, b - a, first])
        idx.count = n
        idx._write_model()
        idx._write_directory()
        return idx

    def cells(self, xs, ys):
        g = self.g
        ix = np.clip(np.searchsorted(self.bx[1:-1], xs, side="right"), 0, g - 1)
        iy = np.clip(np.searchsorted(self.by[1:-1], ys, side="right"), 0, g - 1)
        return ix, iy

    def _frac(self, xs, ix):
        lo, hi = self.bx[ix], self.bx[ix + 1]
        width = hi - lo
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(width > 0, (np.asarray(xs) - lo) / np.where(width > 0, width, 1.0), 0.0)
        return np.clip(f, 0.0, _FRAC_MAX)

    def mapped(self, xs, ys) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        ix, iy = self.cells(xs, ys)
        return (ix * self.g + iy).astype(np.float64) + self._frac(xs, ix)

    def shard_of(self, mv) -> np.ndarray:
        """Monotone shard prediction for mapped values."""
        mv = np.atleast_1d(np.asarray(mv, dtype=np.float64))
        if len(self.knots_m) == 1:
            return np.zeros(len(mv), dtype=np.int64)
        s = np.floor(np.interp(mv, self.knots_m, self.knots_s))
        return np.clip(s, 0, len(self.knots_m) - 1).astype(np.int64)

    # model and directory live in inner pages; reading them is inner I/O
    def _write_model(self) -> None:
        rows = max(self.g + 1, len(self.knots_m))
        table = np.full((rows, 4), np.nan)
        table[:self.g + 1, 0] = self.bx
        table[:self.g + 1, 1] = self.by
        table[:len(self.knots_m), 2] = self.knots_m
        table[:len(self.knots_m), 3] = self.knots_s
        self.model_pages = []
        for s in range(0, rows, NODE_CAPACITY):
            chunk = table[s:s + NODE_CAPACITY]
            page = NodePage(1, chunk, np.arange(s, s + len(chunk), dtype=np.uint64))
            self.model_pages.append(self.store.write_page(page))

    def _dir_page(self, k: int) -> NodePage:
        chunk = self.leaves[k * NODE_CAPACITY:(k + 1) * NODE_CAPACITY]
        rects = np.array([[e[0], e[1], e[2], e[3]] for e in chunk], dtype=np.float64)
        return NodePage(1, rects, np.array([e[4] for e in chunk], dtype=np.uint64))

    def _write_directory(self, only: int | None = None) -> None:
        pages = math.ceil(len(self.leaves) / NODE_CAPACITY)
        for k in range(pages):
            if only is not None and k != only:
                continue
            at = self.dir_pages[k] if k < len(self.dir_pages) else None
            pid = self.store.write_page(self._dir_page(k), at)
            if at is None:
                self.dir_pages.append(pid)

    def _load(self) -> None:
        """Read model and directory pages (the per-lookup inner I/O)."""
        rows = [self.store.read_page(p, PageClass.INNER).rects for p in self.model_pages]
        table = np.vstack(rows)
        self.bx = table[:self.g + 1, 0].copy()
        self.by = table[:self.g + 1, 1].copy()
        k = ~np.isnan(table[:, 2])
        self.knots_m = table[k, 2].copy()
        self.knots_s = table[k, 3].copy()
        entries = []
        for p in self.dir_pages:
            page = self.store.read_page(p, PageClass.INNER)
            for r, first in zip(page.rects, page.payload):
                entries.append([float(r[0]), float(r[1]), int(r[2]), int(r[3]), int(first)])
        self.leaves = entries

    def candidate_leaves(self, ranges) -> list[int]:
        """Leaves whose mapped interval meets any [a, b] in ``ranges``."""
        out = []
        for k, (lo, hi, _, count, _) in enumerate(self.leaves):
            if count and any(lo <= b and a <= hi for a, b in ranges):
                out.append(k)
        return out

    def query_ranges(self, box) -> list[tuple[float, float]]:
        (ix0, ix1), (iy0, iy1) = self.cells([box[0], box[2]], [box[1], box[3]])
        ranges = []
        for ix in range(int(ix0), int(ix1) + 1):
            fa = float(self._frac([box[0]], np.array([ix]))[0]) if ix == ix0 else 0.0
            fb = float(self._frac([box[2]], np.array([ix]))[0]) if ix == ix1 else _FRAC_MAX
            for iy in range(int(iy0), int(iy1) + 1):
                base = float(ix * self.g + iy)
                ranges.append((base + fa, base + fb))
        return ranges

    def lookup(self, q) -> list[int]:
        """Candidate shard ids for a point ``(x, y)`` or a box ``(x0, y0, x1, y1)``."""
        self._load()
        box = q if len(q) == 4 else (q[0], q[1], q[0], q[1])
        return sorted({self.leaves[k][2] for k in self.candidate_leaves(self.query_ranges(box))})

    def _scan(self, leaves, box):
        xs, ys, ids = [np.empty(0)], [np.empty(0)], [np.empty(0, dtype=np.uint64)]
        for k in leaves:
            _, _, _, count, first = self.leaves[k]
            x, y, i = read_large_leaf(self.store, first, count)
            m = (x >= box[0]) & (x <= box[2]) & (y >= box[1]) & (y <= box[3])
            xs.append(x[m])
            ys.append(y[m])
            ids.append(i[m])
        return np.concatenate(xs), np.concatenate(ys), np.concatenate(ids)

    def range_points(self, box):
        """(x, y, ids) of the points inside ``box``, boundary inclusive."""
        self._load()
        return self._scan(self.candidate_leaves(self.query_ranges(box)), box)

    def range_ids(self, box) -> np.ndarray:
        return self.range_points(box)[2]

    def point_ids(self, qx: float, qy: float) -> np.ndarray:
        return self.range_ids((qx, qy, qx, qy))

    def insert(self, p) -> None:
        self._load()
        x, y = float(p[0]), float(p[1])
        pid = int(p[2]) if len(p) > 2 else self.count
        mv = float(self.mapped([x], [y])[0])
        shard = int(self.shard_of(mv)[0])
        ks = [k for k, e in enumerate(self.leaves) if e[2] == shard]
        k = ks[-1]
        if self.leaves[k][3] >= LARGE_LEAF_CAPACITY:
            self.leaves.append([mv, mv, shard, 0, alloc_large_leaf(self.store)])
            k = len(self.leaves) - 1
            self.stats.splits += 1
        e = self.leaves[k]
        e[3] = append_large_leaf(self.store, e[4], e[3], x, y, pid)
        e[0] = min(e[0], mv)
        e[1] = max(e[1], mv)
        self._write_directory(only=k // NODE_CAPACITY)
        self.count += 1
        self.stats.inserts += 1

    def scan_counted(self) -> np.ndarray:
        self._load()
        out = []
        for _, _, _, count, first in self.leaves:
            x, y, ids = read_large_leaf(self.store, first, count)
            out.append(make_points(x, y, ids))
        return np.concatenate(out) if out else np.empty(0, dtype=POINT_DTYPE)

    def all_points(self) -> np.ndarray:
        snap = self.store.snapshot()
        pts = self.scan_counted()
        self.store.io = snap
        return pts

    @property
    def extent(self) -> tuple:
        return (float(self.bx[0]), float(self.by[0]), float(self.bx[-1]), float(self.by[-1]))

    @property
    def shard_count(self) -> int:
        return len(self.knots_m)

    def build_stats(self):
        self.stats.height = 1
        return super().build_stats()

    def utilization(self) -> float:
        return self.count / (LARGE_LEAF_CAPACITY * len(self.leaves))

    def meta(self) -> dict:
        return {**super().meta(), "g": self.g,
                "model_pages": ",".join(map(str, self.model_pages)),
                "dir_pages": ",".join(map(str, self.dir_pages))}

    @classmethod
    def from_meta(cls, store, meta: dict) -> "LisaIndex":
        idx = cls(store)
        idx.g = int(meta["g"])
        idx.count = int(meta["count"])
        idx.model_pages = [int(v) for v in meta["model_pages"].split(",")]
        idx.dir_pages = [int(v) for v in meta["dir_pages"].split(",")]
        snap = store.snapshot()
        idx._load()
        store.io = snap
        return idx


def lisa_build(points, store=None) -> LisaIndex:
    return LisaIndex.build(points, store)


def lisa_lookup(idx: LisaIndex, q) -> list[int]:
    return idx.lookup(q)


def lisa_insert(idx: LisaIndex, p) -> LisaIndex:
    idx.insert(p)
    return idx
