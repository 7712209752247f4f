"""Mapping-based indices: curve-ordered packed R-trees and the ZM-index.

The packed trees (zr, zrr, bmtree) sort points by a one-dimensional key,
fill leaves to capacity and build the upper levels bottom-up.  Afterwards
they accept inserts through the ordinary R-tree routine, so key order is
only guaranteed right after the bulk load.
"""
from __future__ import annotations

import numpy as np

from .base import SpatialIndex, as_points, data_domain, make_points
from .geometry import (MBR, BMTreeCurve, bmtree_eval_many, interleave_cells, rank_bits,
                       rank_space_many, z_encode_many, z_intervals)
from .index_dp import RTreeIndex
from .storage import (LARGE_LEAF_CAPACITY, NODE_CAPACITY, POINTS_PER_PAGE, BlockStore, NodePage,
                      PageClass, alloc_large_leaf, append_large_leaf, read_large_leaf,
                      write_large_leaf)

Z_BITS = 16
# ZM range search: decompose the key interval when it spans more pages than this
ZM_SCAN_PAGES = 4
ZM_MAX_RANGES = 16
KEY_FUNCS = {"zr": "z", "zrr": "z_rank", "bmtree": "bmtree"}


def mp_keys(points: np.ndarray, key_fn: str, bits: int | None = None,
            curve: BMTreeCurve | None = None, domain: MBR | None = None) -> tuple[np.ndarray, int]:
    """One-dimensional keys for ``points`` and the per-dimension resolution used."""
    xs, ys = points["x"], points["y"]
    if domain is None:
        domain = data_domain(points)
    if key_fn == "z":
        bits = bits or Z_BITS
        return z_encode_many(xs, ys, bits, domain), bits
    if key_fn == "z_rank":
        rx, ry = rank_space_many(xs, ys, points["id"])
        bits = bits or rank_bits(len(points))
        return interleave_cells(rx, ry), bits
    if key_fn == "bmtree":
        if curve is None:
            raise ValueError("bmtree key function needs a curve")
        return bmtree_eval_many(curve, xs, ys, domain), curve.bits
    raise ValueError(f"unknown key function {key_fn!r}")


def pack_levels(store: BlockStore, rects: np.ndarray, payload: np.ndarray,
                capacity: int = NODE_CAPACITY) -> tuple[int, int, list[int]]:
    """Write sorted entries as full leaves and build parents level by level.

    Returns (root page id, height, leaf page ids).
    """
    level = 0
    leaf_ids = None
    while True:
        n = len(payload)
        starts = np.arange(0, n, capacity)
        ids = []
        for s in starts:
            ids.append(store.write_page(NodePage(level, rects[s:s + capacity], payload[s:s + capacity])))
        if leaf_ids is None:
            leaf_ids = ids
        if len(ids) == 1:
            return ids[0], level + 1, leaf_ids
        rects = np.column_stack([np.minimum.reduceat(rects[:, 0], starts), np.minimum.reduceat(rects[:, 1], starts),
                                 np.maximum.reduceat(rects[:, 2], starts), np.maximum.reduceat(rects[:, 3], starts)])
        payload = np.array(ids, dtype=np.uint64)
        level += 1


class MPIndex(RTreeIndex):
    """Curve-ordered packed R-tree; inserts use R-tree rules."""

    family = "mp"

    def __init__(self, store=None, name: str = "zr", key_fn: str = "z", bits: int = Z_BITS,
                 curve: BMTreeCurve | None = None, **kw):
        super().__init__(store, "rtree", create=False, **kw)
        self.name = name
        self.key_fn = key_fn
        self.bits = bits
        self.curve = curve

    @classmethod
    def bulk_load(cls, points, key_fn: str = "z", bits: int | None = None,
                  curve: BMTreeCurve | None = None, store: BlockStore | None = None,
                  name: str | None = None) -> "MPIndex":
        pts = as_points(points)
        if len(pts) == 0:
            raise ValueError("bulk load needs at least one point")
        keys, bits = mp_keys(pts, key_fn, bits, curve)
        order = np.lexsort((pts["id"], keys))
        pts = pts[order]
        name = name or {"z": "zr", "z_rank": "zrr", "bmtree": "bmtree"}[key_fn]
        idx = cls(store, name, key_fn, bits, curve)
        rects = np.column_stack([pts["x"], pts["y"], pts["x"], pts["y"]])
        idx.root, idx.height, idx.leaf_ids = pack_levels(idx.store, rects, pts["id"].astype(np.uint64))
        idx.sorted_keys = keys[order]
        idx.count = len(pts)
        for pid, page, _ in idx.iter_nodes():
            idx._counts[pid] = page.count
        return idx

    def meta(self) -> dict:
        return {**super().meta(), "key_fn": self.key_fn, "bits": self.bits}


def mp_bulk_load(points, key_fn: str = "z", bits: int | None = None, curve=None, store=None) -> MPIndex:
    return MPIndex.bulk_load(points, key_fn, bits, curve, store)


def mp_insert(idx: MPIndex, p) -> MPIndex:
    idx.insert(p)
    return idx


# -- ZM-index -----------------------------------------------------------------

def _fit_line(keys: np.ndarray, pos: np.ndarray) -> tuple[float, float]:
    if len(keys) == 0:
        return 0.0, 0.0
    k = keys.astype(np.float64)
    if len(keys) == 1 or np.all(k == k[0]):
        return 0.0, float(pos.mean())
    slope, intercept = np.polyfit(k, pos.astype(np.float64), 1)
    return float(slope), float(intercept)


class ZMIndex(SpatialIndex):
    """Points sorted by Z-value in large leaves, located with a two-stage
    recursive model.  Every model evaluation reads the page holding that
    model (one inner I/O); every large-leaf page touched is one leaf I/O."""

    name = "zm"
    family = "mp"
    is_tree = False
    capacity = LARGE_LEAF_CAPACITY

    def __init__(self, store=None):
        super().__init__(store)
        self.bits = Z_BITS
        self.domain = None
        self.n = 0
        self.m = 1
        self.model_pages: list[int] = []
        self.leaf_first: list[int] = []
        self.overflow: dict[int, list[list[int]]] = {}
        self.positions_examined = 0

    @classmethod
    def build(cls, points, bits: int = Z_BITS, m: int | None = None, store=None) -> "ZMIndex":
        pts = as_points(points)
        if len(pts) == 0:
            raise ValueError("ZM-index needs at least one point")
        idx = cls(store)
        idx.bits = bits
        idx.domain = data_domain(pts)
        keys = z_encode_many(pts["x"], pts["y"], bits, idx.domain)
        order = np.lexsort((pts["id"], keys))
        pts, keys = pts[order], keys[order]
        n = idx.n = idx.count = len(pts)
        idx.m = m if m is not None else max(1, n // 50_000)
        if idx.m < 1:
            raise ValueError("stage-2 model count must be >= 1")
        pos = np.arange(n)
        for s in range(0, n, LARGE_LEAF_CAPACITY):
            first = alloc_large_leaf(idx.store)
            sl = slice(s, s + LARGE_LEAF_CAPACITY)
            write_large_leaf(idx.store, first, pts["x"][sl], pts["y"][sl], pts["id"][sl])
            idx.leaf_first.append(first)

        root = _fit_line(keys, pos)
        route = idx._route(root, keys.astype(np.float64))
        models = []
        for j in range(idx.m):
            sel = route == j
            slope, icpt = _fit_line(keys[sel], pos[sel]) if sel.any() else root
            if sel.any():
                pred = np.rint(slope * keys[sel].astype(np.float64) + icpt)
                err = float(np.max(np.abs(pred - pos[sel])))
            else:
                err = 0.0
            models.append((slope, icpt, err))
        idx._write_models(root, models)
        return idx

    @property
    def extent(self) -> tuple:
        return tuple(self.domain)

    def _route(self, root, keys: np.ndarray) -> np.ndarray:
        pred = root[0] * keys + root[1]
        return np.clip(np.floor(pred * self.m / max(self.n, 1)), 0, self.m - 1).astype(np.int64)

    def _write_models(self, root, models) -> None:
        rects = np.array([[root[0], root[1], 0.0, 0.0]])
        page = NodePage(1, rects, np.array([self.m], dtype=np.uint64))
        self.model_pages = [self.store.write_page(page)]
        for s in range(0, len(models), NODE_CAPACITY):
            chunk = models[s:s + NODE_CAPACITY]
            rects = np.array([[a, b, e, 0.0] for a, b, e in chunk])
            payload = np.arange(s, s + len(chunk), dtype=np.uint64)
            self.model_pages.append(self.store.write_page(NodePage(1, rects, payload)))

    def _model(self, j: int | None):
        """Read one model's parameters (counted as one inner I/O)."""
        if j is None:
            page = self.store.read_page(self.model_pages[0], PageClass.INNER)
            return float(page.rects[0, 0]), float(page.rects[0, 1]), 0.0
        page = self.store.read_page(self.model_pages[1 + j // NODE_CAPACITY], PageClass.INNER)
        r = page.rects[j % NODE_CAPACITY]
        return float(r[0]), float(r[1]), float(r[2])

    def predict(self, key: int) -> tuple[int, int]:
        """Predicted position and error bound for ``key``."""
        root = self._model(None)
        j = int(self._route(root, np.array([float(key)]))[0])
        slope, icpt, err = self._model(j)
        return int(np.rint(slope * float(key) + icpt)), int(err)

    def window(self, key: int) -> tuple[int, int]:
        pred, err = self.predict(key)
        lo = min(max(pred - err, 0), self.n - 1)
        hi = min(max(pred + err, 0), self.n - 1)
        return lo, hi

    def _page(self, pos: int, cache: dict | None):
        """(first position, keys, x, y, ids) of the page holding sorted
        position ``pos``.  With a cache, a page touched twice in one query is
        read and counted once."""
        leaf = pos // LARGE_LEAF_CAPACITY
        lp = (pos - leaf * LARGE_LEAF_CAPACITY) // POINTS_PER_PAGE
        if cache is not None and (leaf, lp) in cache:
            return cache[leaf, lp]
        lstart = leaf * LARGE_LEAF_CAPACITY
        count = min(LARGE_LEAF_CAPACITY, self.n - lstart)
        x, y, i = read_large_leaf(self.store, self.leaf_first[leaf], count,
                                  lp * POINTS_PER_PAGE, (lp + 1) * POINTS_PER_PAGE)
        out = (lstart + lp * POINTS_PER_PAGE, self._keys(x, y), x, y, i)
        if cache is not None:
            cache[leaf, lp] = out
        return out

    def _read_positions(self, start: int, stop: int, cache: dict | None = None):
        """Points at sorted positions [start, stop), reading only covering pages."""
        xs, ys, ids = [np.empty(0)], [np.empty(0)], [np.empty(0, dtype=np.uint64)]
        pos = start
        while pos < stop:
            p0, _, x, y, i = self._page(pos, cache)
            sl = slice(pos - p0, min(stop - p0, len(i)))
            xs.append(x[sl])
            ys.append(y[sl])
            ids.append(i[sl])
            pos = p0 + len(i)
        return np.concatenate(xs), np.concatenate(ys), np.concatenate(ids)

    def _keys(self, xs, ys) -> np.ndarray:
        return z_encode_many(xs, ys, self.bits, self.domain)

    def lower_bound(self, key: int, cache: dict | None = None) -> int:
        """First sorted position whose key is >= ``key``.

        Binary search over pages inside the model's error window; a page
        whose keys straddle ``key`` settles it.  The window is guaranteed
        only for indexed keys, so for any other key a bracket edge that was
        never confirmed is checked and widened when needed.
        """
        cache = {} if cache is None else cache
        lo, hi = self.window(key)
        L, R = lo, hi + 1
        self.positions_examined = R - L
        left_ok, right_ok = L == 0, R == self.n
        target = np.uint64(key)
        while True:
            while L < R:
                p0, keys = self._page((L + R) // 2, cache)[:2]
                if keys[-1] < target:
                    L, left_ok = p0 + len(keys), True
                elif keys[0] >= target:
                    R, right_ok = p0, True
                else:
                    return p0 + int(np.searchsorted(keys, target, side="left"))
            if not left_ok:
                p0, keys = self._page(L - 1, cache)[:2]
                if keys[L - 1 - p0] < target:
                    left_ok = True
                else:
                    width = max(hi - lo + 1, POINTS_PER_PAGE)
                    R, right_ok = L, True
                    L = max(L - width, 0)
                    left_ok = L == 0
                    self.positions_examined += R - L
                    continue
            if not right_ok:
                p0, keys = self._page(R, cache)[:2]
                if keys[R - p0] >= target:
                    right_ok = True
                else:
                    width = max(hi - lo + 1, POINTS_PER_PAGE)
                    L, left_ok = R + 1, True
                    R = min(R + width, self.n)
                    right_ok = R == self.n
                    self.positions_examined += R - L
                    continue
            return L

    def _leaf_of(self, pos: int) -> int:
        return min(pos // LARGE_LEAF_CAPACITY, len(self.leaf_first) - 1)

    def _overflow_points(self, leaves):
        xs, ys, ids = [], [], []
        for leaf in leaves:
            for first, count in self.overflow.get(leaf, []):
                x, y, i = read_large_leaf(self.store, first, count)
                xs.append(x)
                ys.append(y)
                ids.append(i)
        if not xs:
            return np.empty(0), np.empty(0), np.empty(0, dtype=np.uint64)
        return np.concatenate(xs), np.concatenate(ys), np.concatenate(ids)

    def point_ids(self, qx: float, qy: float) -> np.ndarray:
        key = int(self._keys([qx], [qy])[0])
        cache: dict = {}
        start = stop = self.lower_bound(key, cache)
        # equal keys are contiguous; walk forward over (cached) pages
        while stop < self.n:
            p0, keys = self._page(stop, cache)[:2]
            end = p0 + int(np.searchsorted(keys, np.uint64(key), side="right"))
            if end < p0 + len(keys):
                stop = end
                break
            stop = p0 + len(keys)
        x, y, ids = self._read_positions(start, stop, cache)
        hit = ids[(x == qx) & (y == qy)]
        if self.overflow:
            ox, oy, oi = self._overflow_points([self._leaf_of(start)])
            hit = np.concatenate([hit, oi[(ox == qx) & (oy == qy)]])
        return hit

    def range_points(self, box):
        """(x, y, ids) of the points inside ``box``, boundary inclusive.

        The key interval [z(lo corner), z(hi corner)] is located first; when
        it spans more than a few pages it is decomposed into sub-intervals
        so pages between them are skipped."""
        cache: dict = {}
        top = 1 << (2 * self.bits)
        zlo = int(self._keys([box[0]], [box[1]])[0])
        zhi = int(self._keys([box[2]], [box[3]])[0])
        start = self.lower_bound(zlo, cache)
        stop = self.lower_bound(zhi + 1, cache) if zhi + 1 < top else self.n
        if stop - start <= ZM_SCAN_PAGES * POINTS_PER_PAGE:
            x, y, ids = self._read_positions(start, stop, cache)
        else:
            parts = []
            for a, b in z_intervals(box, self.bits, self.domain, ZM_MAX_RANGES):
                s = self.lower_bound(a, cache) if a > zlo else start
                e = stop if b >= zhi else self.lower_bound(b + 1, cache)
                parts.append(self._read_positions(s, e, cache))
            x, y, ids = (np.concatenate([p[k] for p in parts]) for k in range(3))
        if self.overflow:
            leaves = range(self._leaf_of(start), self._leaf_of(max(stop, start)) + 1)
            ox, oy, oi = self._overflow_points(leaves)
            x, y, ids = np.concatenate([x, ox]), np.concatenate([y, oy]), np.concatenate([ids, oi])
        inside = (x >= box[0]) & (x <= box[2]) & (y >= box[1]) & (y <= box[3])
        return x[inside], y[inside], ids[inside]

    def range_ids(self, box) -> np.ndarray:
        return self.range_points(box)[2]

    def insert(self, p) -> None:
        pid = int(p[2]) if len(p) > 2 else self.count
        key = int(self._keys([p[0]], [p[1]])[0])
        leaf = self._leaf_of(self.lower_bound(key))
        chain = self.overflow.setdefault(leaf, [])
        if not chain or chain[-1][1] >= LARGE_LEAF_CAPACITY:
            chain.append([alloc_large_leaf(self.store), 0])
            self.stats.splits += 1
        chain[-1][1] = append_large_leaf(self.store, chain[-1][0], chain[-1][1], p[0], p[1], pid)
        self.count += 1
        self.stats.inserts += 1

    def scan_counted(self) -> np.ndarray:
        x, y, ids = self._read_positions(0, self.n)
        ox, oy, oi = self._overflow_points(range(len(self.leaf_first)))
        return make_points(np.concatenate([x, ox]), np.concatenate([y, oy]), np.concatenate([ids, oi]))

    def all_points(self) -> np.ndarray:
        snap = self.store.snapshot()
        pts = self.scan_counted()
        self.store.io = snap
        return pts

    def build_stats(self):
        self.stats.height = 1
        return super().build_stats()

    def utilization(self) -> float:
        leaves = len(self.leaf_first) + sum(len(c) for c in self.overflow.values())
        return self.count / (LARGE_LEAF_CAPACITY * leaves)

    def meta(self) -> dict:
        return {**super().meta(), "bits": self.bits, "n": self.n, "m": self.m,
                "domain": ",".join(repr(v) for v in self.domain),
                "model_pages": ",".join(map(str, self.model_pages)),
                "leaf_first": ",".join(map(str, self.leaf_first)),
                "overflow": ";".join(f"{leaf}:" + ",".join(f"{a}/{c}" for a, c in chain)
                                     for leaf, chain in sorted(self.overflow.items()))}

    @classmethod
    def from_meta(cls, store, meta: dict) -> "ZMIndex":
        idx = cls(store)
        idx.bits = int(meta["bits"])
        idx.n = int(meta["n"])
        idx.count = int(meta["count"])
        idx.m = int(meta["m"])
        idx.domain = MBR(*(float(v) for v in meta["domain"].split(",")))
        idx.model_pages = [int(v) for v in meta["model_pages"].split(",")]
        idx.leaf_first = [int(v) for v in meta["leaf_first"].split(",")]
        for part in filter(None, meta.get("overflow", "").split(";")):
            leaf, _, chain = part.partition(":")
            idx.overflow[int(leaf)] = [[int(a), int(c)] for a, c in (x.split("/") for x in chain.split(","))]
        return idx


def zm_build(points, bits: int = Z_BITS, m: int | None = None, store=None) -> ZMIndex:
    return ZMIndex.build(points, bits, m, store)

