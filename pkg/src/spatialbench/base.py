"""Shared index plumbing: point arrays, build statistics, the tree base class."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .storage import NODE_CAPACITY, BlockStore

POINT_DTYPE = np.dtype([("x", "<f8"), ("y", "<f8"), ("id", "<u8")])


def make_points(xs, ys, ids=None) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    pts = np.empty(len(xs), dtype=POINT_DTYPE)
    pts["x"] = xs
    pts["y"] = ys
    pts["id"] = np.arange(len(xs)) if ids is None else ids
    return pts


def as_points(points) -> np.ndarray:
    """Coerce a structured array, a list of Point-like tuples or an (n, 2|3) array."""
    if isinstance(points, np.ndarray) and points.dtype == POINT_DTYPE:
        return points
    if isinstance(points, np.ndarray) and points.dtype.names is None:
        arr = np.asarray(points, dtype=np.float64)
        ids = arr[:, 2].astype(np.uint64) if arr.shape[1] > 2 else None
        return make_points(arr[:, 0], arr[:, 1], ids)
    rows = list(points)
    if not rows:
        return np.empty(0, dtype=POINT_DTYPE)
    xs = [r[0] for r in rows]
    ys = [r[1] for r in rows]
    ids = [r[2] if len(r) > 2 else i for i, r in enumerate(rows)]
    return make_points(xs, ys, ids)


def point_rect(x: float, y: float) -> np.ndarray:
    return np.array([x, y, x, y], dtype=np.float64)


def data_domain(points: np.ndarray):
    from .geometry import MBR
    return MBR(float(points["x"].min()), float(points["y"].min()),
               float(points["x"].max()), float(points["y"].max()))


@dataclass
class BuildStats:
    splits: int = 0
    adjustments: int = 0
    height: int = 1
    page_count: int = 0
    inserts: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


class SpatialIndex:
    """Common surface of every index variant.

    Tree-structured indices expose ``root``/``height`` and store every node as
    a standard page; the learned indices (``is_tree = False``) answer queries
    through their own lookup methods.
    """

    name = "index"
    family = "?"
    is_tree = True
    capacity = NODE_CAPACITY

    def __init__(self, store: BlockStore | None = None):
        self.store = store if store is not None else BlockStore()
        self.stats = BuildStats()
        self.count = 0

    @property
    def size_bytes(self) -> int:
        return self.store.size_bytes

    def insert(self, p) -> None:
        raise NotImplementedError

    def build_stats(self) -> BuildStats:
        self.stats.page_count = self.store.page_count
        return self.stats

    def meta(self) -> dict:
        return {"index": self.name, "count": self.count, **{f"stats.{k}": v for k, v in self.build_stats().as_dict().items()}}


class TreeIndex(SpatialIndex):
    root: int
    height: int

    def read_node(self, page_id: int):
        return self.store.read_page(page_id)

    def iter_nodes(self):
        """Uncounted depth-first walk yielding (page_id, page, depth)."""
        stack = [(self.root, 0)]
        while stack:
            pid, depth = stack.pop()
            page = self.store.peek_page(pid)
            yield pid, page, depth
            if not page.is_leaf:
                for child in reversed(page.payload):
                    stack.append((int(child), depth + 1))

    def leaf_pages(self):
        return [(pid, page) for pid, page, _ in self.iter_nodes() if page.is_leaf]

    def all_points(self) -> np.ndarray:
        leaves = [page for _, page in self.leaf_pages()]
        if not leaves:
            return np.empty(0, dtype=POINT_DTYPE)
        rects = np.concatenate([p.rects for p in leaves])
        ids = np.concatenate([p.payload for p in leaves])
        return make_points(rects[:, 0], rects[:, 1], ids)

    def utilization(self) -> float:
        leaves = self.leaf_pages()
        if not leaves:
            return 0.0
        return sum(p.count for _, p in leaves) / (self.capacity * len(leaves))

    def scan_counted(self) -> np.ndarray:
        """Read every page through the counters and return all points."""
        out = []
        stack = [self.root]
        while stack:
            page = self.store.read_page(stack.pop())
            if page.is_leaf:
                out.append(make_points(page.rects[:, 0], page.rects[:, 1], page.payload))
            else:
                stack.extend(int(c) for c in reversed(page.payload))
        return np.concatenate(out) if out else np.empty(0, dtype=POINT_DTYPE)

    def build_stats(self):
        self.stats.height = self.height
        return super().build_stats()

    def meta(self) -> dict:
        return {**super().meta(), "root": self.root, "height": self.height}
