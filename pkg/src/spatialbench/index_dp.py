"""Insertion-built data-partitioning trees: R-tree, R*-tree and RLR-tree.

All three share one insertion routine and differ only in how a subtree is
chosen and how an overfull node is split (plus R* forced reinsertion).
The mapping-based indices reuse the same routine with R-tree rules once their
packed skeleton starts receiving inserts.
"""
from __future__ import annotations

import math

import numpy as np

from .base import TreeIndex, as_points, point_rect
from .geometry import overlap_area, rects_area, rects_margin
from .learn.policy import PolicyModel, choose_features, split_features
from .storage import NODE_CAPACITY, BlockStore, NodePage

VARIANTS = ("rtree", "rstar", "rlr")
DEFAULT_FILL = 0.4
REINSERT_FRACTION = 0.3
RLR_CANDIDATES = 2


def _grown(rects: np.ndarray, rect: np.ndarray) -> np.ndarray:
    return np.column_stack([np.minimum(rects[:, 0], rect[0]), np.minimum(rects[:, 1], rect[1]),
                            np.maximum(rects[:, 2], rect[2]), np.maximum(rects[:, 3], rect[3])])


def _mbr(rects: np.ndarray) -> np.ndarray:
    return np.array([rects[:, 0].min(), rects[:, 1].min(), rects[:, 2].max(), rects[:, 3].max()])


def least_enlargement_order(rects: np.ndarray, rect: np.ndarray, page_ids: np.ndarray) -> np.ndarray:
    """Children ordered by area enlargement, then area, then page id."""
    area = rects_area(rects)
    enl = rects_area(_grown(rects, rect)) - area
    return np.lexsort((page_ids, area, enl))


def least_overlap_choice(rects: np.ndarray, rect: np.ndarray, page_ids: np.ndarray) -> int:
    """R* rule for the level above the leaves."""
    grown = _grown(rects, rect)
    before = overlap_area(rects[:, None, :], rects[None, :, :])
    after = overlap_area(grown[:, None, :], rects[None, :, :])
    np.fill_diagonal(before, 0.0)
    np.fill_diagonal(after, 0.0)
    overlap_enl = after.sum(axis=1) - before.sum(axis=1)
    area = rects_area(rects)
    area_enl = rects_area(grown) - area
    return int(np.lexsort((page_ids, area, area_enl, overlap_enl))[0])


def quadratic_split(rects: np.ndarray, min_fill: int) -> tuple[np.ndarray, np.ndarray]:
    """Guttman's quadratic split; returns index arrays of the two groups.

    Zero-area entries (points) make every area cost zero, so margin is used
    as a secondary cost throughout.
    """
    n = len(rects)
    area = rects_area(rects)
    margin = rects_margin(rects)
    lo = np.minimum(rects[:, None, :2], rects[None, :, :2])
    hi = np.maximum(rects[:, None, 2:], rects[None, :, 2:])
    j_area = np.prod(hi - lo, axis=2)
    j_margin = 2.0 * np.sum(hi - lo, axis=2)
    waste_a = j_area - area[:, None] - area[None, :]
    waste_m = j_margin - margin[:, None] - margin[None, :]
    iu, ju = np.triu_indices(n, 1)
    best = np.lexsort((-waste_m[iu, ju], -waste_a[iu, ju]))[0]
    s1, s2 = int(iu[best]), int(ju[best])

    groups = [[s1], [s2]]
    mbrs = [rects[s1].copy(), rects[s2].copy()]
    remaining = np.ones(n, dtype=bool)
    remaining[[s1, s2]] = False
    while remaining.any():
        rest = np.flatnonzero(remaining)
        for g in (0, 1):
            if len(groups[g]) + len(rest) == min_fill:
                groups[g].extend(rest.tolist())
                remaining[:] = False
                break
        if not remaining.any():
            break
        cand = rects[rest]
        d = []
        for g in (0, 1):
            grown = _grown(cand, mbrs[g])
            d.append((rects_area(grown) - rects_area(mbrs[g]), rects_margin(grown) - rects_margin(mbrs[g])))
        diff_a = np.abs(d[0][0] - d[1][0])
        diff_m = np.abs(d[0][1] - d[1][1])
        k = int(np.lexsort((-diff_m, -diff_a))[0])
        e = int(rest[k])
        key0 = (d[0][0][k], d[0][1][k], rects_area(mbrs[0]), len(groups[0]))
        key1 = (d[1][0][k], d[1][1][k], rects_area(mbrs[1]), len(groups[1]))
        g = 0 if key0 <= key1 else 1
        groups[g].append(e)
        mbrs[g] = _mbr(np.vstack([mbrs[g], rects[e]]))
        remaining[e] = False
    return np.array(groups[0]), np.array(groups[1])


def _prefix_mbrs(rects: np.ndarray) -> np.ndarray:
    return np.column_stack([np.minimum.accumulate(rects[:, 0]), np.minimum.accumulate(rects[:, 1]),
                            np.maximum.accumulate(rects[:, 2]), np.maximum.accumulate(rects[:, 3])])


def rstar_distributions(rects: np.ndarray, min_fill: int):
    """Candidate distributions along the R* split axis.

    Returns (orders, ks, g1, g2): for candidate c the first group is
    ``orders[c][:ks[c]]``; g1/g2 are the group MBRs.
    """
    n = len(rects)
    ks = np.arange(min_fill, n - min_fill + 1)
    per_axis = []
    for axis in (0, 1):
        entries = []
        margin_sum = 0.0
        for key in (axis, axis + 2):
            order = np.lexsort((rects[:, 2 + axis] if key == axis else rects[:, axis], rects[:, key]))
            r = rects[order]
            pre = _prefix_mbrs(r)
            suf = _prefix_mbrs(r[::-1])[::-1]
            g1 = pre[ks - 1]
            g2 = suf[ks]
            margin_sum += float(np.sum(rects_margin(g1) + rects_margin(g2)))
            entries.append((order, g1, g2))
        per_axis.append((margin_sum, entries))
    axis = 0 if per_axis[0][0] <= per_axis[1][0] else 1
    entries = per_axis[axis][1]
    orders = [e[0] for e in entries for _ in ks]
    all_ks = np.concatenate([ks, ks])
    g1 = np.vstack([e[1] for e in entries])
    g2 = np.vstack([e[2] for e in entries])
    return orders, all_ks, g1, g2


def rstar_split(rects: np.ndarray, min_fill: int) -> tuple[np.ndarray, np.ndarray]:
    orders, ks, g1, g2 = rstar_distributions(rects, min_fill)
    overlap = overlap_area(g1, g2)
    area = rects_area(g1) + rects_area(g2)
    c = int(np.lexsort((np.arange(len(ks)), area, overlap))[0])
    return orders[c][:ks[c]], orders[c][ks[c]:]


class RTreeIndex(TreeIndex):
    """Insertion-built R-tree family over a :class:`BlockStore`."""

    family = "dp"

    def __init__(self, store: BlockStore | None = None, variant: str = "rtree",
                 fill_ratio: float = DEFAULT_FILL, policy: PolicyModel | None = None,
                 capacity: int = NODE_CAPACITY, create: bool = True):
        super().__init__(store)
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.name = variant
        self.fill_ratio = fill_ratio
        self.capacity = capacity
        self.min_fill = math.ceil(fill_ratio * capacity)
        self.policy = policy if policy is not None else (PolicyModel.zeros() if variant == "rlr" else None)
        # child page id -> entry count; feeds the occupancy feature without extra reads
        self._counts: dict[int, int] = {}
        self.decision_log = None
        if create:
            self.root = self.store.write_page(NodePage(0))
            self._counts[self.root] = 0
            self.height = 1

    @classmethod
    def from_points(cls, points, variant: str = "rtree", store=None, **kw) -> "RTreeIndex":
        idx = cls(store, variant, **kw)
        pts = as_points(points)
        for x, y, i in zip(pts["x"].tolist(), pts["y"].tolist(), pts["id"].tolist()):
            idx.insert((x, y, i))
        return idx

    # -- decisions ---------------------------------------------------------

    def choose_subtree(self, node: NodePage, rect: np.ndarray) -> int:
        rects, ids = node.rects, node.payload
        if self.variant == "rstar" and node.level == 1:
            return least_overlap_choice(rects, rect, ids)
        order = least_enlargement_order(rects, rect, ids)
        if self.variant != "rlr" or len(order) < 2:
            return int(order[0])
        cand = order[:RLR_CANDIDATES]
        occ = np.array([self._counts.get(int(ids[c]), 0) for c in cand], dtype=np.float64) / self.capacity
        feats = choose_features(rects, rect, cand, occ)
        # least area enlargement is the prior; the policy adds corrections
        scores = self.policy.score_choose(feats) - feats[:, 0]
        pick = 0 if scores[0] >= scores[1] else 1
        pick = self._explore("choose_subtree", feats, pick)
        return int(cand[pick])

    def split_node(self, node: NodePage) -> tuple[NodePage, NodePage]:
        rects = node.rects
        if self.variant == "rstar":
            a, b = rstar_split(rects, self.min_fill)
        elif self.variant == "rlr":
            a, b = self._policy_split(rects)
        else:
            a, b = quadratic_split(rects, self.min_fill)
        return (NodePage(node.level, rects[a], node.payload[a]),
                NodePage(node.level, rects[b], node.payload[b]))

    def _policy_split(self, rects):
        # candidate 0 is the quadratic split, so ties (and the zero policy)
        # reproduce the plain R-tree; the rest come from the R* enumeration
        qa, qb = quadratic_split(rects, self.min_fill)
        orders, ks, g1, g2 = rstar_distributions(rects, self.min_fill)
        g1 = np.vstack([_mbr(rects[qa]), g1])
        g2 = np.vstack([_mbr(rects[qb]), g2])
        feats = split_features(g1, g2, _mbr(rects), np.concatenate([[len(qa)], ks]), self.capacity)
        scores = self.policy.score_split(feats)
        pick = int(np.flatnonzero(scores == scores.max())[0])
        pick = self._explore("split", feats, pick)
        if pick == 0:
            return qa, qb
        return orders[pick - 1][:ks[pick - 1]], orders[pick - 1][ks[pick - 1]:]

    def _explore(self, action: str, feats: np.ndarray, pick: int) -> int:
        # training hook: a trainer may replace the greedy pick and record features
        if self.decision_log is None:
            return pick
        return self.decision_log(action, feats, pick)

    # -- insertion ---------------------------------------------------------

    def insert(self, p) -> None:
        self.insert_entry(point_rect(p[0], p[1]), int(p[2]) if len(p) > 2 else self.count, 0, set())
        self.count += 1
        self.stats.inserts += 1

    def insert_entry(self, rect: np.ndarray, payload: int, level: int, reinserted: set) -> None:
        path = []
        pid = self.root
        node = self.store.read_page(pid)
        while node.level > level:
            i = self.choose_subtree(node, rect)
            path.append((pid, node, i))
            pid = int(node.payload[i])
            node = self.store.read_page(pid)
        node.append(rect, payload)

        pending = []
        first = True
        while True:
            sibling = None
            if node.count > self.capacity:
                if self.variant == "rstar" and pid != self.root and node.level not in reinserted:
                    reinserted.add(node.level)
                    node, evicted = self.reinsert_pick(node)
                    pending.extend(evicted)
                    self._write(node, pid)
                    self.stats.adjustments += 1
                else:
                    a, b = self.split_node(node)
                    self.stats.splits += 1
                    self._write(a, pid)
                    self.stats.adjustments += 1
                    bpid = self._write(b)
                    if pid == self.root:
                        root = NodePage(a.level + 1, np.vstack([a.mbr(), b.mbr()]),
                                        np.array([pid, bpid], dtype=np.uint64))
                        self.root = self._write(root)
                        self.height += 1
                        break
                    node = a
                    sibling = (b.mbr(), bpid)
            else:
                self._write(node, pid)
                if not first:
                    self.stats.adjustments += 1
            first = False
            if not path:
                break
            ppid, parent, i = path.pop()
            new_rect = node.mbr()
            changed = not np.array_equal(parent.rects[i], new_rect)
            if not changed and sibling is None:
                break
            parent.rects[i] = new_rect
            if sibling is not None:
                parent.append(sibling[0], sibling[1])
            pid, node = ppid, parent

        for rect_, payload_, level_ in pending:
            self.insert_entry(rect_, payload_, level_, reinserted)

    def reinsert_pick(self, node: NodePage):
        """Split off the entries farthest from the node's centre, farthest first."""
        rects = node.rects
        mbr = _mbr(rects)
        cx, cy = (mbr[0] + mbr[2]) / 2, (mbr[1] + mbr[3]) / 2
        ex = (rects[:, 0] + rects[:, 2]) / 2 - cx
        ey = (rects[:, 1] + rects[:, 3]) / 2 - cy
        dist = ex * ex + ey * ey
        order = np.lexsort((np.arange(len(dist)), -dist))
        p = int(REINSERT_FRACTION * node.count)
        out, keep = order[:p], np.sort(order[p:])
        kept = NodePage(node.level, rects[keep], node.payload[keep])
        evicted = [(rects[j].copy(), int(node.payload[j]), node.level) for j in out]
        return kept, evicted

    def _write(self, page: NodePage, pid: int | None = None) -> int:
        pid = self.store.write_page(page, pid, capacity=self.capacity)
        self._counts[pid] = page.count
        return pid

    def meta(self) -> dict:
        return {**super().meta(), "variant": self.variant, "fill_ratio": self.fill_ratio}


def dp_insert(idx: RTreeIndex, p) -> RTreeIndex:
    idx.insert(p)
    return idx


def build_dp(points, variant: str = "rtree", policy: PolicyModel | None = None,
             store: BlockStore | None = None, fill_ratio: float = DEFAULT_FILL) -> RTreeIndex:
    return RTreeIndex.from_points(points, variant, store=store, policy=policy, fill_ratio=fill_ratio)


def check_tree(idx: TreeIndex, fill_ratio: float | None = None) -> list[str]:
    """Structural problems of a balanced R-tree; empty when it is sound."""
    problems = []
    depths = set()
    m = math.ceil(fill_ratio * idx.capacity) if fill_ratio is not None else 0
    for pid, page, depth in idx.iter_nodes():
        if page.is_leaf:
            depths.add(depth)
        if pid != idx.root and page.count < m:
            problems.append(f"page {pid} underfull ({page.count} < {m})")
        if page.count > idx.capacity:
            problems.append(f"page {pid} overfull")
        if not page.is_leaf:
            for rect, child in zip(page.rects, page.payload):
                cp = idx.store.peek_page(int(child))
                if cp.level != page.level - 1:
                    problems.append(f"page {child} at level {cp.level} under level {page.level}")
                if cp.count and not np.array_equal(rect, cp.mbr()):
                    problems.append(f"entry for page {child} is not the union of its entries")
    if len(depths) > 1:
        problems.append(f"leaves at depths {sorted(depths)}")
    if depths and max(depths) + 1 != idx.height:
        problems.append(f"height {idx.height} but leaves at depth {max(depths)}")
    return problems
