"""Points, rectangles and the space-filling-curve keys used to order them.

Scalar helpers work on ``Point``/``MBR`` tuples; the ``*_many`` variants take
numpy arrays and are what the index builders use.
"""
from __future__ import annotations

import math
from typing import Iterator, NamedTuple, Sequence

import numpy as np

MAX_BITS = 31


class GeometryError(ValueError):
    """Raised for points outside a key domain or an unusable resolution."""


class CurveStructureError(ValueError):
    """Raised when a BM-tree curve does not consume every bit exactly once."""


class Point(NamedTuple):
    x: float
    y: float
    id: int = 0


class MBR(NamedTuple):
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def lo(self) -> tuple[float, float]:
        return (self.xmin, self.ymin)

    @property
    def hi(self) -> tuple[float, float]:
        return (self.xmax, self.ymax)

    @classmethod
    def of_point(cls, p) -> "MBR":
        return cls(p[0], p[1], p[0], p[1])

    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def margin(self) -> float:
        return 2.0 * ((self.xmax - self.xmin) + (self.ymax - self.ymin))

    def is_valid(self) -> bool:
        return self.xmin <= self.xmax and self.ymin <= self.ymax


class SFCKey(NamedTuple):
    value: int
    bits: int


def mbr_union(a: MBR, b: MBR) -> MBR:
    return MBR(min(a.xmin, b.xmin), min(a.ymin, b.ymin),
               max(a.xmax, b.xmax), max(a.ymax, b.ymax))


def mbr_intersection_area(a: MBR, b: MBR) -> float:
    w = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    h = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def mbr_metrics(a: MBR, b: MBR) -> tuple[float, float, float]:
    """Return (area enlargement, margin enlargement, overlap area) of adding b to a."""
    u = mbr_union(a, b)
    return (u.area() - a.area(), u.margin() - a.margin(), mbr_intersection_area(a, b))


def mbr_contains(r: MBR, q) -> bool:
    return r.xmin <= q[0] <= r.xmax and r.ymin <= q[1] <= r.ymax


def mbr_intersects(a: MBR, b: MBR) -> bool:
    return a.xmin <= b.xmax and b.xmin <= a.xmax and a.ymin <= b.ymax and b.ymin <= a.ymax


def min_dist(q, r: MBR) -> float:
    # hypot keeps tiny gaps from underflowing to zero
    dx = max(r.xmin - q[0], 0.0, q[0] - r.xmax)
    dy = max(r.ymin - q[1], 0.0, q[1] - r.ymax)
    return math.hypot(dx, dy)


def min_dist_sq(q, r: MBR) -> float:
    dx = max(r.xmin - q[0], 0.0, q[0] - r.xmax)
    dy = max(r.ymin - q[1], 0.0, q[1] - r.ymax)
    return dx * dx + dy * dy


# -- vectorised rectangle helpers; rects are (n, 4) float arrays -------------

def rects_union(rects: np.ndarray) -> np.ndarray:
    return np.array([rects[:, 0].min(), rects[:, 1].min(), rects[:, 2].max(), rects[:, 3].max()])


def rects_area(rects: np.ndarray) -> np.ndarray:
    return (rects[..., 2] - rects[..., 0]) * (rects[..., 3] - rects[..., 1])


def rects_margin(rects: np.ndarray) -> np.ndarray:
    return 2.0 * ((rects[..., 2] - rects[..., 0]) + (rects[..., 3] - rects[..., 1]))


def rects_intersect(rects: np.ndarray, box) -> np.ndarray:
    return ((rects[:, 0] <= box[2]) & (box[0] <= rects[:, 2])
            & (rects[:, 1] <= box[3]) & (box[1] <= rects[:, 3]))


def rects_contain_point(rects: np.ndarray, x: float, y: float) -> np.ndarray:
    return (rects[:, 0] <= x) & (x <= rects[:, 2]) & (rects[:, 1] <= y) & (y <= rects[:, 3])


def rects_min_dist_sq(rects: np.ndarray, x: float, y: float) -> np.ndarray:
    dx = np.maximum(np.maximum(rects[:, 0] - x, 0.0), x - rects[:, 2])
    dy = np.maximum(np.maximum(rects[:, 1] - y, 0.0), y - rects[:, 3])
    return dx * dx + dy * dy


def overlap_area(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise-broadcast intersection area between rect arrays."""
    w = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    h = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    return np.where((w > 0) & (h > 0), w * h, 0.0)


# -- quantisation and Z-order -------------------------------------------------

def _check_bits(bits: int) -> None:
    if not 1 <= bits <= MAX_BITS:
        raise GeometryError(f"bits must be in [1, {MAX_BITS}], got {bits}")


def quantize_many(xs, ys, bits: int, domain: MBR) -> tuple[np.ndarray, np.ndarray]:
    """Map coordinates to integer grid cells; the upper domain edge maps to the top cell."""
    _check_bits(bits)
    side = 1 << bits
    cells = []
    for v, lo, hi in ((xs, domain.xmin, domain.xmax), (ys, domain.ymin, domain.ymax)):
        v = np.asarray(v, dtype=np.float64)
        if hi > lo:
            c = np.floor((v - lo) / (hi - lo) * side)
        else:
            c = np.zeros_like(v)
        cells.append(np.clip(c, 0, side - 1).astype(np.uint64))
    return cells[0], cells[1]


def quantize(p, bits: int, domain: MBR) -> tuple[int, int]:
    if not mbr_contains(domain, p):
        raise GeometryError(f"point {tuple(p[:2])} outside domain {tuple(domain)}")
    cx, cy = quantize_many([p[0]], [p[1]], bits, domain)
    return int(cx[0]), int(cy[0])


def _spread(v: np.ndarray) -> np.ndarray:
    """Insert a zero bit between each of the low 32 bits of v."""
    v = v.astype(np.uint64) & np.uint64(0xFFFFFFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x0000FFFF0000FFFF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x00FF00FF00FF00FF)
    v = (v | (v << np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    v = (v | (v << np.uint64(2))) & np.uint64(0x3333333333333333)
    v = (v | (v << np.uint64(1))) & np.uint64(0x5555555555555555)
    return v


def interleave_cells(cx, cy) -> np.ndarray:
    """Z-order of integer cells: MSB first, x bit before y bit at each level."""
    cx = np.asarray(cx, dtype=np.uint64)
    cy = np.asarray(cy, dtype=np.uint64)
    return (_spread(cx) << np.uint64(1)) | _spread(cy)


def z_encode_many(xs, ys, bits: int, domain: MBR) -> np.ndarray:
    cx, cy = quantize_many(xs, ys, bits, domain)
    return interleave_cells(cx, cy)


def z_encode(p, bits: int, domain: MBR) -> SFCKey:
    _check_bits(bits)
    cx, cy = quantize(p, bits, domain)
    return SFCKey(int(interleave_cells([cx], [cy])[0]), bits)


def z_intervals(box, bits: int, domain: MBR, max_ranges: int = 16) -> list[tuple[int, int]]:
    """Cover the cells of ``box`` with at most about ``max_ranges`` inclusive
    Z-key intervals.  Quadrants are refined level by level; once another
    level would exceed the budget, partially covered quadrants are kept
    whole.  Adjacent intervals are merged."""
    (cx0, cx1), (cy0, cy1) = quantize_many([box[0], box[2]], [box[1], box[3]], bits, domain)
    cx0, cx1, cy0, cy1 = int(cx0), int(cx1), int(cy0), int(cy1)
    done, frontier, level = [], [(0, 0)], 0
    while frontier:
        s = bits - level
        partial = []
        for qx, qy in frontier:
            x0, x1 = qx << s, ((qx + 1) << s) - 1
            y0, y1 = qy << s, ((qy + 1) << s) - 1
            if x1 < cx0 or x0 > cx1 or y1 < cy0 or y0 > cy1:
                continue
            if s == 0 or (cx0 <= x0 and x1 <= cx1 and cy0 <= y0 and y1 <= cy1):
                done.append((qx, qy, level))
            else:
                partial.append((qx, qy))
        if partial and len(done) + 4 * len(partial) > max_ranges:
            done.extend((qx, qy, level) for qx, qy in partial)
            break
        frontier = [(2 * qx + dx, 2 * qy + dy) for qx, qy in partial for dx in (0, 1) for dy in (0, 1)]
        level += 1
    spans = []
    for qx, qy, lv in done:
        width = 2 * (bits - lv)
        base = int(interleave_cells([qx], [qy])[0]) << width
        spans.append((base, base + (1 << width) - 1))
    spans.sort()
    merged: list[tuple[int, int]] = []
    for a, b in spans:
        if merged and a <= merged[-1][1] + 1:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return merged


def rank_space(points: Sequence) -> list[tuple]:
    """Pair each point with its 0-based x and y ranks (ties broken by id)."""
    pts = list(points)
    if not pts:
        raise GeometryError("rank_space needs at least one point")
    xs = np.array([p[0] for p in pts], dtype=np.float64)
    ys = np.array([p[1] for p in pts], dtype=np.float64)
    ids = np.array([p[2] if len(p) > 2 else i for i, p in enumerate(pts)], dtype=np.int64)
    rx, ry = rank_space_many(xs, ys, ids)
    return [(p, int(a), int(b)) for p, a, b in zip(pts, rx, ry)]


def rank_space_many(xs, ys, ids) -> tuple[np.ndarray, np.ndarray]:
    n = len(xs)
    rx = np.empty(n, dtype=np.int64)
    ry = np.empty(n, dtype=np.int64)
    rx[np.lexsort((ids, xs))] = np.arange(n)
    ry[np.lexsort((ids, ys))] = np.arange(n)
    return rx, ry


def rank_bits(n: int) -> int:
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


# -- BM-tree piecewise curves -------------------------------------------------

class CurveNode:
    """One node of a BM-tree.  ``bit`` is ``(dim, k)`` with dim 0=x, 1=y and k
    counted from 1 at the most significant bit; ``None`` marks a leaf."""

    __slots__ = ("bit", "children")

    def __init__(self, bit: tuple[int, int] | None = None, children=None):
        self.bit = bit
        self.children = children

    @property
    def is_leaf(self) -> bool:
        return self.bit is None


class BMTreeCurve:
    """Binary tree of bit choices.  Leaves finish the key with the unconsumed
    bits in plain Z order (by significance, x before y), so an explicit tree
    only needs to cover the levels that were actually learned."""

    def __init__(self, root: CurveNode, bits: int):
        _check_bits(bits)
        self.root = root
        self.bits = bits

    @classmethod
    def z_order(cls, bits: int, explicit_levels: int = 0) -> "BMTreeCurve":
        """Plain interleaving, optionally spelled out for the first levels."""
        order = default_order(bits, frozenset())

        def build(depth):
            if depth >= explicit_levels or depth >= len(order):
                return CurveNode()
            return CurveNode(order[depth], [build(depth + 1), build(depth + 1)])

        return cls(build(0), bits)

    @property
    def height(self) -> int:
        def h(node):
            if node.is_leaf:
                return 0
            return 1 + max(h(c) for c in node.children)
        return h(self.root)

    def iter_nodes(self) -> Iterator[CurveNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.extend(reversed(node.children))

    def validate(self) -> None:
        def walk(node, used):
            if node.is_leaf:
                return
            dim, k = node.bit
            if dim not in (0, 1) or not 1 <= k <= self.bits:
                raise CurveStructureError(f"bit {bitname(node.bit)} outside resolution {self.bits}")
            if node.bit in used:
                raise CurveStructureError(f"bit {bitname(node.bit)} consumed twice on one path")
            if node.children is None or len(node.children) != 2:
                raise CurveStructureError(f"node {bitname(node.bit)} lacks two children")
            for child in node.children:
                walk(child, used | {node.bit})
        walk(self.root, frozenset())

    def dumps(self) -> str:
        lines = [f"# bits {self.bits}"]
        for node in self.iter_nodes():
            lines.append("L" if node.is_leaf else f"N {bitname(node.bit)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, bits: int | None = None) -> "BMTreeCurve":
        tokens = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "bits":
                    bits = int(parts[1])
                continue
            tokens.append(line)
        it = iter(tokens)

        def parse():
            try:
                tok = next(it)
            except StopIteration:
                raise CurveStructureError("curve text ended inside a subtree") from None
            if tok == "L":
                return CurveNode()
            tag, _, name = tok.partition(" ")
            if tag != "N":
                raise CurveStructureError(f"bad curve line {tok!r}")
            bit = parse_bitname(name.strip())
            left = parse()
            right = parse()
            return CurveNode(bit, [left, right])

        root = parse()
        if next(it, None) is not None:
            raise CurveStructureError("trailing lines after curve")
        if bits is None:
            ks = [n.bit[1] for n in _walk(root) if not n.is_leaf]
            bits = max(ks) if ks else 1
        curve = cls(root, bits)
        curve.validate()
        return curve


def _walk(node):
    yield node
    if not node.is_leaf:
        for c in node.children:
            yield from _walk(c)


def bitname(bit: tuple[int, int]) -> str:
    return ("x", "y")[bit[0]] + str(bit[1])


def parse_bitname(name: str) -> tuple[int, int]:
    if len(name) < 2 or name[0] not in "xy" or not name[1:].isdigit():
        raise CurveStructureError(f"bad bit name {name!r}")
    return ("xy".index(name[0]), int(name[1:]))


def default_order(bits: int, used: frozenset) -> list[tuple[int, int]]:
    """Unconsumed bits in Z order: by significance, x before y."""
    return [(d, k) for k in range(1, bits + 1) for d in (0, 1) if (d, k) not in used]


def _cell_bit(cells: np.ndarray, k: int, bits: int) -> np.ndarray:
    return (cells >> np.uint64(bits - k)) & np.uint64(1)


def bmtree_eval_cells(curve: BMTreeCurve, cx, cy) -> np.ndarray:
    """Curve keys for integer cells (vectorised)."""
    cx = np.asarray(cx, dtype=np.uint64)
    cy = np.asarray(cy, dtype=np.uint64)
    bits = curve.bits
    keys = np.zeros(len(cx), dtype=np.uint64)
    cells = (cx, cy)
    one = np.uint64(1)

    def visit(node, idx, used):
        if len(idx) == 0:
            return
        if node.is_leaf:
            k = keys[idx]
            for dim, b in default_order(bits, used):
                k = (k << one) | _cell_bit(cells[dim][idx], b, bits)
            keys[idx] = k
            return
        if node.bit in used or node.children is None:
            raise CurveStructureError(f"malformed curve at bit {bitname(node.bit)}")
        dim, b = node.bit
        if b > bits:
            raise CurveStructureError(f"bit {bitname(node.bit)} beyond resolution {bits}")
        bit = _cell_bit(cells[dim][idx], b, bits)
        keys[idx] = (keys[idx] << one) | bit
        used = used | {node.bit}
        visit(node.children[0], idx[bit == 0], used)
        visit(node.children[1], idx[bit == 1], used)

    visit(curve.root, np.arange(len(cx)), frozenset())
    return keys


def bmtree_eval_many(curve: BMTreeCurve, xs, ys, domain: MBR) -> np.ndarray:
    cx, cy = quantize_many(xs, ys, curve.bits, domain)
    return bmtree_eval_cells(curve, cx, cy)


def bmtree_eval(curve: BMTreeCurve, p, domain: MBR) -> SFCKey:
    cx, cy = quantize(p, curve.bits, domain)
    return SFCKey(int(bmtree_eval_cells(curve, [cx], [cy])[0]), curve.bits)
