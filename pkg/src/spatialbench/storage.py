"""Paged block store with fixed 4 KB pages and logical I/O accounting.

Every index node lives in exactly one page.  A page starts with a 16-byte
header (level u16, count u16, class tag u8, 11 reserved bytes) followed by
packed little-endian entries:

* standard pages: 40-byte entries ``xmin, ymin, xmax, ymax`` (f8) + payload (u8)
* large-leaf pages: 24-byte point entries ``x, y`` (f8) + id (u8)

A large leaf (capacity 10,000 points) spans a contiguous run of pages.
"""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

PAGE_SIZE = 4096
HEADER = struct.Struct("<HHB11x")
HEADER_SIZE = HEADER.size
ENTRY_SIZE = 40
POINT_ENTRY_SIZE = 24
NODE_CAPACITY = 100
LARGE_LEAF_CAPACITY = 10_000
MAX_STANDARD_ENTRIES = (PAGE_SIZE - HEADER_SIZE) // ENTRY_SIZE
POINTS_PER_PAGE = (PAGE_SIZE - HEADER_SIZE) // POINT_ENTRY_SIZE
LARGE_LEAF_PAGES = math.ceil(LARGE_LEAF_CAPACITY * POINT_ENTRY_SIZE / (PAGE_SIZE - HEADER_SIZE))

assert HEADER_SIZE == 16


class PageClass(IntEnum):
    LEAF = 0
    INNER = 1
    LARGE_LEAF = 2


class StorageError(Exception):
    pass


class LayoutError(StorageError):
    """A page would not fit in one block."""


class PageNotFound(StorageError, KeyError):
    pass


@dataclass
class IOCounters:
    leaf_reads: int = 0
    inner_reads: int = 0
    page_writes: int = 0

    def copy(self) -> "IOCounters":
        return IOCounters(self.leaf_reads, self.inner_reads, self.page_writes)

    def __sub__(self, other: "IOCounters") -> "IOCounters":
        return IOCounters(self.leaf_reads - other.leaf_reads,
                          self.inner_reads - other.inner_reads,
                          self.page_writes - other.page_writes)

    def __add__(self, other: "IOCounters") -> "IOCounters":
        return IOCounters(self.leaf_reads + other.leaf_reads,
                          self.inner_reads + other.inner_reads,
                          self.page_writes + other.page_writes)

    @property
    def reads(self) -> int:
        return self.leaf_reads + self.inner_reads


@dataclass
class NodePage:
    """A standard index node.  ``rects`` is (n, 4) float64, ``payload`` (n,) uint64
    holding child page ids for inner nodes and record ids for leaves."""

    level: int
    rects: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))
    payload: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint64))

    @property
    def count(self) -> int:
        return len(self.payload)

    @property
    def is_leaf(self) -> bool:
        return self.level == 0

    @property
    def page_class(self) -> PageClass:
        return PageClass.LEAF if self.level == 0 else PageClass.INNER

    def mbr(self) -> np.ndarray:
        r = self.rects
        return np.array([r[:, 0].min(), r[:, 1].min(), r[:, 2].max(), r[:, 3].max()])

    def append(self, rect, payload: int) -> None:
        self.rects = np.vstack([self.rects, np.asarray(rect, dtype=np.float64).reshape(1, 4)])
        self.payload = np.append(self.payload, np.uint64(payload))

    def __eq__(self, other) -> bool:
        if not isinstance(other, NodePage):
            return NotImplemented
        return (self.level == other.level
                and np.array_equal(self.payload, other.payload)
                and self.rects.tobytes() == other.rects.tobytes())


def encode_page(page: NodePage, page_class: PageClass | None = None) -> bytes:
    n = page.count
    if n > MAX_STANDARD_ENTRIES:
        raise LayoutError(f"{n} entries need {HEADER_SIZE + n * ENTRY_SIZE} bytes > {PAGE_SIZE}")
    if not 0 <= page.level < 1 << 16:
        raise LayoutError(f"level {page.level} does not fit the header")
    cls = page.page_class if page_class is None else page_class
    body = np.empty((n, 5), dtype="<f8")
    body[:, :4] = page.rects
    body[:, 4] = np.asarray(page.payload, dtype="<u8").view("<f8")
    raw = HEADER.pack(page.level, n, int(cls)) + body.tobytes()
    return raw + bytes(PAGE_SIZE - len(raw))


def decode_header(raw: bytes) -> tuple[int, int, PageClass]:
    level, count, tag = HEADER.unpack_from(raw, 0)
    return level, count, PageClass(tag)


def decode_page(raw: bytes) -> NodePage:
    level, count, tag = decode_header(raw)
    if tag == PageClass.LARGE_LEAF:
        raise StorageError("large-leaf page decoded as a standard node")
    body = np.frombuffer(raw, dtype="<f8", count=5 * count, offset=HEADER_SIZE).reshape(count, 5)
    rects = body[:, :4].copy()
    payload = body[:, 4].copy().view("<u8").astype(np.uint64)
    return NodePage(level, rects, payload)


def encode_points_page(xs, ys, ids) -> bytes:
    n = len(ids)
    if n > POINTS_PER_PAGE:
        raise LayoutError(f"{n} point entries exceed {POINTS_PER_PAGE} per page")
    body = np.empty((n, 3), dtype="<f8")
    body[:, 0] = xs
    body[:, 1] = ys
    body[:, 2] = np.asarray(ids, dtype="<u8").view("<f8")
    raw = HEADER.pack(0, n, int(PageClass.LARGE_LEAF)) + body.tobytes()
    return raw + bytes(PAGE_SIZE - len(raw))


def decode_points_page(raw: bytes) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    _, count, tag = decode_header(raw)
    if tag != PageClass.LARGE_LEAF:
        raise StorageError("standard page decoded as a large-leaf page")
    body = np.frombuffer(raw, dtype="<f8", count=3 * count, offset=HEADER_SIZE).reshape(count, 3)
    ids = body[:, 2].copy().view("<u8").astype(np.uint64)
    return body[:, 0].copy(), body[:, 1].copy(), ids


class BlockStore:
    """Append-only page file with in-place rewrite.

    Pages are kept in memory; when ``path`` is given every write is also
    written through to ``path`` at ``page_id * PAGE_SIZE``.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = None if path is None else os.fspath(path)
        self.io = IOCounters()
        self._pages: list[bytes] = []
        self._fh = None
        if self.path is not None:
            self._fh = open(self.path, "w+b")

    @classmethod
    def open(cls, path) -> "BlockStore":
        store = cls.__new__(cls)
        store.path = os.fspath(path)
        store.io = IOCounters()
        with open(store.path, "rb") as fh:
            data = fh.read()
        if len(data) % PAGE_SIZE:
            raise StorageError(f"{store.path}: size {len(data)} is not a multiple of {PAGE_SIZE}")
        store._pages = [data[i:i + PAGE_SIZE] for i in range(0, len(data), PAGE_SIZE)]
        store._fh = open(store.path, "r+b")
        return store

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def page_count(self) -> int:
        return len(self._pages)

    @property
    def size_bytes(self) -> int:
        return self.page_count * PAGE_SIZE

    def allocate(self, n: int = 1) -> int:
        """Reserve ``n`` contiguous zeroed pages; returns the first id."""
        first = len(self._pages)
        blank = bytes(PAGE_SIZE)
        for _ in range(n):
            self._put(len(self._pages), blank)
        return first

    def _put(self, page_id: int, raw: bytes) -> None:
        if page_id == len(self._pages):
            self._pages.append(raw)
        else:
            self._pages[page_id] = raw
        if self._fh is not None:
            self._fh.seek(page_id * PAGE_SIZE)
            self._fh.write(raw)

    def write_raw(self, raw: bytes, page_id: int | None = None) -> int:
        if len(raw) != PAGE_SIZE:
            raise LayoutError(f"page must be exactly {PAGE_SIZE} bytes")
        if page_id is None:
            page_id = len(self._pages)
        elif not 0 <= page_id < len(self._pages):
            raise PageNotFound(page_id)
        self._put(page_id, raw)
        self.io.page_writes += 1
        return page_id

    def write_page(self, page: NodePage, page_id: int | None = None,
                   capacity: int = NODE_CAPACITY) -> int:
        if page.count > capacity:
            raise LayoutError(f"{page.count} entries exceed node capacity {capacity}")
        return self.write_raw(encode_page(page), page_id)

    def _raw(self, page_id: int) -> bytes:
        if not 0 <= page_id < len(self._pages):
            raise PageNotFound(page_id)
        return self._pages[page_id]

    def _count_read(self, cls: PageClass) -> None:
        if cls == PageClass.INNER:
            self.io.inner_reads += 1
        else:
            self.io.leaf_reads += 1

    def read_raw(self, page_id: int, page_class: PageClass | None = None) -> bytes:
        raw = self._raw(page_id)
        if page_class is None:
            page_class = PageClass(raw[4])
        self._count_read(PageClass(page_class))
        return raw

    def read_page(self, page_id: int, page_class: PageClass | str | None = None) -> NodePage:
        """Read a standard node.  ``page_class`` picks the counter to charge;
        by default it comes from the page header."""
        if isinstance(page_class, str):
            page_class = PageClass[page_class.upper()]
        return decode_page(self.read_raw(page_id, page_class))

    def peek_page(self, page_id: int) -> NodePage:
        """Uncounted read for validation and statistics walks."""
        return decode_page(self._raw(page_id))

    def peek_raw(self, page_id: int) -> bytes:
        return self._raw(page_id)

    def save_as(self, path) -> None:
        """Write every page to ``path`` (the format :meth:`open` reads)."""
        with open(path, "wb") as fh:
            for raw in self._pages:
                fh.write(raw)

    def snapshot(self) -> IOCounters:
        return self.io.copy()

    def reset(self) -> None:
        self.io = IOCounters()

    def flush(self) -> None:
        if self._fh is not None:
            self._fh.flush()


def write_page(store: BlockStore, page: NodePage, page_id: int | None = None) -> int:
    return store.write_page(page, page_id)


def read_page(store: BlockStore, page_id: int, page_class=None) -> NodePage:
    return store.read_page(page_id, page_class)


def io_snapshot(store: BlockStore) -> IOCounters:
    return store.snapshot()


def io_reset(store: BlockStore) -> None:
    store.reset()


# -- large leaves --------------------------------------------------------------

def pages_for_points(count: int) -> int:
    return max(1, math.ceil(count / POINTS_PER_PAGE))


def alloc_large_leaf(store: BlockStore) -> int:
    """Reserve a full large leaf (all constituent pages) and return its first page."""
    first = store.allocate(LARGE_LEAF_PAGES)
    blank = encode_points_page([], [], [])
    for i in range(LARGE_LEAF_PAGES):
        store.write_raw(blank, first + i)
    return first


def write_large_leaf(store: BlockStore, first: int, xs, ys, ids) -> None:
    n = len(ids)
    if n > LARGE_LEAF_CAPACITY:
        raise LayoutError(f"{n} points exceed large-leaf capacity {LARGE_LEAF_CAPACITY}")
    for i in range(pages_for_points(n)):
        s = slice(i * POINTS_PER_PAGE, (i + 1) * POINTS_PER_PAGE)
        store.write_raw(encode_points_page(xs[s], ys[s], ids[s]), first + i)


def read_large_leaf(store: BlockStore, first: int, count: int,
                    start: int = 0, stop: int | None = None):
    """Read positions [start, stop) of a large leaf holding ``count`` points.
    Only the pages covering that range are read and counted."""
    stop = count if stop is None else min(stop, count)
    if stop <= start:
        return np.empty(0), np.empty(0), np.empty(0, dtype=np.uint64)
    p0 = start // POINTS_PER_PAGE
    p1 = (stop - 1) // POINTS_PER_PAGE
    xs, ys, ids = [], [], []
    for p in range(p0, p1 + 1):
        x, y, i = decode_points_page(store.read_raw(first + p, PageClass.LARGE_LEAF))
        xs.append(x)
        ys.append(y)
        ids.append(i)
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    i = np.concatenate(ids)
    off = start - p0 * POINTS_PER_PAGE
    n = stop - start
    return x[off:off + n], y[off:off + n], i[off:off + n]


def append_large_leaf(store: BlockStore, first: int, count: int, x: float, y: float, pid: int) -> int:
    """Append one point to a large leaf holding ``count`` points; returns the new count."""
    if count >= LARGE_LEAF_CAPACITY:
        raise LayoutError("large leaf is full")
    page = count // POINTS_PER_PAGE
    raw = store.read_raw(first + page, PageClass.LARGE_LEAF)
    xs, ys, ids = decode_points_page(raw)
    xs = np.append(xs, x)
    ys = np.append(ys, y)
    ids = np.append(ids, np.uint64(pid))
    store.write_raw(encode_points_page(xs, ys, ids), first + page)
    return count + 1


# -- sidecar metadata -----------------------------------------------------------

def write_sidecar(path, meta: dict) -> None:
    with open(path, "w") as fh:
        for k, v in meta.items():
            fh.write(f"{k}={v}\n")


def read_sidecar(path) -> dict:
    meta = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            k, sep, v = line.partition("=")
            if not sep:
                raise StorageError(f"{path}: bad sidecar line {line!r}")
            meta[k.strip()] = v.strip()
    return meta
