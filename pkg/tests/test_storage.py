import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spatialbench.storage import (ENTRY_SIZE, HEADER_SIZE, LARGE_LEAF_CAPACITY, LARGE_LEAF_PAGES, NODE_CAPACITY,
                                  PAGE_SIZE, BlockStore, LayoutError, NodePage, PageClass, PageNotFound,
                                  StorageError, alloc_large_leaf, append_large_leaf, decode_page,
                                  encode_page, read_large_leaf, read_sidecar, write_large_leaf,
                                  write_sidecar)


def random_page(rng, n=None, level=None) -> NodePage:
    n = int(rng.integers(0, NODE_CAPACITY + 1)) if n is None else n
    level = int(rng.integers(0, 5)) if level is None else level
    lo = rng.normal(size=(n, 2)) * 10.0 ** rng.integers(-3, 4)
    hi = lo + rng.random((n, 2))
    rects = np.hstack([lo, hi])
    payload = rng.integers(0, 2**63, size=n, dtype=np.uint64) * np.uint64(2) + rng.integers(0, 2, size=n, dtype=np.uint64)
    return NodePage(level, rects, payload)


def test_layout_constants():
    assert PAGE_SIZE == 4096 and HEADER_SIZE == 16 and ENTRY_SIZE == 40
    assert HEADER_SIZE + NODE_CAPACITY * ENTRY_SIZE <= PAGE_SIZE
    assert LARGE_LEAF_PAGES == 59


def test_full_node_fits_one_block():
    page = random_page(np.random.default_rng(1), n=NODE_CAPACITY)
    raw = encode_page(page)
    assert len(raw) == PAGE_SIZE
    assert decode_page(raw) == page
    store = BlockStore()
    pid = store.write_page(page)
    assert store.page_count == 1 and store.peek_page(pid) == page


def test_oversized_node_rejected():
    store = BlockStore()
    with pytest.raises(LayoutError):
        store.write_page(random_page(np.random.default_rng(2), n=NODE_CAPACITY + 1))
    with pytest.raises(LayoutError):
        encode_page(random_page(np.random.default_rng(2), n=103))


def test_round_trip_fuzz_1000_pages(tmp_path):
    rng = np.random.default_rng(42)
    pages = [random_page(rng) for _ in range(1000)]
    store = BlockStore(tmp_path / "fuzz.pages")
    ids = [store.write_page(p) for p in pages]
    store.flush()
    for pid, p in zip(ids, pages):
        got = store.read_page(pid)
        assert got == p
        assert encode_page(got) == encode_page(p)
    store.close()
    reopened = BlockStore.open(tmp_path / "fuzz.pages")
    assert all(reopened.peek_page(pid) == p for pid, p in zip(ids, pages))


@given(st.lists(st.tuples(st.floats(allow_nan=False), st.floats(allow_nan=False), st.floats(allow_nan=False),
                          st.floats(allow_nan=False), st.integers(0, 2**64 - 1)), max_size=NODE_CAPACITY),
       st.integers(0, 60000))
def test_round_trip_property(entries, level):
    rects = np.array([e[:4] for e in entries], dtype=np.float64).reshape(-1, 4)
    payload = np.array([e[4] for e in entries], dtype=np.uint64)
    page = NodePage(level, rects, payload)
    raw = encode_page(page)
    assert encode_page(decode_page(raw)) == raw


def test_counters_follow_page_class():
    store = BlockStore()
    leaf = store.write_page(random_page(np.random.default_rng(3), 5, level=0))
    inner = store.write_page(random_page(np.random.default_rng(4), 5, level=2))
    assert store.io.page_writes == 2
    store.read_page(leaf)
    store.read_page(inner)
    store.read_page(inner)
    assert (store.io.leaf_reads, store.io.inner_reads) == (1, 2)
    store.peek_page(inner)
    assert store.io.reads == 3
    before = store.snapshot()
    store.read_page(leaf, "inner")
    d = store.snapshot() - before
    assert (d.leaf_reads, d.inner_reads, d.page_writes) == (0, 1, 0)
    store.reset()
    assert store.io.reads == 0


def test_missing_page_and_bad_file(tmp_path):
    store = BlockStore()
    with pytest.raises(PageNotFound):
        store.read_page(0)
    bad = tmp_path / "bad.pages"
    bad.write_bytes(b"x" * 100)
    with pytest.raises(StorageError):
        BlockStore.open(bad)


def test_large_leaf_round_trip_and_partial_reads():
    store = BlockStore()
    first = alloc_large_leaf(store)
    assert store.page_count == LARGE_LEAF_PAGES
    rng = np.random.default_rng(5)
    n = LARGE_LEAF_CAPACITY
    xs, ys = rng.random(n), rng.random(n)
    ids = np.arange(n, dtype=np.uint64)
    write_large_leaf(store, first, xs, ys, ids)
    store.reset()
    x, y, i = read_large_leaf(store, first, n)
    assert store.io.leaf_reads == LARGE_LEAF_PAGES
    assert np.array_equal(x, xs) and np.array_equal(y, ys) and np.array_equal(i, ids)
    store.reset()
    x, _, i = read_large_leaf(store, first, n, 200, 210)
    assert store.io.leaf_reads == 1
    assert np.array_equal(i, ids[200:210])
    with pytest.raises(LayoutError):
        append_large_leaf(store, first, n, 0.5, 0.5, n)


def test_large_leaf_append():
    store = BlockStore()
    first = alloc_large_leaf(store)
    count = 0
    for k in range(200):
        count = append_large_leaf(store, first, count, k / 200, 1 - k / 200, 1000 + k)
    x, y, i = read_large_leaf(store, first, count)
    assert count == 200 and i.tolist() == list(range(1000, 1200))
    assert store.peek_raw(first)[4] == PageClass.LARGE_LEAF


def test_save_as_and_sidecar(tmp_path):
    store = BlockStore()
    pages = [random_page(np.random.default_rng(k), 10) for k in range(5)]
    for p in pages:
        store.write_page(p)
    store.save_as(tmp_path / "a.pages")
    again = BlockStore.open(tmp_path / "a.pages")
    assert [again.peek_page(k) for k in range(5)] == pages
    write_sidecar(tmp_path / "m.meta", {"root": 3, "name": "kd"})
    assert read_sidecar(tmp_path / "m.meta") == {"root": "3", "name": "kd"}
