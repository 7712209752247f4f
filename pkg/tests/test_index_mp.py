import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import point_oracle, range_oracle
from spatialbench.base import data_domain, make_points
from spatialbench.geometry import BMTreeCurve, z_encode_many
from spatialbench.index_dp import build_dp, check_tree
from spatialbench.index_mp import MPIndex, ZMIndex, mp_keys
from spatialbench.query import point_query, range_query
from spatialbench.storage import LARGE_LEAF_CAPACITY


def uniform(n, seed=0):
    rng = np.random.default_rng(seed)
    return make_points(rng.random(n), rng.random(n))


def leaf_counts(idx):
    return [page.count for _, page in idx.leaf_pages()]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5000), st.sampled_from(["z", "z_rank"]))
def test_packing_leaf_count(n, key_fn):
    idx = MPIndex.bulk_load(uniform(n, n), key_fn)
    counts = leaf_counts(idx)
    assert len(counts) == math.ceil(n / 100)
    assert all(c == 100 for c in counts[:-1])
    assert idx.utilization() >= 1 - 99 / n


def test_packing_small_and_100k_heights():
    assert MPIndex.bulk_load(uniform(100), "z").height == 1
    big = MPIndex.bulk_load(uniform(100_000, 1), "z")
    assert big.height == 3 and len(big.leaf_pages()) == 1000


@pytest.mark.parametrize("key_fn", ["z", "z_rank", "bmtree"])
def test_leaves_in_key_order(key_fn):
    pts = uniform(3000, 2)
    curve = BMTreeCurve.z_order(16, 3) if key_fn == "bmtree" else None
    idx = MPIndex.bulk_load(pts, key_fn, curve=curve)
    ordered = np.concatenate([page.payload for _, page in idx.leaf_pages()])
    keys, _ = mp_keys(pts, key_fn, curve=curve)
    by_id = dict(zip(pts["id"].tolist(), keys.tolist()))
    seq = [by_id[int(i)] for i in ordered]
    assert seq == sorted(seq)


def test_rank_space_keys_unique_with_duplicates():
    pts = make_points(np.repeat([0.1, 0.5], 500), np.repeat([0.3, 0.3], 500))
    keys, bits = mp_keys(pts, "z_rank")
    assert len(set(keys.tolist())) == 1000 and bits == 10


def test_mp_smaller_than_rtree():
    pts = uniform(20000, 3)
    r = build_dp(pts, "rtree")
    for key_fn in ("z", "z_rank"):
        assert MPIndex.bulk_load(pts, key_fn).size_bytes < r.size_bytes


@pytest.mark.parametrize("key_fn", ["z", "z_rank"])
def test_query_equivalence(key_fn):
    pts = uniform(5000, 4)
    idx = MPIndex.bulk_load(pts, key_fn)
    assert check_tree(idx) == []
    rng = np.random.default_rng(5)
    for _ in range(30):
        c = rng.random(2)
        box = (c[0] - 0.05, c[1] - 0.05, c[0] + 0.05, c[1] + 0.05)
        assert sorted(range_query(idx, box).ids) == range_oracle(pts, box)


def test_insert_into_full_leaf_splits():
    idx = MPIndex.bulk_load(uniform(1000, 6), "z")
    idx.insert((0.5, 0.5, 5000))
    assert idx.stats.splits >= 1
    partial = MPIndex.bulk_load(uniform(50, 7), "z")
    partial.insert((0.5, 0.5, 5000))
    assert partial.stats.splits == 0
    assert 5000 in point_query(idx, (0.5, 0.5)).ids


# -- ZM ---------------------------------------------------------------------------

def test_zm_linear_keys_have_zero_error():
    # one point per cell of a 16x16 grid: keys are 0..255, exactly linear in position
    g = np.arange(16) / 15
    xs, ys = np.meshgrid(g, g)
    pts = make_points(xs.ravel(), ys.ravel())
    idx = ZMIndex.build(pts, bits=4)
    for key in range(256):
        assert idx.predict(key) == (key, 0)


def test_zm_single_model_matches_regression():
    pts = uniform(3000, 8)
    idx = ZMIndex.build(pts, m=1)
    keys = np.sort(z_encode_many(pts["x"], pts["y"], 16, data_domain(pts))).astype(np.float64)
    slope, icpt = np.polyfit(keys, np.arange(3000, dtype=np.float64), 1)
    bound = np.max(np.abs(np.rint(slope * keys + icpt) - np.arange(3000)))
    assert idx.predict(int(keys[0]))[1] == int(bound)


@pytest.mark.parametrize("m", [1, 3])
def test_zm_lookup_scans_within_bound(m):
    pts = uniform(30000, 9)
    idx = ZMIndex.build(pts, m=m)
    for p in pts[::577]:
        key = int(z_encode_many([p["x"]], [p["y"]], 16, idx.domain)[0])
        _, err = idx.predict(key)
        ids = idx.point_ids(float(p["x"]), float(p["y"]))
        assert int(p["id"]) in ids.tolist()
        assert idx.positions_examined <= 2 * err + 1


def test_zm_range_and_point_equivalence():
    pts = uniform(50000, 10)
    idx = ZMIndex.build(pts)
    assert idx.m == 1 and len(idx.leaf_first) == 5
    rng = np.random.default_rng(11)
    for _ in range(200):
        c = rng.random(2)
        box = (c[0] - 0.016, c[1] - 0.016, c[0] + 0.016, c[1] + 0.016)
        assert sorted(range_query(idx, box).ids) == range_oracle(pts, box)
    for p in pts[::4999]:
        assert sorted(point_query(idx, (p["x"], p["y"])).ids) == point_oracle(pts, p["x"], p["y"])


def test_zm_leaf_io_not_above_zr():
    pts = uniform(50000, 12)
    zm, zr = ZMIndex.build(pts), MPIndex.bulk_load(pts, "z")
    rng = np.random.default_rng(13)
    io_zm = io_zr = 0
    for _ in range(100):
        c = rng.random(2)
        box = (c[0] - 0.0005, c[1] - 0.0005, c[0] + 0.0005, c[1] + 0.0005)
        io_zm += range_query(zm, box).leaf_io
        io_zr += range_query(zr, box).leaf_io
    assert io_zm <= io_zr


def test_zm_inserts_and_reload_meta():
    pts = uniform(LARGE_LEAF_CAPACITY, 14)
    idx = ZMIndex.build(pts)
    new = uniform(500, 15)
    new["id"] += 10**6
    for p in new:
        idx.insert((p["x"], p["y"], p["id"]))
    allp = np.concatenate([pts, new])
    for p in new[::50]:
        assert int(p["id"]) in point_query(idx, (p["x"], p["y"])).ids
    again = ZMIndex.from_meta(idx.store, idx.meta())
    box = (0.2, 0.2, 0.4, 0.5)
    assert sorted(range_query(again, box).ids) == range_oracle(allp, box)


def test_zm_rejects_empty():
    with pytest.raises(ValueError):
        ZMIndex.build(make_points([], []))
