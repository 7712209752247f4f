import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import point_oracle, range_oracle
from spatialbench.base import make_points
from spatialbench.index_mp import MPIndex
from spatialbench.index_sp import (FULL_REGION, MEDIAN, CutSpace, GreedySelector, LisaIndex, SelectorError, SPIndex,
                                   gkd_build, kd_build, leaf_regions, lisa_insert, lisa_lookup, qd_build,
                                   sp_insert)
from spatialbench.query import point_query, range_query
from spatialbench.storage import LARGE_LEAF_CAPACITY, LARGE_LEAF_PAGES


def uniform(n, seed=0):
    rng = np.random.default_rng(seed)
    return make_points(rng.random(n), rng.random(n))


def boxes(n, seed, edge=0.1):
    rng = np.random.default_rng(seed)
    c = rng.random((n, 2))
    return np.column_stack([c - edge / 2, c + edge / 2])


def clipped_area(region):
    lo = [Fraction(max(region[d], 0.0)) for d in (0, 1)]
    hi = [Fraction(min(region[d + 2], 1.0)) for d in (0, 1)]
    return max(hi[0] - lo[0], 0) * max(hi[1] - lo[1], 0)


def check_partition(idx):
    leaves = leaf_regions(idx)
    assert sum(clipped_area(r) for r, _ in leaves) == 1
    for region, page in leaves:
        assert page.count <= idx.capacity
        xs, ys = page.rects[:, 0], page.rects[:, 1]
        assert np.all((xs >= region[0]) & (xs <= region[2]) & (ys >= region[1]) & (ys <= region[3]))
    # pairwise interiors disjoint
    for i, (a, _) in enumerate(leaves):
        for b, _ in leaves[i + 1:]:
            w = min(a[2], b[2]) - max(a[0], b[0])
            h = min(a[3], b[3]) - max(a[1], b[1])
            assert w <= 0 or h <= 0


def test_small_input_is_single_leaf():
    idx = kd_build(uniform(100))
    assert idx.height == 1 and idx.store.peek_page(idx.root).is_leaf


def test_two_hundred_points_split_at_hundredth_x():
    pts = uniform(200, 1)
    idx = kd_build(pts)
    root = idx.store.peek_page(idx.root)
    assert idx.height == 2 and root.count == 2
    assert root.rects[0][2] == np.sort(pts["x"])[99]
    counts = [idx.store.peek_page(int(c)).count for c in root.payload]
    assert counts == [100, 100]


def test_kd_duplicate_coordinates():
    pts = make_points(np.full(500, 0.5), np.full(500, 0.5))
    idx = kd_build(pts)
    assert sorted(point_query(idx, (0.5, 0.5)).ids) == list(range(500))
    check_partition(idx)


@pytest.mark.parametrize("variant", ["kd", "gkd", "qd"])
def test_partition_and_recall(variant):
    pts = uniform(5000, 2)
    qs = boxes(50, 3)
    idx = SPIndex.build(pts, variant, qs, GreedySelector())
    check_partition(idx)
    for p in pts[::113]:
        assert sorted(point_query(idx, (p["x"], p["y"])).ids) == point_oracle(pts, p["x"], p["y"])
    for b in boxes(30, 4):
        assert sorted(range_query(idx, b).ids) == range_oracle(pts, b)


def brute_cost(pts, queries, dim, t, left_mask):
    nl = int(left_mask.sum())
    nr = len(pts) - nl
    lo, hi = queries[:, dim], queries[:, dim + 2]
    return sum(math.ceil(nl / 100) for v in lo if v <= t) + sum(math.ceil(nr / 100) for v in hi if v >= t)


def test_greedy_cut_matches_brute_force_costs():
    pts = uniform(1000, 5)
    qs = boxes(20, 6, edge=0.08)
    space = CutSpace(pts, FULL_REGION, 0, qs, 100)
    for c, cost in zip(space.candidates, space.costs):
        coord = pts["x"] if c.dimension == 0 else pts["y"]
        mask = space.median_left if c.provenance == MEDIAN else coord <= c.threshold
        assert cost == brute_cost(pts, space.queries, c.dimension, c.threshold, mask)
    best = space.costs.min()
    pick = space.candidates[space.greedy()]
    assert space.costs[space.greedy()] == best
    tied = [c for c, v in zip(space.candidates, space.costs) if v == best]
    assert abs(pick.n_left - 500) == min(abs(c.n_left - 500) for c in tied)


def test_query_cut_chosen_only_when_cheaper():
    pts = uniform(1000, 7)
    # one query over the left 10%: its right edge touches both sides, the median is cheaper
    one = np.array([[0.0, 0.0, 0.1, 1.0]])
    s1 = CutSpace(pts, FULL_REGION, 0, one, 100)
    assert s1.candidates[s1.greedy()].provenance == MEDIAN
    assert all(s1.costs[0] <= v for v in s1.costs)
    # a cluster of thin queries on the left makes the edge at x=0.2 pay off
    many = np.array([[0.01 * k, 0.0, 0.01 * k + 0.005, 1.0] for k in range(10)] + [[0.19, 0.0, 0.2, 1.0]])
    s2 = CutSpace(pts, FULL_REGION, 0, many, 100)
    pick = s2.candidates[s2.greedy()]
    assert pick.provenance != MEDIAN
    assert s2.costs[s2.greedy()] < s2.costs[0]


def test_gkd_without_local_queries_equals_kd():
    pts = uniform(3000, 8)
    far = np.array([[5.0, 5.0, 6.0, 6.0]])
    a, b = kd_build(pts), gkd_build(pts, far)
    assert [a.store.peek_raw(i) for i in range(a.store.page_count)] == \
           [b.store.peek_raw(i) for i in range(b.store.page_count)]


def test_point_training_queries_terminate():
    pts = uniform(3000, 9)
    rng = np.random.default_rng(1)
    c = rng.random((40, 2))
    idx = gkd_build(pts, np.column_stack([c, c]))
    check_partition(idx)


def test_gkd_not_taller_than_kd():
    pts = uniform(20000, 10)
    rng = np.random.default_rng(2)
    c = rng.random((100, 2)) * 0.3
    qs = np.column_stack([c, c + 0.01])
    assert kd_build(pts).height >= gkd_build(pts, qs).height


def test_greedy_selector_qd_equals_gkd():
    pts = uniform(4000, 11)
    qs = boxes(40, 12)
    a, b = gkd_build(pts, qs), qd_build(pts, GreedySelector(), qs)
    assert [a.store.peek_raw(i) for i in range(a.store.page_count)] == \
           [b.store.peek_raw(i) for i in range(b.store.page_count)]


class RandomSelector:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def select(self, space):
        return int(self.rng.integers(len(space.candidates)))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_any_selector_keeps_invariants(seed):
    pts = uniform(1500, seed)
    idx = qd_build(pts, RandomSelector(seed), boxes(30, seed + 1))
    check_partition(idx)
    assert idx.count == 1500


def test_qd_and_gkd_argument_errors():
    pts = uniform(300)
    with pytest.raises(SelectorError):
        qd_build(pts, None, boxes(3, 1))
    with pytest.raises(SelectorError):
        qd_build(pts, object(), boxes(3, 1))
    with pytest.raises(ValueError):
        gkd_build(pts, np.zeros((0, 4)))

    class Bad:
        def select(self, space):
            return len(space.candidates)

    with pytest.raises(SelectorError):
        qd_build(pts, Bad(), boxes(3, 1))


def test_insert_splits():
    idx = kd_build(uniform(50))
    sp_insert(idx, (0.5, 0.5, 1000))
    assert idx.stats.splits == 0
    full = kd_build(uniform(100))
    sp_insert(full, (0.5, 0.5, 1000))
    assert full.stats.splits == 1 and full.height == 2


@pytest.mark.parametrize("variant", ["kd", "gkd"])
def test_insert_recall(variant):
    base = uniform(2000, 13)
    idx = SPIndex.build(base, variant, boxes(30, 14))
    new = uniform(10000, 15)
    new["id"] += 2000
    for p in new:
        idx.insert((p["x"], p["y"], p["id"]))
    allp = np.concatenate([base, new])
    check_partition(idx)
    assert idx.count == 12000
    for p in new[::211]:
        assert int(p["id"]) in point_query(idx, (p["x"], p["y"])).ids
    for b in boxes(10, 16):
        assert sorted(range_query(idx, b).ids) == range_oracle(allp, b)


def test_sp_at_least_as_tall_as_packed_mp():
    pts = uniform(30000, 17)
    assert kd_build(pts).height >= MPIndex.bulk_load(pts, "z").height


# -- LISA ------------------------------------------------------------------------

def test_lisa_single_shard():
    idx = LisaIndex.build(uniform(LARGE_LEAF_CAPACITY, 18))
    assert idx.shard_count == 1
    assert set(idx.shard_of(np.linspace(-5, 50, 100)).tolist()) == {0}


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 45000), st.integers(0, 99))
def test_lisa_model_monotone(n, seed):
    idx = LisaIndex.build(uniform(n, seed))
    mv = np.sort(np.random.default_rng(seed).uniform(-1, idx.g * idx.g + 1, 500))
    s = idx.shard_of(mv)
    assert np.all(np.diff(s) >= 0)
    assert s.min() >= 0 and s.max() < idx.shard_count
    xs = np.sort(np.random.default_rng(seed + 1).random(200))
    assert np.all(np.diff(idx.mapped(xs, np.full(200, 0.3))) >= 0)


def test_lisa_point_lookup_contains_own_shard():
    pts = uniform(35000, 19)
    idx = LisaIndex.build(pts)
    owner = {}
    for k, entry in enumerate(idx.leaves):
        for i in idx._scan([k], (-1, -1, 2, 2))[2].tolist():
            owner[i] = entry[2]
    for p in pts[::997]:
        assert owner[int(p["id"])] in lisa_lookup(idx, (p["x"], p["y"]))


def test_lisa_no_false_negatives_100k():
    pts = uniform(100_000, 20)
    idx = LisaIndex.build(pts)
    assert idx.shard_count == 10
    for b in boxes(200, 21, edge=0.03):
        got = idx.range_ids(b)
        assert sorted(got.tolist()) == range_oracle(pts, b)


def test_lisa_insert_overflow():
    pts = uniform(LARGE_LEAF_CAPACITY, 22)
    idx = LisaIndex.build(pts)
    pages = idx.store.page_count
    lisa_insert(idx, (0.5, 0.5, 10**6))
    assert idx.stats.splits == 1
    assert idx.store.page_count == pages + LARGE_LEAF_PAGES
    assert 10**6 in point_query(idx, (0.5, 0.5)).ids

    roomy = LisaIndex.build(uniform(5000, 23))
    pages = roomy.store.page_count
    lisa_insert(roomy, (0.25, 0.75, 10**6))
    assert roomy.stats.splits == 0 and roomy.store.page_count == pages


def test_lisa_inserts_outside_build_extent():
    idx = LisaIndex.build(uniform(3000, 24))
    extra = [(-0.5, 0.5, 9001), (1.5, 1.5, 9002), (0.5, -2.0, 9003)]
    for p in extra:
        idx.insert(p)
    for x, y, i in extra:
        assert point_query(idx, (x, y)).ids == [i]
    assert sorted(range_query(idx, (-1, -3, 2, 2)).ids) == list(range(3000)) + [9001, 9002, 9003]
