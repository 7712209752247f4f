import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import range_oracle
from spatialbench.base import make_points
from spatialbench.geometry import overlap_area
from spatialbench.index_dp import (VARIANTS, RTreeIndex, build_dp, check_tree, least_enlargement_order,
                                   quadratic_split, rstar_split)
from spatialbench.learn.policy import PolicyModel
from spatialbench.query import point_query, range_query
from spatialbench.storage import NodePage


def uniform(n, seed=0):
    rng = np.random.default_rng(seed)
    return make_points(rng.random(n), rng.random(n))


def mbr(rects):
    return np.array([rects[:, 0].min(), rects[:, 1].min(), rects[:, 2].max(), rects[:, 3].max()])


def test_first_insert_makes_leaf_root():
    idx = RTreeIndex()
    idx.insert((0.5, 0.5, 7))
    root = idx.store.peek_page(idx.root)
    assert idx.height == 1 and root.is_leaf and root.payload.tolist() == [7]


@pytest.mark.parametrize("variant", VARIANTS)
def test_capacity_plus_one_splits_once(variant):
    idx = build_dp(uniform(101, 1), variant)
    assert idx.stats.splits == 1 and idx.height == 2
    assert check_tree(idx, idx.fill_ratio) == []


@pytest.mark.parametrize("variant", VARIANTS)
def test_collinear_points_split_into_disjoint_nodes(variant):
    xs = np.linspace(0, 1, 101)
    idx = build_dp(make_points(xs, np.full(101, 0.5)), variant)
    root = idx.store.peek_page(idx.root)
    assert root.count == 2
    a, b = root.rects
    assert a[2] < b[0] or b[2] < a[0]


@pytest.mark.parametrize("variant", VARIANTS)
def test_invariants_and_recall(variant):
    pts = uniform(3000, 2)
    idx = build_dp(pts, variant)
    assert check_tree(idx, idx.fill_ratio) == []
    assert idx.count == 3000
    got = idx.all_points()
    assert sorted(got["id"].tolist()) == list(range(3000))
    for p in pts[::97]:
        assert int(p["id"]) in point_query(idx, (p["x"], p["y"])).ids
    rng = np.random.default_rng(3)
    for _ in range(20):
        c = rng.random(2)
        box = (c[0] - 0.05, c[1] - 0.05, c[0] + 0.05, c[1] + 0.05)
        assert sorted(range_query(idx, box).ids) == range_oracle(pts, box)


def test_choose_subtree_prefers_smaller_enlargement():
    rects = np.array([[0.0, 0.0, 1.0, 1.0], [2.0, 0.0, 3.0, 1.0]])
    # child 0 grows by 0.9, child 1 by 0.1
    p =np.array([1.9, 0.5, 1.9, 0.5])
    assert least_enlargement_order(rects, p, np.array([0, 1]))[0] == 1
    inside = np.array([0.5, 0.5, 0.5, 0.5])
    for variant in VARIANTS:
        idx = RTreeIndex(variant=variant)
        node = NodePage(1, rects, np.array([10, 11], dtype=np.uint64))
        assert idx.choose_subtree(node, inside) == 0


def test_zero_policy_rlr_matches_rtree_exactly():
    pts = uniform(4000, 4)
    a = build_dp(pts, "rtree")
    b = build_dp(pts, "rlr", policy=PolicyModel.zeros())
    assert a.store.page_count == b.store.page_count
    assert all(a.store.peek_raw(i) == b.store.peek_raw(i) for i in range(a.store.page_count))
    assert a.stats == b.stats


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=101, max_size=101))
def test_split_conserves_entries(coords):
    rects = np.array([[x, y, x, y] for x, y in coords])
    for split in (quadratic_split, rstar_split):
        a, b = split(rects, 40)
        assert sorted(np.concatenate([a, b]).tolist()) == list(range(101))
        assert min(len(a), len(b)) >= 40


def test_rstar_split_overlap_not_worse_than_quadratic():
    rng = np.random.default_rng(5)
    cluster = rng.normal(0.5, 0.05, size=(95, 2))
    outliers = rng.random((6, 2))
    pts = np.vstack([cluster, outliers])
    rects = np.hstack([pts, pts])
    qa, qb = quadratic_split(rects, 40)
    ra, rb = rstar_split(rects, 40)
    assert overlap_area(mbr(rects[ra]), mbr(rects[rb])) <= overlap_area(mbr(rects[qa]), mbr(rects[qb]))


def test_reinsert_evicts_farthest_entries():
    angles = np.arange(30) * 2 * np.pi / 30
    outer = np.column_stack([0.5 + 0.4 * np.cos(angles), 0.5 + 0.4 * np.sin(angles)])
    centre = np.full((71, 2), 0.5)
    pts = np.vstack([centre, outer])
    node = NodePage(0, np.hstack([pts, pts]), np.arange(101, dtype=np.uint64))
    kept, evicted = RTreeIndex(variant="rstar").reinsert_pick(node)
    assert sorted(e[1] for e in evicted) == list(range(71, 101))
    assert kept.count == 71


def test_rstar_reinserts_then_splits():
    idx = build_dp(uniform(5000, 6), "rstar")
    plain = build_dp(uniform(5000, 6), "rtree")
    assert check_tree(idx, idx.fill_ratio) == []
    assert idx.stats.adjustments > plain.stats.adjustments


def test_inner_rects_equal_child_union():
    idx = build_dp(uniform(2500, 7), "rtree")
    for pid, page, _ in idx.iter_nodes():
        if not page.is_leaf:
            for rect, child in zip(page.rects, page.payload):
                assert np.array_equal(rect, idx.store.peek_page(int(child)).mbr())


def test_build_is_deterministic():
    a = build_dp(uniform(1500, 8), "rstar")
    b = build_dp(uniform(1500, 8), "rstar")
    assert [a.store.peek_raw(i) for i in range(a.store.page_count)] == \
           [b.store.peek_raw(i) for i in range(b.store.page_count)]


def test_unknown_variant():
    with pytest.raises(ValueError):
        RTreeIndex(variant="hilbert")
