"""Qd-tree cut selection: rollout scoring and a linear selector fitted to it.

A candidate cut is scored by the training-workload blocks it lets queries
skip once the region below it has been partitioned for ``depth - 1`` more
levels with greedy cuts.  The selector ranks candidates by the greedy score
plus a learned linear correction over three features (query provenance,
blocks-skipped estimate, balance); the correction is fitted by least squares
to the gap between rollout and greedy scores seen while building a tree
over a training sample.  Depth 0 and 1 rollouts are the greedy score, so
they fit zero weights and the selector then builds the GKD-tree.
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np

from ..base import as_points
from ..index_sp import FULL_REGION, CutSpace, queries_in_region
from ..storage import NODE_CAPACITY

FEATURES = ("provenance", "skipped", "balance")
MAX_CANDIDATES = 16
MAX_DECISIONS = 32


class SelectorFormatError(ValueError):
    pass


class QdSelector:
    def __init__(self, weights=None, rollout_depth: int = 1, meta: dict | None = None):
        self.weights = np.zeros(3) if weights is None else np.asarray(weights, dtype=np.float64)
        if self.weights.shape != (3,) or not np.all(np.isfinite(self.weights)):
            raise SelectorFormatError("selector needs 3 finite weights")
        self.rollout_depth = rollout_depth
        self.meta = dict(meta or {})

    def scores(self, space: CutSpace) -> np.ndarray:
        return space.greedy_scores() + space.features() @ self.weights

    def select(self, space: CutSpace) -> int:
        if not self.weights.any():
            return space.greedy()
        return space.ranked(self.scores(space))[0]

    def dumps(self) -> str:
        lines = ["# selector qd", f"rollout_depth {self.rollout_depth}"]
        lines += [f"meta.{k} {self.meta[k]}" for k in sorted(self.meta)]
        lines += [f"weight.{n} {float(v)!r}" for n, v in zip(FEATURES, self.weights)]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "QdSelector":
        values, meta, depth = {}, {}, 1
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise SelectorFormatError(f"bad selector line {line!r}")
            name, value = parts
            try:
                if name == "rollout_depth":
                    depth = int(value)
                elif name.startswith("meta."):
                    meta[name[5:]] = value
                elif name.startswith("weight."):
                    values[name[7:]] = float(value)
                else:
                    raise SelectorFormatError(f"unknown selector key {name!r}")
            except ValueError as e:
                raise SelectorFormatError(f"bad selector value in {line!r}") from e
        missing = [n for n in FEATURES if n not in values]
        if missing:
            raise SelectorFormatError(f"selector missing weights {missing}")
        return cls([values[n] for n in FEATURES], depth, meta)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "QdSelector":
        try:
            with open(path) as fh:
                return cls.loads(fh.read())
        except OSError as e:
            raise SelectorFormatError(f"cannot read selector {path}: {e.strerror}") from e


def leaf_cost(pts, region, queries, capacity: int = NODE_CAPACITY) -> float:
    """Blocks the workload touches if the region stayed one (multi-block) leaf."""
    return float(len(queries_in_region(queries, region)) * math.ceil(len(pts) / capacity))


def rollout_cost(pts, region, depth: int, queries, levels: int, capacity: int = NODE_CAPACITY) -> float:
    """Workload block cost after ``levels`` more greedy cut levels."""
    if len(pts) <= capacity or levels <= 0:
        return leaf_cost(pts, region, queries, capacity)
    space = CutSpace(pts, region, depth, queries, capacity)
    return split_cost(space, space.greedy(), levels - 1, queries, capacity)


def split_cost(space: CutSpace, i: int, levels: int, queries, capacity: int = NODE_CAPACITY) -> float:
    lp, lr, rp, rr = space.split(i)
    d = space.depth + 1
    return (rollout_cost(lp, lr, d, queries, levels, capacity)
            + rollout_cost(rp, rr, d, queries, levels, capacity))


def rollout_scores(space: CutSpace, depth: int, queries, candidates=None,
                   capacity: int = NODE_CAPACITY) -> np.ndarray:
    """Normalised blocks skipped per candidate after a depth-``depth`` rollout."""
    idx = range(len(space.candidates)) if candidates is None else candidates
    if depth <= 1:
        return np.array([1.0 + space.greedy_scores()[i] for i in idx])
    return np.array([1.0 - split_cost(space, i, depth - 1, queries, capacity) / space.norm() for i in idx])


def train_qd(sample, training_queries, rollout_depth: int = 2, seed: int = 0,
             max_decisions: int = MAX_DECISIONS, max_candidates: int = MAX_CANDIDATES,
             capacity: int = NODE_CAPACITY) -> QdSelector:
    """Walk the top of a tree built over ``sample`` (breadth first, following
    the rollout's best cut), record features and rollout-minus-greedy gaps
    for the best greedy candidates at each decision, and fit the weights."""
    queries = np.asarray(training_queries, dtype=np.float64).reshape(-1, 4)
    if len(queries) == 0:
        raise ValueError("qd training needs at least one training query")
    pts = as_points(sample)
    meta = {"sample": len(pts), "seed": seed, "queries": len(queries)}
    if rollout_depth <= 1:
        return QdSelector(np.zeros(3), rollout_depth, {**meta, "decisions": 0})
    xs, ys = [], []
    todo = deque([(pts, FULL_REGION, 0)])
    decisions = 0
    while todo and decisions < max_decisions:
        p, region, depth = todo.popleft()
        if len(p) <= capacity:
            continue
        space = CutSpace(p, region, depth, queries, capacity)
        ranked = space.ranked(space.greedy_scores())[:max_candidates]
        if len(ranked) > 1:
            target = rollout_scores(space, rollout_depth, queries, ranked, capacity)
            greedy = 1.0 + space.greedy_scores()[ranked]
            xs.append(space.features()[ranked])
            ys.append(target - greedy)
            best = ranked[int(np.argmax(target))]
        else:
            best = ranked[0]
        decisions += 1
        lp, lr, rp, rr = space.split(best)
        todo.append((lp, lr, depth + 1))
        todo.append((rp, rr, depth + 1))
    if not xs:
        return QdSelector(np.zeros(3), rollout_depth, {**meta, "decisions": decisions})
    X = np.vstack(xs)
    y = np.concatenate(ys)
    w, *_ = np.linalg.lstsq(X, y, rcond=None)
    if not np.any(y):
        w = np.zeros(3)
    return QdSelector(w, rollout_depth, {**meta, "decisions": decisions})
