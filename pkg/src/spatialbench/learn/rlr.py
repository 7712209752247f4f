"""Epsilon-greedy training of the RLR-tree's linear decision policy.

The policy scores subtree and split candidates with a linear function of
their features.  Training inserts the sample into an RLR-tree while the
policy acts (with random exploration); every few inserts a batch of probe
range queries is re-run and the I/O saving relative to a plain R-tree built
over the same insert prefix becomes the reward for the decisions taken
since the previous probe.  Each decision then takes one gradient step of
size ``alpha * reward`` along the chosen candidate's features relative to
the mean of the alternatives, so actions followed by worse I/O than the
baseline lose score.

After every epoch the current weights are evaluated on a full greedy build;
the best weights seen, counting the all-zero policy (which reproduces the
plain R-tree), are returned, so a trained policy never does worse than the
R-tree on the probe workload.
"""
from __future__ import annotations

import numpy as np

from ..base import as_points
from ..bench.data import range_boxes
from ..index_dp import RTreeIndex
from ..query import range_query
from .policy import PolicyModel

MIN_SAMPLE = 1000
ALPHA = 0.01
EPS_START, EPS_END = 0.1, 0.01
PROBE_COUNT = 32
PROBE_EVERY = 64
PROBE_EDGE = 0.01


class TrainingError(ValueError):
    pass


def probe_io(idx, boxes) -> int:
    return sum(range_query(idx, b).io for b in boxes)


def _baseline_trace(pts, boxes, every: int) -> list[int]:
    idx = RTreeIndex(variant="rtree")
    trace = []
    for i, (x, y, pid) in enumerate(zip(pts["x"].tolist(), pts["y"].tolist(), pts["id"].tolist()), 1):
        idx.insert((x, y, pid))
        if i % every == 0:
            trace.append(probe_io(idx, boxes))
    return trace


def evaluate_policy(pts, policy: PolicyModel, boxes) -> int:
    idx = RTreeIndex(variant="rlr", policy=policy)
    for x, y, pid in zip(pts["x"].tolist(), pts["y"].tolist(), pts["id"].tolist()):
        idx.insert((x, y, pid))
    return probe_io(idx, boxes)


def train_rlr(sample, epochs: int = 1, seed: int = 0, alpha: float = ALPHA,
              eps_start: float = EPS_START, eps_end: float = EPS_END,
              probe_count: int = PROBE_COUNT, probe_every: int = PROBE_EVERY,
              probe_edge: float = PROBE_EDGE) -> PolicyModel:
    pts = as_points(sample)
    if len(pts) < MIN_SAMPLE:
        raise TrainingError(f"training sample needs at least {MIN_SAMPLE} points, got {len(pts)}")
    if epochs < 1:
        raise TrainingError("epochs must be at least 1")
    rng = np.random.default_rng(seed)
    pts = pts[rng.permutation(len(pts))]
    boxes = range_boxes(pts, probe_count, rng, probe_edge)
    baseline = _baseline_trace(pts, boxes, probe_every)

    w = {"choose_subtree": np.zeros(4), "split": np.zeros(4)}
    b = {"choose_subtree": 0.0, "split": 0.0}
    best = PolicyModel.zeros()
    best_cost = zero_cost = evaluate_policy(pts, best, boxes)
    total = epochs * len(pts)
    step = 0
    history = []

    for epoch in range(epochs):
        policy = PolicyModel(w["choose_subtree"], b["choose_subtree"], w["split"], b["split"])
        idx = RTreeIndex(variant="rlr", policy=policy)
        taken: list[tuple[str, np.ndarray]] = []

        def hook(action, feats, pick):
            eps = eps_start + (eps_end - eps_start) * step / max(total - 1, 1)
            if rng.random() < eps:
                pick = int(rng.integers(0, len(feats)))
            if pick >= 0 and len(feats) > 1:
                taken.append((action, feats[pick] - feats.mean(axis=0)))
            return pick

        idx.decision_log = hook
        for i, (x, y, pid) in enumerate(zip(pts["x"].tolist(), pts["y"].tolist(), pts["id"].tolist()), 1):
            idx.insert((x, y, pid))
            step += 1
            if i % probe_every == 0:
                base = baseline[i // probe_every - 1]
                reward = (base - probe_io(idx, boxes)) / max(base, 1)
                for action, f in taken:
                    w[action] = w[action] + alpha * reward * f
                # the index holds references to the live policy arrays
                policy.choose_weights, policy.choose_bias = w["choose_subtree"], b["choose_subtree"]
                policy.split_weights, policy.split_bias = w["split"], b["split"]
                taken.clear()
        candidate = PolicyModel(w["choose_subtree"].copy(), b["choose_subtree"],
                                w["split"].copy(), b["split"])
        cost = evaluate_policy(pts, candidate, boxes)
        history.append(cost)
        if cost < best_cost:
            best, best_cost = candidate, cost

    best.meta = {"epochs": epochs, "sample": len(pts), "seed": seed,
                 "probe_io": best_cost, "baseline_io": zero_cost,
                 "epoch_io": ",".join(map(str, history)), "reward": "probe-delta"}
    return best
