"""Workload execution and per-run metrics."""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..base import make_points
from ..index_mp import MPIndex
from ..query import knn_query, point_query, range_query, spatial_join
from .data import DEFAULT_EDGE, DEFAULT_K, DEFAULT_RATIO, JOIN_SIZE, gen_queries, sample_distribution

KINDS = ("point", "range", "knn", "join", "write_only", "write_heavy", "read_heavy")
WINDOW = 20
# positions inside each 20-op window that are the minority op
MINORITY_SLOTS = (9, 19)
PERCENTILES = tuple(range(1, 100))


@dataclass
class WorkloadSpec:
    kind: str = "range"
    count: int = 200
    seed: int = 0
    edge_frac: float = DEFAULT_EDGE
    ratio: float = DEFAULT_RATIO
    k: object = DEFAULT_K
    eps: float = 0.0
    join_size: int = JOIN_SIZE
    insert_dist: str = "uniform"

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadSpec":
        spec = cls()
        for key, raw in d.items():
            if not hasattr(spec, key):
                raise ValueError(f"unknown workload key {key!r}")
            cur = getattr(spec, key)
            if key == "k":
                vals = [int(v) for v in str(raw).replace(",", " ").split()]
                value = vals[0] if len(vals) == 1 else vals
            elif isinstance(cur, int):
                value = int(float(raw))
            elif isinstance(cur, float):
                value = float(raw)
            else:
                value = str(raw)
            setattr(spec, key, value)
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown workload kind {self.kind!r}")
        if self.count < 1:
            raise ValueError("workload needs at least one operation")
        if self.edge_frac <= 0 or self.ratio <= 0:
            raise ValueError("range shape needs positive edge and ratio")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")


@dataclass
class RunReport:
    index: str
    dataset: str
    workload: str
    latencies: list
    leaf_io: list
    inner_io: list
    page_writes: list
    inserts: int = 0
    lookups: int = 0
    splits: int = 0
    result_count: int = 0
    result_digest: str = ""
    stats: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def ops(self) -> int:
        return len(self.latencies)

    def percentile(self, q: float) -> int:
        return nearest_rank(self.latencies, q)

    def percentiles(self) -> dict:
        s = sorted(self.latencies)
        return {q: nearest_rank(s, q, presorted=True) for q in PERCENTILES}

    @property
    def split_ratio(self) -> float:
        return self.splits / self.inserts if self.inserts else 0.0

    def mean(self, values) -> float:
        return float(sum(values)) / len(values) if values else 0.0


def nearest_rank(values, q: float, presorted: bool = False) -> int:
    """Value at 1-based rank ceil(q/100 * n) of the sorted values."""
    if not values:
        raise ValueError("no values")
    s = values if presorted else sorted(values)
    rank = max(1, math.ceil(q / 100.0 * len(s)))
    return s[min(rank, len(s)) - 1]


def insert_stream(spec: WorkloadSpec, count: int, first_id: int) -> np.ndarray:
    rng = np.random.default_rng(spec.seed + 1_000_003)
    xy = sample_distribution(spec.insert_dist, count, rng)
    return make_points(xy[:, 0], xy[:, 1], np.arange(first_id, first_id + count))


def mixed_ops(kind: str, count: int) -> list[str]:
    """Op sequence for the write-only and mixed workloads."""
    if kind == "write_only":
        return ["insert"] * count
    minority, majority = ("lookup", "insert") if kind == "write_heavy" else ("insert", "lookup")
    return [minority if i % WINDOW in MINORITY_SLOTS else majority for i in range(count)]


def run_workload(idx, spec: WorkloadSpec, dataset: np.ndarray, dataset_name: str = "?",
                 clock=None) -> RunReport:
    """Execute ``spec`` against a built index.

    For write workloads ``idx`` is the bulk phase (built over ``dataset``);
    inserted points are fresh draws from ``spec.insert_dist`` with ids after
    the dataset's.  ``clock`` returns nanoseconds and is injectable.
    """
    spec.validate()
    clock = clock if clock is not None else time.perf_counter_ns
    rep = RunReport(idx.name, dataset_name, spec.kind, [], [], [], [])
    digest = hashlib.sha256()

    def record(res):
        rep.latencies.append(res.wall_nanos)
        rep.leaf_io.append(res.leaf_io)
        rep.inner_io.append(res.inner_io)
        rep.page_writes.append(res.page_writes)
        rep.result_count += len(res.ids)
        digest.update(repr(sorted(res.ids)).encode())

    if spec.kind in ("point", "range", "knn", "join"):
        qs = gen_queries(spec.kind, dataset, spec.count, spec.seed, spec.edge_frac, spec.ratio,
                         spec.k, spec.eps, spec.join_size)
        if spec.kind == "point":
            for q in qs.points:
                record(point_query(idx, q, clock))
        elif spec.kind == "range":
            for b in qs.boxes:
                record(range_query(idx, b, clock))
        elif spec.kind == "knn":
            for q, k in zip(qs.points, qs.ks):
                record(knn_query(idx, q, int(k), clock))
        else:
            for partner in qs.partners:
                other = MPIndex.bulk_load(partner, "z")
                record(spatial_join(idx, other, qs.eps, clock))
        rep.lookups = spec.count
    else:
        ops = mixed_ops(spec.kind, spec.count)
        n_ins = ops.count("insert")
        first_id = int(dataset["id"].max()) + 1 if len(dataset) else 0
        new = insert_stream(spec, n_ins, first_id)
        lookups = gen_queries("point", dataset, max(ops.count("lookup"), 1), spec.seed).points
        splits0 = idx.stats.splits
        i_ins = i_look = 0
        for op in ops:
            if op == "insert":
                p = new[i_ins]
                i_ins += 1
                before = idx.store.snapshot()
                t0 = clock()
                idx.insert((float(p["x"]), float(p["y"]), int(p["id"])))
                dt = clock() - t0
                d = idx.store.snapshot() - before
                rep.latencies.append(int(dt))
                rep.leaf_io.append(d.leaf_reads)
                rep.inner_io.append(d.inner_reads)
                rep.page_writes.append(d.page_writes)
            else:
                record(point_query(idx, lookups[i_look], clock))
                i_look += 1
        rep.inserts = n_ins
        rep.lookups = spec.count - n_ins
        rep.splits = idx.stats.splits - splits0
    rep.result_digest = digest.hexdigest()[:16]
    st = idx.build_stats()
    rep.stats = {"height": st.height, "size_bytes": idx.size_bytes, "page_count": st.page_count,
                 "utilization": round(float(idx.utilization()), 6), "splits": st.splits,
                 "adjustments": st.adjustments}
    rep.config = {k: str(v) for k, v in getattr(idx, "config", {}).items()}
    for k, v in vars(spec).items():
        rep.config[f"workload.{k}"] = str(v)
    return rep
