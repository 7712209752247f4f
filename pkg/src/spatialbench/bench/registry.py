"""Build any of the eleven index variants by name, and save/load them."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..base import BuildStats, as_points
from ..geometry import BMTreeCurve
from ..index_dp import RTreeIndex
from ..index_mp import MPIndex, ZMIndex
from ..index_sp import LisaIndex, SPIndex
from ..learn.bmtree import train_bmtree
from ..learn.policy import PolicyModel
from ..learn.qd import QdSelector, train_qd
from ..learn.rlr import MIN_SAMPLE, train_rlr
from ..storage import BlockStore, read_sidecar, write_sidecar
from .data import DEFAULT_EDGE, range_boxes

INDEX_NAMES = ("rtree", "rstar", "rlr", "kd", "gkd", "qd", "lisa", "zr", "zrr", "bmtree", "zm")
FAMILIES = {"rtree": "dp", "rstar": "dp", "rlr": "dp", "kd": "sp", "gkd": "sp", "qd": "sp",
            "lisa": "sp", "zr": "mp", "zrr": "mp", "bmtree": "mp", "zm": "mp"}

# desk-scale training defaults; every key can be overridden through the config
DEFAULTS = {
    "seed": 0,
    "fill_ratio": 0.4,
    "train_queries": 200,
    "train_edge": DEFAULT_EDGE,
    "train_ratio": 1.0,
    "epochs": 1,
    "sample": 10_000,
    "rollout_depth": 2,
    "height": 8,
    "reward": "estimated",
}

PAGES_FILE = "index.pages"
META_FILE = "index.meta"


class ConfigError(ValueError):
    pass


def _typed(cfg: dict) -> dict:
    out = dict(DEFAULTS)
    for k, v in cfg.items():
        if k in DEFAULTS and isinstance(v, str):
            base = DEFAULTS[k]
            try:
                if isinstance(base, int):
                    v = int(float(v))
                elif isinstance(base, float):
                    v = float(v)
            except ValueError:
                raise ConfigError(f"bad value for {k}: {v!r}") from None
        out[k] = v
    return out


def training_sample(points: np.ndarray, size: int, rng) -> np.ndarray:
    if len(points) <= size:
        return points
    return points[np.sort(rng.choice(len(points), size=size, replace=False))]


def training_queries(points: np.ndarray, cfg: dict) -> np.ndarray:
    rng = np.random.default_rng(cfg["seed"] + 7)
    return range_boxes(points, cfg["train_queries"], rng, cfg["train_edge"], cfg["train_ratio"])


def build_index(name: str, points, config: dict | None = None, store: BlockStore | None = None):
    """Build index ``name`` over ``points``; learned variants train first.

    Artifacts that a trained variant needs are passed back on the index as
    ``artifacts`` (policy, selector, curve, training queries) so they can be
    saved next to the store.
    """
    if name not in INDEX_NAMES:
        raise ConfigError(f"unknown index {name!r}; choose from {', '.join(INDEX_NAMES)}")
    cfg = _typed(config or {})
    pts = as_points(points)
    rng = np.random.default_rng(cfg["seed"])
    artifacts = {}
    if name in ("rtree", "rstar"):
        idx = RTreeIndex.from_points(pts, name, store=store, fill_ratio=cfg["fill_ratio"])
    elif name == "rlr":
        policy = cfg.get("policy")
        if isinstance(policy, (str, Path)):
            policy = PolicyModel.load(policy)
        if policy is None:
            sample = training_sample(pts, cfg["sample"], rng)
            policy = (train_rlr(sample, cfg["epochs"], cfg["seed"]) if len(sample) >= MIN_SAMPLE
                      else PolicyModel.zeros())
        artifacts["policy"] = policy
        idx = RTreeIndex.from_points(pts, "rlr", store=store, fill_ratio=cfg["fill_ratio"], policy=policy)
    elif name == "kd":
        idx = SPIndex.build(pts, "kd", store=store)
    elif name in ("gkd", "qd"):
        queries = cfg.get("queries")
        queries = training_queries(pts, cfg) if queries is None else np.asarray(queries, dtype=np.float64)
        artifacts["queries"] = queries
        selector = None
        if name == "qd":
            selector = cfg.get("selector")
            if isinstance(selector, (str, Path)):
                selector = QdSelector.load(selector)
            if selector is None:
                sample = training_sample(pts, cfg["sample"], rng)
                selector = train_qd(sample, queries, cfg["rollout_depth"], cfg["seed"])
            artifacts["selector"] = selector
        idx = SPIndex.build(pts, name, queries, selector, store=store)
    elif name == "lisa":
        idx = LisaIndex.build(pts, store)
    elif name == "zr":
        idx = MPIndex.bulk_load(pts, "z", store=store)
    elif name == "zrr":
        idx = MPIndex.bulk_load(pts, "z_rank", store=store)
    elif name == "bmtree":
        curve = cfg.get("curve")
        if isinstance(curve, (str, Path)):
            curve = BMTreeCurve.loads(Path(curve).read_text())
        if curve is None:
            sample = training_sample(pts, cfg["sample"], rng)
            curve = train_bmtree(sample, cfg["height"], training_queries(pts, cfg), cfg["reward"], cfg["seed"])
        artifacts["curve"] = curve
        idx = MPIndex.bulk_load(pts, "bmtree", curve=curve, store=store)
    else:
        idx = ZMIndex.build(pts, store=store)
    idx.artifacts = artifacts
    idx.config = {k: cfg[k] for k in DEFAULTS}
    return idx


# -- persistence -----------------------------------------------------------------

def save_index(idx, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    idx.store.save_as(d / PAGES_FILE)
    meta = {"name": idx.name, **idx.meta()}
    for k, v in getattr(idx, "config", {}).items():
        meta[f"config.{k}"] = v
    arts = getattr(idx, "artifacts", {})
    if "policy" in arts:
        arts["policy"].save(d / "policy.txt")
    if "selector" in arts:
        arts["selector"].save(d / "selector.txt")
    if "curve" in arts:
        (d / "curve.txt").write_text(arts["curve"].dumps())
    if "queries" in arts:
        np.savetxt(d / "train_queries.txt", arts["queries"], fmt="%.17g")
    write_sidecar(d / META_FILE, meta)
    return d


def _restore_stats(idx, meta: dict) -> None:
    s = BuildStats()
    for k in s.as_dict():
        if f"stats.{k}" in meta:
            setattr(s, k, int(meta[f"stats.{k}"]))
    idx.stats = s


def load_index(directory):
    d = Path(directory)
    meta = read_sidecar(d / META_FILE)
    store = BlockStore.open(d / PAGES_FILE)
    name = meta["name"]
    if name == "zm":
        idx = ZMIndex.from_meta(store, meta)
    elif name == "lisa":
        idx = LisaIndex.from_meta(store, meta)
    elif FAMILIES[name] == "sp":
        queries = np.loadtxt(d / "train_queries.txt", ndmin=2) if name in ("gkd", "qd") else None
        selector = QdSelector.load(d / "selector.txt") if name == "qd" else None
        idx = SPIndex(store, name, queries, selector)
        idx._building = False
    elif name in ("zr", "zrr", "bmtree"):
        curve = BMTreeCurve.loads((d / "curve.txt").read_text()) if name == "bmtree" else None
        idx = MPIndex(store, name, meta["key_fn"], int(meta["bits"]), curve)
    else:
        policy = PolicyModel.load(d / "policy.txt") if name == "rlr" else None
        idx = RTreeIndex(store, name, float(meta["fill_ratio"]), policy, create=False)
    if idx.is_tree:
        idx.root = int(meta["root"])
        idx.height = int(meta["height"])
        idx.count = int(meta["count"])
        if hasattr(idx, "_counts"):
            for pid, page, _ in idx.iter_nodes():
                idx._counts[pid] = page.count
    _restore_stats(idx, meta)
    idx.config = {k[7:]: v for k, v in meta.items() if k.startswith("config.")}
    idx.artifacts = {}
    return idx
