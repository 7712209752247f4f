"""Command line: gen, build, run, tune, report.

Exit codes: 0 success, 2 invalid input or configuration, 3 file or storage error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import sys
import time
from pathlib import Path

import numpy as np

from ..learn.bmtree import train_bmtree
from ..learn.qd import train_qd
from ..learn.rlr import train_rlr
from ..learn.tune import TuneError, TuneGrid, grid_tune
from ..query import range_query
from ..storage import StorageError
from .data import DISTRIBUTIONS, DatasetSpec, IngestError, gen_dataset, load_points, save_points, write_csv
from .registry import (ConfigError, INDEX_NAMES, build_index, load_index, save_index, training_queries,
                       training_sample, _typed)
from .report import json_to_csv, report_emit
from .runner import WorkloadSpec, run_workload

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3


def read_kv(path) -> dict:
    """Flat ``key = value`` file; optional [section] headers are merged."""
    text = Path(path).read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text if text.lstrip().startswith("[") else "[main]\n" + text)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    out = {}
    for section in cp.sections():
        out.update(cp[section])
    return out


def cmd_gen(args) -> int:
    pts = gen_dataset(DatasetSpec(args.dist, args.n, args.seed))
    out = Path(args.out)
    if out.suffix == ".npy":
        save_points(pts, out)
    else:
        write_csv(pts, out)
    print(f"wrote {len(pts)} {args.dist} points to {out}")
    return EXIT_OK


def cmd_build(args) -> int:
    cfg = read_kv(args.config) if args.config else {}
    pts = load_points(args.dataset)
    t0 = time.perf_counter()
    idx = build_index(args.index, pts, cfg)
    seconds = time.perf_counter() - t0
    save_index(idx, args.store)
    meta_extra = Path(args.store) / "build.txt"
    meta_extra.write_text(f"dataset={Path(args.dataset).resolve()}\nbuild_seconds={seconds:.6f}\n")
    st = idx.build_stats()
    print(f"{args.index}: {idx.count} points, height {st.height}, {st.page_count} pages, "
          f"{st.splits} splits, {st.adjustments} adjustments, {seconds:.2f}s")
    return EXIT_OK


def _build_info(store: Path) -> dict:
    info = {}
    p = store / "build.txt"
    if p.exists():
        for line in p.read_text().splitlines():
            k, _, v = line.partition("=")
            info[k] = v
    return info


def cmd_run(args) -> int:
    store = Path(args.store)
    info = _build_info(store)
    dataset_path = args.dataset or info.get("dataset")
    if not dataset_path:
        raise ConfigError("no dataset recorded for this store; pass --dataset")
    pts = load_points(dataset_path)
    spec = WorkloadSpec.from_dict(read_kv(args.workload))
    idx = load_index(store)
    rep = run_workload(idx, spec, pts, Path(dataset_path).stem)
    if "build_seconds" in info:
        rep.stats["build_seconds"] = float(info["build_seconds"])
    out = Path(args.out) if args.out else store / f"report_{spec.kind}"
    csv_text, _ = report_emit([rep], out.with_suffix(".csv"), out.with_suffix(".json"))
    if not args.quiet:
        sys.stdout.write(csv_text)
    return EXIT_OK


def _probe(index, boxes, metric: str) -> float:
    results = [range_query(index, b) for b in boxes]
    if metric == "io":
        return sum(r.io for r in results) / len(results)
    return sum(r.wall_nanos for r in results) / len(results)


def tuning_hooks(name: str, pts: np.ndarray, base_cfg: dict):
    """(trainer, builder) for one learned index over dataset ``pts``."""
    cfg = _typed(base_cfg)

    def sample_for(p):
        return training_sample(pts, int(p.get("sample", cfg["sample"])), np.random.default_rng(cfg["seed"]))

    def queries_for(p):
        return training_queries(pts, {**cfg, "train_queries": int(p.get("query", cfg["train_queries"]))})

    if name == "rlr":
        def trainer(p):
            return train_rlr(sample_for(p), int(p.get("epochs", cfg["epochs"])), cfg["seed"])

        def builder(p, model):
            return build_index("rlr", pts, {**cfg, "policy": model})
    elif name == "qd":
        def trainer(p):
            q = queries_for(p)
            return q, train_qd(sample_for(p), q, cfg["rollout_depth"], cfg["seed"])

        def builder(p, model):
            q, sel = model
            return build_index("qd", pts, {**cfg, "queries": q, "selector": sel})
    elif name == "bmtree":
        def trainer(p):
            return train_bmtree(sample_for(p), int(p.get("height", cfg["height"])), queries_for(p),
                                cfg["reward"], cfg["seed"])

        def builder(p, model):
            return build_index("bmtree", pts, {**cfg, "curve": model})
    else:
        raise ConfigError(f"{name} has no training parameters to tune")
    return trainer, builder


def cmd_tune(args) -> int:
    raw = read_kv(args.grid)
    params, extra = {}, {}
    for k, v in raw.items():
        if k in ("t_build", "probe_metric", "probe_queries") or k in ("seed", "reward", "rollout_depth"):
            extra[k] = v
            continue
        params[k] = [int(float(x)) for x in v.replace(",", " ").split()]
    t_build = args.t_build if args.t_build is not None else float(extra.get("t_build", 0) or 0)
    grid = TuneGrid(params, t_build)
    pts = load_points(args.dataset)
    base = {k: extra[k] for k in ("seed", "reward", "rollout_depth") if k in extra}
    trainer, builder = tuning_hooks(args.index, pts, base)
    probe_boxes = training_queries(pts, {**_typed(base), "seed": _typed(base)["seed"] + 101,
                                         "train_queries": int(extra.get("probe_queries", 200))})
    metric = extra.get("probe_metric", "latency")
    best = grid_tune(grid, trainer, builder, lambda idx: _probe(idx, probe_boxes, metric))
    doc = {"index": args.index, "t_build": t_build, "best": best, "results": grid.results}
    text = json.dumps(doc, indent=2, default=str) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    docs = []
    for path in args.inputs:
        d = json.loads(Path(path).read_text())
        docs.extend(d if isinstance(d, list) else [d])
    if not docs:
        raise ConfigError("no reports given")
    if args.format == "json":
        sys.stdout.write(json.dumps(docs, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(json_to_csv(docs))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spatialbench", description="Disk-resident spatial index benchmark")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--dist", choices=DISTRIBUTIONS, default="uniform")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help=".csv or .npy")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", help="build an index and save it to a store directory")
    p.add_argument("--index", choices=INDEX_NAMES, required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="key = value file (training and fill settings)")
    p.add_argument("--store", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("run", help="run a workload against a saved index")
    p.add_argument("--store", required=True)
    p.add_argument("--workload", required=True, help="key = value workload file")
    p.add_argument("--dataset", help="defaults to the dataset the index was built on")
    p.add_argument("--out", help="report path prefix (writes .csv and .json)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("tune", help="grid-tune a learned index under a build-cost limit")
    p.add_argument("--index", choices=("rlr", "qd", "bmtree"), required=True)
    p.add_argument("--grid", required=True, help="key = v1, v2, ... file")
    p.add_argument("--t-build", type=float, dest="t_build", help="build-cost limit in seconds")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("report", help="merge JSON reports into CSV or JSON")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IngestError, OSError, StorageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, TuneError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
