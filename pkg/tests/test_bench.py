import csv
import io
import json

import numpy as np
import pytest

from oracles import range_oracle
from spatialbench.bench.cli import main
from spatialbench.bench.data import (DatasetSpec, IngestError, gen_dataset, gen_queries, load_points, read_csv,
                                     save_points, write_csv)
from spatialbench.bench.registry import build_index, load_index, save_index
from spatialbench.bench.report import WALL_METRICS, report_emit, strip_wall
from spatialbench.bench.runner import WorkloadSpec, mixed_ops, nearest_rank, run_workload
from spatialbench.query import range_query

FAST = {"sample": 1000, "train_queries": 30, "height": 4, "epochs": 1}


def ks_distance(a, b):
    grid = np.sort(np.concatenate([a, b]))
    fa = np.searchsorted(np.sort(a), grid, side="right") / len(a)
    fb = np.searchsorted(np.sort(b), grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


# -- datasets ------------------------------------------------------------------------

def test_datasets_reproducible_and_in_unit_square():
    for dist in ("uniform", "normal", "skewed"):
        a = gen_dataset(DatasetSpec(dist, 2000, 5))
        b = gen_dataset(DatasetSpec(dist, 2000, 5))
        assert np.array_equal(a, b)
        assert a["x"].min() >= 0 and a["x"].max() <= 1 and a["y"].min() >= 0 and a["y"].max() <= 1
        assert a["id"].tolist() == list(range(2000))
    one = gen_dataset(DatasetSpec("uniform", 1, 3))
    assert len(one) == 1 and np.array_equal(one, gen_dataset(DatasetSpec("uniform", 1, 3)))
    with pytest.raises(ValueError):
        gen_dataset(DatasetSpec("uniform", 0, 3))


def test_skewed_concentrates_low_x():
    pts = gen_dataset(DatasetSpec("skewed", 100_000, 1))
    assert np.mean(pts["x"] < 0.25) >= 0.70


def test_normal_is_centred():
    pts = gen_dataset(DatasetSpec("normal", 20_000, 2))
    assert abs(pts["x"].mean() - 0.5) < 0.01
    assert 0.11 < pts["x"].std() < 0.13


def test_csv_round_trip(tmp_path):
    pts = gen_dataset(DatasetSpec("normal", 500, 4))
    path = tmp_path / "d.csv"
    write_csv(pts, path)
    back = read_csv(path)
    assert np.array_equal(back["x"], pts["x"]) and np.array_equal(back["y"], pts["y"])
    assert back["id"].tolist() == list(range(500))
    save_points(pts, tmp_path / "d.npy")
    assert np.array_equal(load_points(tmp_path / "d.npy"), pts)


def test_ingest_errors_carry_line_numbers(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n0.1,0.2\n0.3,oops\n")
    with pytest.raises(IngestError) as e:
        read_csv(bad)
    assert e.value.line == 3
    bad.write_text("0.1,0.2\n0.5\n")
    with pytest.raises(IngestError) as e:
        read_csv(bad)
    assert e.value.line == 2
    bad.write_text("0.1,inf\n")
    with pytest.raises(IngestError):
        read_csv(bad)
    with pytest.raises(IngestError):
        read_csv(tmp_path / "missing.csv")
    (tmp_path / "empty.csv").write_text("x,y\n")
    with pytest.raises(IngestError):
        read_csv(tmp_path / "empty.csv")


# -- queries -------------------------------------------------------------------------

def unclipped(boxes, pts):
    x0, y0, x1, y1 = pts["x"].min(), pts["y"].min(), pts["x"].max(), pts["y"].max()
    return boxes[(boxes[:, 0] > x0) & (boxes[:, 2] < x1) & (boxes[:, 1] > y0) & (boxes[:, 3] < y1)]


def test_range_shapes():
    pts = gen_dataset(DatasetSpec("uniform", 10_000, 6))
    xs, ys = np.ptp(pts["x"]), np.ptp(pts["y"])
    sq = unclipped(gen_queries("range", pts, 200, 1, edge_frac=0.01).boxes, pts)
    assert len(sq) > 150
    assert np.allclose(sq[:, 2] - sq[:, 0], 0.01 * xs) and np.allclose(sq[:, 3] - sq[:, 1], 0.01 * ys)
    # ratio 16 and 1/16 keep the area and swap the sides
    wide = unclipped(gen_queries("range", pts, 200, 1, edge_frac=0.01, ratio=16).boxes, pts)
    tall = unclipped(gen_queries("range", pts, 200, 1, edge_frac=0.01, ratio=1 / 16).boxes, pts)
    assert np.allclose(wide[:, 2] - wide[:, 0], 0.04 * xs) and np.allclose(wide[:, 3] - wide[:, 1], 0.0025 * ys)
    assert np.allclose(tall[:, 2] - tall[:, 0], 0.0025 * xs) and np.allclose(tall[:, 3] - tall[:, 1], 0.04 * ys)


def test_query_centres_follow_data():
    pts = gen_dataset(DatasetSpec("skewed", 10_000, 7))
    centres = gen_queries("point", pts, 10_000, 3).points
    assert ks_distance(centres[:, 0], pts["x"]) < 0.05
    with pytest.raises(ValueError):
        gen_queries("range", pts[:0], 10)
    with pytest.raises(ValueError):
        gen_queries("polygon", pts, 10)


def test_knn_ks_cycle_and_join_partners():
    pts = gen_dataset(DatasetSpec("uniform", 1000, 8))
    qs = gen_queries("knn", pts, 7, 0, k=[1, 5, 25])
    assert qs.ks.tolist() == [1, 5, 25, 1, 5, 25, 1]
    j = gen_queries("join", pts, 3, 0, join_size=10)
    assert len(j) == 3 and all(len(p) == 10 for p in j.partners)


# -- runner --------------------------------------------------------------------------

def test_nearest_rank():
    vals = [15, 20, 35, 40, 50]
    assert [nearest_rank(vals, q) for q in (5, 30, 40, 50, 100)] == [15, 20, 20, 35, 50]
    assert nearest_rank([7], 1) == nearest_rank([7], 99) == 7
    with pytest.raises(ValueError):
        nearest_rank([], 50)


def test_mix_windows():
    ops = mixed_ops("write_heavy", 400)
    for w in range(0, 400, 20):
        assert ops[w:w + 20].count("insert") == 18
    ops = mixed_ops("read_heavy", 400)
    for w in range(0, 400, 20):
        assert ops[w:w + 20].count("insert") == 2
    assert set(mixed_ops("write_only", 50)) == {"insert"}


def test_workload_validation():
    with pytest.raises(ValueError):
        WorkloadSpec(count=0).validate()
    with pytest.raises(ValueError):
        WorkloadSpec.from_dict({"kind": "scan"})
    with pytest.raises(ValueError):
        WorkloadSpec.from_dict({"colour": "red"})
    s = WorkloadSpec.from_dict({"kind": "knn", "k": "1, 5, 25", "count": "12"})
    assert s.k == [1, 5, 25] and s.count == 12


@pytest.fixture(scope="module")
def small():
    return gen_dataset(DatasetSpec("uniform", 3000, 9))


@pytest.mark.parametrize("kind", ["point", "range", "knn", "join", "write_heavy", "read_heavy", "write_only"])
def test_percentiles_monotone_and_io_means(small, kind):
    idx = build_index("rtree", small)
    rep = run_workload(idx, WorkloadSpec(kind=kind, count=60, edge_frac=0.05), small, "u")
    pct = rep.percentiles()
    assert all(pct[q] <= pct[q + 1] for q in range(1, 99))
    assert rep.ops == 60
    assert 0 <= rep.split_ratio <= 1
    if kind == "write_heavy":
        assert rep.inserts == 54 and rep.lookups == 6


def test_constant_clock_gives_flat_table(small):
    state = {"t": 0}

    def clock():
        state["t"] += 1000
        return state["t"]

    idx = build_index("kd", small)
    rep = run_workload(idx, WorkloadSpec(kind="range", count=40), small, "u", clock=clock)
    assert set(rep.percentiles().values()) == {1000}
    one = run_workload(idx, WorkloadSpec(kind="point", count=1), small, "u", clock=clock)
    assert len(set(one.percentiles().values())) == 1


def test_io_counts_match_direct_queries(small):
    idx = build_index("zr", small)
    spec = WorkloadSpec(kind="range", count=30, seed=4, edge_frac=0.05)
    rep = run_workload(idx, spec, small, "u")
    boxes = gen_queries("range", small, 30, 4, edge_frac=0.05).boxes
    direct = [range_query(idx, b) for b in boxes]
    assert rep.leaf_io == [r.leaf_io for r in direct]
    assert rep.result_count == sum(len(range_oracle(small, b)) for b in boxes)


# -- reports -------------------------------------------------------------------------

def test_report_csv_and_json_mirror(small, tmp_path):
    idx = build_index("lisa", small)
    rep = run_workload(idx, WorkloadSpec(kind="range", count=20), small, "u")
    csv_text, json_text = report_emit([rep], tmp_path / "r.csv", tmp_path / "r.json")
    rows = list(csv.reader(io.StringIO(csv_text)))
    assert rows[0] == ["index", "dataset", "workload", "metric", "value"]
    assert len(rows) >= 11
    doc = json.loads((tmp_path / "r.json").read_text())[0]
    for _, _, _, metric, value in rows[1:]:
        assert str(doc["metrics"][metric]) == value
    assert len(doc["percentiles"]) == 99
    with pytest.raises(ValueError):
        report_emit([])


def test_same_seed_runs_are_identical_modulo_wall_time(small):
    texts = []
    for _ in range(2):
        reps = []
        for name in ("rstar", "gkd", "zm"):
            idx = build_index(name, small, FAST)
            for kind in ("range", "knn", "write_heavy"):
                reps.append(run_workload(idx, WorkloadSpec(kind=kind, count=40, seed=3), small, "u"))
        texts.append(report_emit(reps)[0])
    assert strip_wall(texts[0]) == strip_wall(texts[1])
    assert not any(m in strip_wall(texts[0]) for m in WALL_METRICS)


# -- persistence and CLI -------------------------------------------------------------

@pytest.mark.parametrize("name", ["rtree", "rlr", "gkd", "qd", "lisa", "zrr", "bmtree", "zm"])
def test_save_load_round_trip(small, tmp_path, name):
    idx = build_index(name, small, FAST)
    save_index(idx, tmp_path / name)
    again = load_index(tmp_path / name)
    box = (0.3, 0.3, 0.5, 0.45)
    assert sorted(range_query(again, box).ids) == sorted(range_query(idx, box).ids) == range_oracle(small, box)
    assert again.build_stats().height == idx.build_stats().height
    again.insert((0.41, 0.42, 10**7))
    assert 10**7 in range_query(again, box).ids


def test_cli_end_to_end(tmp_path, capsys):
    data = tmp_path / "d.csv"
    assert main(["gen", "--dist", "skewed", "--n", "3000", "--seed", "2", "--out", str(data)]) == 0
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("sample = 1000\ntrain_queries = 30\nheight = 4\n")
    store = tmp_path / "store"
    assert main(["build", "--index", "bmtree", "--dataset", str(data), "--config", str(cfg),
                 "--store", str(store)]) == 0
    wl = tmp_path / "wl.txt"
    wl.write_text("kind = range\ncount = 25\nedge_frac = 0.01\n")
    out = tmp_path / "rep"
    assert main(["run", "--store", str(store), "--workload", str(wl), "--out", str(out), "--quiet"]) == 0
    assert (tmp_path / "rep.csv").exists()
    capsys.readouterr()
    assert main(["report", "--in", str(tmp_path / "rep.json"), "--format", "csv"]) == 0
    printed = capsys.readouterr().out
    assert printed.startswith("index,dataset,workload,metric,value")
    assert "bmtree,rep" not in printed and "bmtree,d,range,ops,25" in printed

    grid = tmp_path / "grid.txt"
    grid.write_text("height = 2, 4\nsample = 500, 1000\nprobe_metric = io\nprobe_queries = 20\n")
    assert main(["tune", "--index", "bmtree", "--grid", str(grid), "--t-build", "60",
                 "--dataset", str(data), "--out", str(tmp_path / "tune.json")]) == 0
    doc = json.loads((tmp_path / "tune.json").read_text())
    assert doc["best"] is not None and len(doc["results"]) == 4


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["build", "--index", "kd", "--dataset", str(tmp_path / "none.csv"),
                 "--store", str(tmp_path / "s")]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\nx,y,z\n")
    assert main(["build", "--index", "kd", "--dataset", str(bad), "--store", str(tmp_path / "s")]) == 3
    data = tmp_path / "d.csv"
    main(["gen", "--n", "300", "--out", str(data)])
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("sample = lots\n")
    assert main(["build", "--index", "rlr", "--dataset", str(data), "--config", str(cfg),
                 "--store", str(tmp_path / "s")]) == 2
    main(["build", "--index", "kd", "--dataset", str(data), "--store", str(tmp_path / "s")])
    wl = tmp_path / "wl.txt"
    wl.write_text("kind = range\ncount = 0\n")
    assert main(["run", "--store", str(tmp_path / "s"), "--workload", str(wl)]) == 2
    grid = tmp_path / "grid.txt"
    grid.write_text("epochs = 1\n")
    assert main(["tune", "--index", "rlr", "--grid", str(grid), "--t-build", "0", "--dataset", str(data)]) == 2
    assert main(["run", "--store", str(tmp_path / "nothing"), "--workload", str(wl)]) in (2, 3)
    capsys.readouterr()
