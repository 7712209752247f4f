"""Synthetic datasets, CSV ingestion and query generation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..base import POINT_DTYPE, make_points

DISTRIBUTIONS = ("uniform", "normal", "skewed")
NORMAL_SIGMA = 0.125
SKEW_POWER = 4
DEFAULT_EDGE = 0.001
DEFAULT_RATIO = 1.0
DEFAULT_K = 25
JOIN_SIZE = 100


class IngestError(ValueError):
    """A dataset file could not be read; ``line`` is 1-based when known."""

    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "uniform"
    n: int = 10_000
    seed: int = 0


def _normal(rng, n: int) -> np.ndarray:
    out = np.empty((0, 2))
    while len(out) < n:
        draw = rng.normal(0.5, NORMAL_SIGMA, size=(2 * (n - len(out)) + 16, 2))
        ok = draw[(draw >= 0.0).all(axis=1) & (draw <= 1.0).all(axis=1)]
        out = np.vstack([out, ok])
    return out[:n]


def sample_distribution(dist: str, n: int, rng) -> np.ndarray:
    """(n, 2) coordinates in the unit square."""
    if dist == "uniform":
        return rng.random((n, 2))
    if dist == "normal":
        return _normal(rng, n)
    if dist == "skewed":
        return rng.random((n, 2)) ** SKEW_POWER
    raise ValueError(f"unknown distribution {dist!r}")


def gen_dataset(spec: DatasetSpec, id_offset: int = 0) -> np.ndarray:
    if spec.source not in DISTRIBUTIONS:
        return read_csv(spec.source)
    if spec.n < 1:
        raise ValueError("dataset needs n >= 1")
    rng = np.random.default_rng(spec.seed)
    xy = sample_distribution(spec.source, spec.n, rng)
    return make_points(xy[:, 0], xy[:, 1], np.arange(id_offset, id_offset + spec.n))


def read_csv(path) -> np.ndarray:
    """``x,y`` per line; an optional ``x,y`` header is skipped; ids are 0-based line order."""
    try:
        fh = open(path, newline="")
    except OSError as e:
        raise IngestError(f"cannot open {path}: {e.strerror}") from e
    xs, ys = [], []
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if lineno == 1 and [c.strip().lower() for c in row[:2]] == ["x", "y"]:
                continue
            if len(row) < 2:
                raise IngestError(f"expected 'x,y', got {','.join(row)!r}", lineno)
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError:
                raise IngestError(f"non-numeric coordinate in {','.join(row)!r}", lineno) from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise IngestError("non-finite coordinate", lineno)
            xs.append(x)
            ys.append(y)
    if not xs:
        raise IngestError(f"{path} holds no points")
    return make_points(xs, ys)


def write_csv(points: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("x,y\n")
        for x, y in zip(points["x"].tolist(), points["y"].tolist()):
            fh.write(f"{x!r},{y!r}\n")


def save_points(points: np.ndarray, path) -> None:
    np.save(Path(path), points, allow_pickle=False)


def load_points(path) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        arr = np.load(p, allow_pickle=False)
        if arr.dtype != POINT_DTYPE:
            raise IngestError(f"{p} is not a point array")
        return arr
    return read_csv(p)


# -- queries --------------------------------------------------------------------

@dataclass
class QuerySet:
    kind: str
    points: np.ndarray | None = None     # (n, 2) query points or centers
    boxes: np.ndarray | None = None      # (n, 4) range boxes
    ks: np.ndarray | None = None         # per-query k
    partners: list = field(default_factory=list)  # join partner point arrays
    eps: float = 0.0

    def __len__(self) -> int:
        for v in (self.points, self.boxes):
            if v is not None:
                return len(v)
        return len(self.partners)


def extent(points: np.ndarray) -> tuple[float, float, float, float]:
    return (float(points["x"].min()), float(points["y"].min()),
            float(points["x"].max()), float(points["y"].max()))


def range_boxes(points: np.ndarray, count: int, rng, edge_frac: float = DEFAULT_EDGE,
                ratio: float = DEFAULT_RATIO) -> np.ndarray:
    """Boxes centred on sampled data points; area (edge_frac * extent)^2 with
    width/height = ratio, clipped to the data extent."""
    x0, y0, x1, y1 = extent(points)
    w = edge_frac * (x1 - x0) * math.sqrt(ratio)
    h = edge_frac * (y1 - y0) / math.sqrt(ratio)
    pick = rng.integers(0, len(points), size=count)
    cx, cy = points["x"][pick], points["y"][pick]
    boxes = np.column_stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])
    boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], x0, x1)
    boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], y0, y1)
    return boxes


def sample_points(points: np.ndarray, count: int, rng) -> np.ndarray:
    pick = rng.integers(0, len(points), size=count)
    return np.column_stack([points["x"][pick], points["y"][pick]])


def join_partners(points: np.ndarray, count: int, rng, size: int = JOIN_SIZE,
                  id_offset: int = 0) -> list[np.ndarray]:
    """Partner sets for joins: half copies of data points, half uniform in the
    data extent, so eps=0 joins have both matches and misses."""
    x0, y0, x1, y1 = extent(points)
    out = []
    for j in range(count):
        half = size // 2
        copies = sample_points(points, half, rng)
        fresh = np.column_stack([rng.uniform(x0, x1, size - half), rng.uniform(y0, y1, size - half)])
        xy = np.vstack([copies, fresh])
        base = id_offset + j * size
        out.append(make_points(xy[:, 0], xy[:, 1], np.arange(base, base + size)))
    return out


def gen_queries(kind: str, points: np.ndarray, count: int, seed: int = 0, edge_frac: float = DEFAULT_EDGE,
                ratio: float = DEFAULT_RATIO, k=DEFAULT_K, eps: float = 0.0,
                join_size: int = JOIN_SIZE) -> QuerySet:
    if len(points) == 0:
        raise ValueError("queries need a nonempty dataset")
    rng = np.random.default_rng(seed)
    if kind == "point":
        return QuerySet(kind, points=sample_points(points, count, rng))
    if kind == "range":
        return QuerySet(kind, boxes=range_boxes(points, count, rng, edge_frac, ratio))
    if kind == "knn":
        ks = np.resize(np.atleast_1d(np.asarray(k, dtype=np.int64)), count)
        return QuerySet(kind, points=sample_points(points, count, rng), ks=ks)
    if kind == "join":
        return QuerySet(kind, partners=join_partners(points, count, rng, join_size), eps=eps)
    raise ValueError(f"unknown query kind {kind!r}")
