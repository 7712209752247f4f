"""Linear scoring policy used by the RLR-tree for subtree choice and splits."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import overlap_area, rects_area, rects_margin

CHOOSE_FEATURES = ("area_enlargement", "margin_enlargement", "overlap_increase", "occupancy")
SPLIT_FEATURES = ("area", "margin", "overlap", "occupancy")
ACTIONS = {"choose_subtree": CHOOSE_FEATURES, "split": SPLIT_FEATURES}

_TINY = 1e-300


class PolicyFormatError(ValueError):
    pass


@dataclass
class PolicyModel:
    choose_weights: np.ndarray = field(default_factory=lambda: np.zeros(4))
    choose_bias: float = 0.0
    split_weights: np.ndarray = field(default_factory=lambda: np.zeros(4))
    split_bias: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.choose_weights = np.asarray(self.choose_weights, dtype=np.float64)
        self.split_weights = np.asarray(self.split_weights, dtype=np.float64)
        for w in (self.choose_weights, self.split_weights):
            if w.shape != (4,) or not np.all(np.isfinite(w)):
                raise PolicyFormatError("policy needs 4 finite weights per action")

    @classmethod
    def zeros(cls) -> "PolicyModel":
        return cls()

    def score_choose(self, feats: np.ndarray) -> np.ndarray:
        return feats @ self.choose_weights + self.choose_bias

    def score_split(self, feats: np.ndarray) -> np.ndarray:
        return feats @ self.split_weights + self.split_bias

    def dumps(self) -> str:
        lines = ["# policy rlr"]
        for k in sorted(self.meta):
            lines.append(f"meta.{k} {self.meta[k]}")
        for prefix, names, w, b in (("choose_subtree", CHOOSE_FEATURES, self.choose_weights, self.choose_bias),
                                    ("split", SPLIT_FEATURES, self.split_weights, self.split_bias)):
            for name, v in zip(names, w):
                lines.append(f"{prefix}.{name} {float(v)!r}")
            lines.append(f"{prefix}.bias {float(b)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PolicyModel":
        values, meta = {}, {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise PolicyFormatError(f"bad policy line {line!r}")
            name, value = parts
            if name.startswith("meta."):
                meta[name[5:]] = value
                continue
            try:
                values[name] = float(value)
            except ValueError:
                raise PolicyFormatError(f"bad weight {line!r}") from None
        try:
            cw = [values[f"choose_subtree.{n}"] for n in CHOOSE_FEATURES]
            sw = [values[f"split.{n}"] for n in SPLIT_FEATURES]
            cb = values["choose_subtree.bias"]
            sb = values["split.bias"]
        except KeyError as e:
            raise PolicyFormatError(f"policy missing weight {e.args[0]}") from None
        return cls(np.array(cw), cb, np.array(sw), sb, meta)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "PolicyModel":
        with open(path) as fh:
            return cls.loads(fh.read())


def choose_features(rects: np.ndarray, rect: np.ndarray, cand: np.ndarray,
                    occupancy: np.ndarray) -> np.ndarray:
    """Features of inserting ``rect`` into each candidate child ``cand`` of a node."""
    node = np.array([min(rects[:, 0].min(), rect[0]), min(rects[:, 1].min(), rect[1]),
                     max(rects[:, 2].max(), rect[2]), max(rects[:, 3].max(), rect[3])])
    scale_a = rects_area(node) + _TINY
    scale_m = rects_margin(node) + _TINY
    c = rects[cand]
    grown = np.column_stack([np.minimum(c[:, 0], rect[0]), np.minimum(c[:, 1], rect[1]),
                             np.maximum(c[:, 2], rect[2]), np.maximum(c[:, 3], rect[3])])
    area_enl = rects_area(grown) - rects_area(c)
    margin_enl = rects_margin(grown) - rects_margin(c)
    before = overlap_area(c[:, None, :], rects[None, :, :])
    after = overlap_area(grown[:, None, :], rects[None, :, :])
    # drop self-overlap
    before[np.arange(len(cand)), cand] = 0.0
    after[np.arange(len(cand)), cand] = 0.0
    overlap_inc = after.sum(axis=1) - before.sum(axis=1)
    return np.column_stack([area_enl / scale_a, margin_enl / scale_m, overlap_inc / scale_a, occupancy])


def split_features(g1: np.ndarray, g2: np.ndarray, node: np.ndarray,
                   n1: np.ndarray, capacity: int) -> np.ndarray:
    """Features of candidate distributions; g1/g2 are (k, 4) group MBRs."""
    scale_a = rects_area(node) + _TINY
    scale_m = rects_margin(node) + _TINY
    area = (rects_area(g1) + rects_area(g2) - rects_area(node)) / scale_a
    margin = (rects_margin(g1) + rects_margin(g2) - rects_margin(node)) / scale_m
    overlap = overlap_area(g1, g2) / scale_a
    return np.column_stack([area, margin, overlap, np.asarray(n1, dtype=np.float64) / capacity])
