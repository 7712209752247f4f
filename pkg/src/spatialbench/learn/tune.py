"""Grid tuning of training parameters under a build-cost budget.

Configurations are visited in Cartesian-product order.  A configuration is
skipped without building when an already-failed configuration (build cost
at or above the budget) differs from it only in cost-increasing parameters,
each of which is no larger there: training can only get more expensive.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

COST_PARAMS = ("epochs", "sample", "height", "query")


class TuneError(ValueError):
    pass


@dataclass
class TuneGrid:
    params: dict
    t_build: float
    cost_params: tuple = COST_PARAMS
    results: list = field(default_factory=list)

    def configurations(self) -> list[dict]:
        return generate_configurations(self)


def generate_configurations(grid: TuneGrid) -> list[dict]:
    if not grid.params or any(len(v) == 0 for v in grid.params.values()):
        raise TuneError("tuning grid is empty")
    names = list(grid.params)
    return [dict(zip(names, combo)) for combo in itertools.product(*(grid.params[n] for n in names))]


def dominates(p: dict, q: dict, cost_params=COST_PARAMS) -> bool:
    """p is at least as expensive to train as q: equal in every other
    parameter and no smaller in every cost-increasing one."""
    for k in p:
        if k in cost_params:
            if p[k] < q[k]:
                return False
        elif p[k] != q[k]:
            return False
    return True


def is_build_required(p: dict, failed: list[dict], cost_params=COST_PARAMS) -> bool:
    return not any(dominates(p, f, cost_params) for f in failed)


def grid_tune(grid: TuneGrid, trainer, builder, probe, clock=time.perf_counter):
    """Return the config with the lowest probe cost among those built under
    ``grid.t_build`` (earliest wins ties), or None.

    ``trainer(config)`` returns a model, ``builder(config, model)`` an index,
    ``probe(index)`` the query cost.  Build cost is the clock time spent in
    trainer plus builder.  Every visited config is appended to
    ``grid.results`` with its status: built, over_budget or pruned.
    """
    if grid.t_build <= 0:
        raise TuneError("build budget must be positive")
    configs = generate_configurations(grid)
    grid.results = []
    failed: list[dict] = []
    best, best_cost = None, None
    for p in configs:
        if not is_build_required(p, failed, grid.cost_params):
            grid.results.append({"config": p, "status": "pruned", "build_cost": None, "query_cost": None})
            continue
        t0 = clock()
        model = trainer(p)
        index = builder(p, model)
        build_cost = clock() - t0
        if build_cost >= grid.t_build:
            failed.append(p)
            grid.results.append({"config": p, "status": "over_budget", "build_cost": build_cost, "query_cost": None})
            continue
        q = probe(index)
        grid.results.append({"config": p, "status": "built", "build_cost": build_cost, "query_cost": q})
        if best is None or q < best_cost:
            best, best_cost = p, q
    return best
