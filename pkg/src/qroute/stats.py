"""Aggregation of slot outcomes into evaluation statistics.

Empirical CDFs are exact over the observed integer counts (no binning).
Multi-topology experiments average the per-topology aggregates with equal
weight, and every aggregate is invariant under permutations of the slot
stream.  ``sweep`` varies one dimension of the reference setting at a
time, records per-cell failures without aborting, and can checkpoint
completed cells to a JSON file so an interrupted sweep resumes where it
stopped.
"""

from __future__ import annotations

import csv
import json
import math
import os
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

from .engine import Session, SimConfig, SlotOutcome
from .topology import generate_waxman

DIMENSIONS = {"n": "n", "e_p": "e_p", "q": "q", "k": "k", "e_d": "e_d", "m": "m"}


def dimension_field(dimension: str) -> str:
    got = DIMENSIONS.get(dimension.lower())
    if got is None:
        raise ValueError(f"dimension: unknown '{dimension}'")
    return got


@dataclass(frozen=True)
class Cdf:
    """Right-continuous step function; points are (x, P(X <= x)) with x
    strictly increasing and the last probability equal to 1."""

    points: tuple[tuple[float, float], ...]

    @classmethod
    def from_samples(cls, samples) -> "Cdf":
        samples = sorted(samples)
        if not samples:
            raise ValueError("empty sample set has no distribution")
        n = len(samples)
        points = []
        for i, x in enumerate(samples):
            if i + 1 < n and samples[i + 1] == x:
                continue
            points.append((float(x), (i + 1) / n))
        return cls(tuple(points))

    @classmethod
    def average(cls, cdfs) -> "Cdf":
        cdfs = list(cdfs)
        support = sorted({x for c in cdfs for x, _ in c.points})
        points = tuple(
            (x, sum(c.value_at(x) for c in cdfs) / len(cdfs)) for x in support
        )
        return cls(points)

    def value_at(self, x: float) -> float:
        xs = [p[0] for p in self.points]
        i = bisect_right(xs, x)
        return self.points[i - 1][1] if i else 0.0

    def validate(self):
        last = 0.0
        prev_x = -math.inf
        for x, f in self.points:
            assert x > prev_x and f >= last - 1e-12, "CDF must be non-decreasing"
            prev_x, last = x, f
        assert abs(last - 1.0) < 1e-9, "CDF must end at 1"


@dataclass(frozen=True)
class ExperimentResult:
    config: SimConfig
    topologies: int
    slots: int
    mean_eps: float
    mean_epairs: float
    eps_cdf: Cdf
    paths_cdf: Cdf  # per-pair potential-route counts
    recovery_cdf: Cdf  # per-slot ebits delivered through recoveries
    recovery_fraction: float  # recovered share of all ebits
    epair_counts: tuple[tuple[int, int], ...]  # (epairs in slot, slot count)
    channel_throughput: tuple[tuple[int, int], ...]  # sorted (bound, eps) pairs
    outcomes: tuple = field(compare=False, repr=False, default=())

    def to_json_dict(self) -> dict:
        doc = {
            "config": config_doc(self.config),
            "topologies": self.topologies,
            "slots": self.slots,
            "mean_eps": self.mean_eps,
            "mean_epairs": self.mean_epairs,
            "recovery_fraction": self.recovery_fraction,
            "eps_cdf": [list(p) for p in self.eps_cdf.points],
            "paths_cdf": [list(p) for p in self.paths_cdf.points],
            "recovery_cdf": [list(p) for p in self.recovery_cdf.points],
            "epair_counts": [list(p) for p in self.epair_counts],
            "channel_throughput": [list(p) for p in self.channel_throughput],
        }
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ExperimentResult":
        return cls(
            config=config_from_doc(doc["config"]),
            topologies=doc["topologies"],
            slots=doc["slots"],
            mean_eps=doc["mean_eps"],
            mean_epairs=doc["mean_epairs"],
            eps_cdf=Cdf(tuple((x, f) for x, f in doc["eps_cdf"])),
            paths_cdf=Cdf(tuple((x, f) for x, f in doc["paths_cdf"])),
            recovery_cdf=Cdf(tuple((x, f) for x, f in doc["recovery_cdf"])),
            recovery_fraction=doc["recovery_fraction"],
            epair_counts=tuple((int(a), int(b)) for a, b in doc["epair_counts"]),
            channel_throughput=tuple(
                (int(a), int(b)) for a, b in doc["channel_throughput"]
            ),
        )


def config_doc(config: SimConfig) -> dict:
    doc = {
        "n": config.n, "e_p": config.e_p, "q": config.q,
        "k": "inf" if config.k == math.inf else config.k,
        "e_d": config.e_d, "m": config.m,
        "algorithm": config.algorithm, "metric": config.metric,
        "slots": config.slots,
        "recovery_enabled": config.recovery_enabled,
        "fairness_enabled": config.fairness_enabled,
        "seed": config.seed,
    }
    if config.fixed_pairs is not None:
        doc["fixed_pairs"] = [list(p) for p in config.fixed_pairs]
    return doc


def config_from_doc(doc: dict) -> SimConfig:
    kwargs = dict(doc)
    if kwargs.get("k") == "inf":
        kwargs["k"] = math.inf
    if kwargs.get("fixed_pairs") is not None:
        kwargs["fixed_pairs"] = tuple(tuple(p) for p in kwargs["fixed_pairs"])
    return SimConfig(**kwargs)


def aggregate(config: SimConfig, runs) -> ExperimentResult:
    """Fold per-topology outcome lists into one result.

    ``runs`` is one SlotOutcome list per topology; per-topology statistics
    get equal weight regardless of slot counts.
    """
    runs = [list(r) for r in runs]
    if not runs or any(not r for r in runs):
        raise ValueError("aggregate needs at least one slot per topology")
    means, epair_means, fractions = [], [], []
    eps_cdfs, paths_cdfs, recovery_cdfs = [], [], []
    epair_counter: dict[int, int] = {}
    channel_points: list[tuple[int, int]] = []
    for outcomes in runs:
        eps = [o.eps for o in outcomes]
        means.append(sum(eps) / len(outcomes))
        epair_means.append(sum(o.epairs for o in outcomes) / len(outcomes))
        recovered = [sum(o.recovered) for o in outcomes]
        total = sum(eps)
        fractions.append(sum(recovered) / total if total else 0.0)
        eps_cdfs.append(Cdf.from_samples(eps))
        paths_cdfs.append(
            Cdf.from_samples([p for o in outcomes for p in o.paths])
        )
        recovery_cdfs.append(Cdf.from_samples(recovered))
        for o in outcomes:
            epair_counter[o.epairs] = epair_counter.get(o.epairs, 0) + 1
            channel_points.append((o.channels_bound, o.eps))
    return ExperimentResult(
        config=config,
        topologies=len(runs),
        slots=sum(len(r) for r in runs),
        mean_eps=sum(means) / len(means),
        mean_epairs=sum(epair_means) / len(epair_means),
        eps_cdf=Cdf.average(eps_cdfs),
        paths_cdf=Cdf.average(paths_cdfs),
        recovery_cdf=Cdf.average(recovery_cdfs),
        recovery_fraction=sum(fractions) / len(fractions),
        epair_counts=tuple(sorted(epair_counter.items())),
        channel_throughput=tuple(sorted(channel_points)),
        outcomes=tuple(tuple(r) for r in runs),
    )


@lru_cache(maxsize=32)
def _topology_for(n: int, e_d: float, e_p: float, seed: int):
    return generate_waxman(n, e_d, e_p, seed=seed)


def run_experiment(config: SimConfig, topologies: int = 1) -> ExperimentResult:
    """Generate ``topologies`` networks and run ``config`` on each.

    Topology t uses seed ``config.seed + t`` for both generation and the
    slot draws, so the same base seed reproduces the whole experiment while
    different topologies get independent streams.
    """
    config.validate()
    runs = []
    for t in range(topologies):
        topo = _topology_for(config.n, config.e_d, config.e_p, config.seed + t)
        runs.append(Session(topo, replace(config, seed=config.seed + t)).run())
    return aggregate(config, runs)


# -- sweeps -------------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    dimension: str
    value: float
    result: ExperimentResult | None
    error: str | None = None


def _cell_value_key(value) -> str:
    return "inf" if value == math.inf else repr(value)


def _run_cell(args) -> tuple[str, ExperimentResult | None, str | None]:
    field_name, value, base, topologies = args
    try:
        cfg = replace(base, **{field_name: value})
        return _cell_value_key(value), run_experiment(cfg, topologies), None
    except Exception as exc:  # recorded, sweep continues
        return _cell_value_key(value), None, f"{type(exc).__name__}: {exc}"


def sweep(
    dimension: str,
    values,
    base: SimConfig,
    topologies: int = 1,
    checkpoint_path: str | None = None,
    workers: int = 1,
    progress=None,
    runner=None,
) -> list[SweepCell]:
    """One cell per value, the rest of the configuration held at ``base``.

    Failed cells carry the error string instead of a result.  With a
    checkpoint path, completed cells are flushed to disk after each run
    and loaded back on the next invocation.
    """
    field_name = dimension_field(dimension)
    values = list(values)
    if not values:
        raise ValueError("values: need at least one sweep value")
    done: dict[str, dict] = {}
    if checkpoint_path and os.path.exists(checkpoint_path):
        with open(checkpoint_path, encoding="utf-8") as fh:
            saved = json.load(fh)
        if saved.get("dimension") == dimension:
            done = saved.get("cells", {})

    cells: dict[str, SweepCell] = {}
    pending = []
    for value in values:
        key = _cell_value_key(value)
        if key in done:
            entry = done[key]
            result = (
                ExperimentResult.from_json_dict(entry["result"])
                if entry.get("result")
                else None
            )
            cells[key] = SweepCell(dimension, value, result, entry.get("error"))
        else:
            pending.append(value)

    def record(value, result, error):
        key = _cell_value_key(value)
        cells[key] = SweepCell(dimension, value, result, error)
        done[key] = {
            "result": result.to_json_dict() if result else None,
            "error": error,
        }
        if checkpoint_path:
            tmp = checkpoint_path + ".tmp"
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump({"dimension": dimension, "cells": done}, fh, sort_keys=True)
            os.replace(tmp, checkpoint_path)
        if progress:
            progress(dimension, value, len(cells), len(values), error)

    if runner is not None:
        for value in pending:
            try:
                result, error = runner(replace(base, **{field_name: value})), None
            except Exception as exc:
                result, error = None, f"{type(exc).__name__}: {exc}"
            record(value, result, error)
    elif workers > 1 and len(pending) > 1:
        jobs = [(field_name, v, base, topologies) for v in pending]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for value, (_, result, error) in zip(pending, pool.map(_run_cell, jobs)):
                record(value, result, error)
    else:
        for value in pending:
            _, result, error = _run_cell((field_name, value, base, topologies))
            record(value, result, error)

    return [cells[_cell_value_key(v)] for v in values]


# -- file exports -------------------------------------------------------------

SLOT_CSV_COLUMNS = (
    "slot", "pair", "ebits", "epair", "paths", "recovery_used", "channels_bound",
)


def write_slot_csv(path: str, outcomes: list[SlotOutcome]):
    """One row per (slot, pair); channels_bound repeats the slot total."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SLOT_CSV_COLUMNS)
        for o in outcomes:
            for i in range(len(o.pairs)):
                writer.writerow([
                    o.slot, i, o.ebits[i], int(o.ebits[i] > 0),
                    o.paths[i], o.recovered[i], o.channels_bound,
                ])


def write_aggregate_json(path: str, result: ExperimentResult):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_json_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_sweep_csv(path: str, cells: list[SweepCell]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([
            "dimension", "value", "mean_eps", "mean_epairs",
            "recovery_fraction", "error",
        ])
        for c in cells:
            if c.result is None:
                writer.writerow([c.dimension, _cell_value_key(c.value),
                                 "", "", "", c.error or ""])
            else:
                writer.writerow([
                    c.dimension, _cell_value_key(c.value),
                    repr(c.result.mean_eps), repr(c.result.mean_epairs),
                    repr(c.result.recovery_fraction), "",
                ])


def write_plot_data(path: str, cells: list[SweepCell]):
    """x/y series over the sweep values, one y list per aggregate."""
    doc = {
        "dimension": cells[0].dimension if cells else "",
        "x": [_cell_value_key(c.value) for c in cells],
        "y": {
            name: [
                getattr(c.result, name) if c.result else None for c in cells
            ]
            for name in ("mean_eps", "mean_epairs", "recovery_fraction")
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
