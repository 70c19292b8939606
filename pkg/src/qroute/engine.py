"""The time-slot loop: pair announcement, link realization, link-state
dissemination, and swap execution.

Every random draw is keyed by (seed, slot, phase, entity), never pulled
from a shared stream, so outcomes are reproducible regardless of
evaluation order and the P2/P4 phases cannot perturb each other.  In
particular the link outcome of a channel depends only on (seed, slot,
channel id), which is what makes with/without-recovery comparisons
meaningful: the majors and their link fates are bit-identical.

Slots run sequentially: the offline-table growth of Q-PASS and the
fairness streaks both feed one slot's result into the next slot's
planning.  Experiments parallelize across topologies instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .baselines import greedy_route, slmp_p2, slmp_p4
from .pathfind import BOT_CAP, CR, EXT, SUM_DIST, MetricEvaluator, calibrate_h_m
from .qcast import QCastConfig, qcast_build_recovery, qcast_p2_select, qcast_p4
from .qpass import OfflinePathTable, RoutingPlan, qpass_p2, qpass_p4
from .routes import trace_route
from .topology import NetworkTopology

ALGORITHMS = ("qcast", "qpass", "slmp", "greedy")
METRICS = (EXT, CR, SUM_DIST, BOT_CAP)
FAIRNESS_BASE = 1.1
_PLAN_CACHE_LIMIT = 512


@dataclass
class SimConfig:
    n: int = 50
    e_p: float = 0.6
    q: float = 0.9
    k: float = 3  # math.inf = global link state
    e_d: float = 6.0
    m: int = 10
    algorithm: str = "qcast"
    metric: str = CR  # offline metric for Q-PASS
    slots: int = 1000
    recovery_enabled: bool = True
    fairness_enabled: bool = False
    seed: int = 0
    fixed_pairs: tuple[tuple[int, int], ...] | None = None

    def validate(self):
        if self.n < 2:
            raise ValueError("n: need at least two nodes")
        if not 0.0 < self.e_p <= 1.0:
            raise ValueError("e_p: success rate must lie in (0, 1]")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q: swap probability must lie in [0, 1]")
        if self.k != math.inf and (self.k < 0 or int(self.k) != self.k):
            raise ValueError("k: must be a non-negative integer or infinity")
        if self.e_d <= 0:
            raise ValueError("e_d: target degree must be positive")
        if self.m < 1:
            raise ValueError("m: need at least one pair per slot")
        if self.m > self.n * (self.n - 1) // 2:
            raise ValueError("m: more pairs than the topology has")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm: unknown '{self.algorithm}'")
        if self.metric not in METRICS:
            raise ValueError(f"metric: unknown '{self.metric}'")
        if self.slots < 0:
            raise ValueError("slots: cannot be negative")
        if self.fixed_pairs is not None:
            if len(self.fixed_pairs) != self.m:
                raise ValueError("fixed_pairs: length must equal m")
            for u, v in self.fixed_pairs:
                if u == v or not (0 <= u < self.n and 0 <= v < self.n):
                    raise ValueError("fixed_pairs: endpoints must be distinct nodes")


@dataclass
class SlotOutcome:
    slot: int
    pairs: list[tuple[int, int]]
    ebits: list[int]
    recovered: list[int]  # delivered through an adopted detour
    paths: list[int]  # potential routes per pair; a width-W path counts W
    channels_bound: int

    @property
    def eps(self) -> int:
        return sum(self.ebits)

    @property
    def epairs(self) -> int:
        return sum(1 for e in self.ebits if e > 0)


def draw_sd_pairs(topology, m: int, stream) -> list[tuple[int, int]]:
    """m distinct unordered pairs, uniform without replacement."""
    if m > topology.n * (topology.n - 1) // 2:
        raise ValueError("more pairs requested than exist")
    seen = set()
    out = []
    while len(out) < m:
        u, v = stream.sample(range(topology.n), 2)
        pair = (u, v) if u < v else (v, u)
        if pair not in seen:
            seen.add(pair)
            out.append(pair)
    return out


def realize_links(topology, bound, seed: int, slot: int) -> dict[int, bool]:
    """Independent Bernoulli(p_c) per bound channel.

    Draws are positional over the whole channel list, so which channels
    happen to be bound cannot shift any other channel's fate.
    """
    rates = np.fromiter((c.rate for c in topology.channels), dtype=float)
    draws = rng.bernoulli_array((seed, "p2", slot), rates)
    return {cid: bool(draws[cid]) for cid in sorted(bound)}


def disseminate(topology, outcomes: dict[int, bool], k: float):
    """Per-node link-state views: the channels incident to any node within
    k hops of the owner."""
    views = {}
    for v in range(topology.n):
        dist = topology.hop_distances(v)
        views[v] = {
            cid: up
            for cid, up in outcomes.items()
            if dist[topology.channels[cid].u] <= k or dist[topology.channels[cid].v] <= k
        }
    return views


def fairness_factor(streak: int) -> float:
    return FAIRNESS_BASE**streak


def fairness_adjust(evaluator: MetricEvaluator, key, streak: int):
    """Boost a pair's metric key by 1.1^streak (multiplying value-type
    metrics, dividing cost-type ones)."""
    return evaluator.boosted_key(key, fairness_factor(streak))


def execute_swaps(topology, decisions, routes, q: float, seed: int, slot: int):
    """Follow each potential route through the swap decisions; every swap
    event (terminal detection at the destination included) succeeds with
    probability q, drawn once per (node, channel pair) no matter how the
    routes are enumerated."""
    draws: dict[tuple[int, int, int], bool] = {}

    def succeed(node: int, a: int, b: int) -> bool:
        if q >= 1.0:
            return True
        key = (node, a, b) if a <= b else (node, b, a)
        got = draws.get(key)
        if got is None:
            got = draws[key] = rng.bernoulli(q, seed, slot, "p4", *key)
        return got

    delivered = []
    for rt in routes:
        if rt.channel is None:
            delivered.append(False)
            continue
        events, final, last = trace_route(topology, decisions, rt.src, rt.channel)
        ok = final == rt.dst
        if ok:
            for node, a, b in events:
                if not succeed(node, a, b):
                    ok = False
                    break
            ok = ok and succeed(rt.dst, last, last)
        delivered.append(ok)
    return delivered


class Session:
    """Per-topology persistent state: calibration, offline tables,
    fairness streaks."""

    def __init__(self, topology: NetworkTopology, config: SimConfig):
        config.validate()
        if topology.n != config.n:
            raise ValueError("n: config does not match the topology")
        self.topology = topology
        self.config = config
        self.rates = np.fromiter((c.rate for c in topology.channels), dtype=float)
        alg = config.algorithm
        if alg == "qpass":
            self.table = OfflinePathTable(topology, config.metric, config.q)
        elif alg == "qcast":
            h_m = calibrate_h_m(topology, config.seed, config.q)
            self.qcast_config = QCastConfig(k=config.k, h_m=h_m)
            self.evaluator = MetricEvaluator(EXT, config.q)
        elif alg == "slmp":
            self.binding = slmp_p2(topology)
        self.streaks: dict[tuple[int, int], int] = {}
        self._plan_cache: dict = {}

    # -- P2 planning -----------------------------------------------------

    def _boosts(self, pairs) -> dict[int, float]:
        if not self.config.fairness_enabled:
            return {}
        return {
            i: fairness_factor(self.streaks[p])
            for i, p in enumerate(pairs)
            if self.streaks.get(p)
        }

    def _plan(self, pairs, boosts):
        cfg = self.config
        cache_key = None
        if cfg.fixed_pairs is not None and cfg.algorithm != "qpass":
            # planning is a pure function of (pairs, boosts) for these
            # algorithms; Q-PASS is excluded because its table grows
            cache_key = (tuple(pairs), tuple(sorted(boosts.items())))
            hit = self._plan_cache.get(cache_key)
            if hit is not None:
                return hit
        alg = cfg.algorithm
        if alg == "qcast":
            majors, residual = qcast_p2_select(
                self.topology, pairs, self.evaluator, self.qcast_config, boosts
            )
            recoveries = (
                qcast_build_recovery(self.topology, residual, majors, self.qcast_config)
                if cfg.recovery_enabled
                else []
            )
            bound = _bound_ids(majors) | _bound_ids(recoveries)
            art = {
                "majors": majors,
                "recoveries": recoveries,
                "bound": bound,
                "unsatisfied": sorted(
                    set(range(len(pairs))) - {m.pair_index for m in majors}
                ),
            }
        elif alg == "qpass":
            plan = qpass_p2(self.topology, pairs, self.table, boosts)
            if not cfg.recovery_enabled:
                plan = RoutingPlan(plan.majors, [], plan.residual, plan.unsatisfied)
            art = {
                "plan": plan,
                "bound": _bound_ids(plan.majors) | _bound_ids(plan.partials),
                "unsatisfied": sorted(plan.unsatisfied),
            }
        elif alg == "greedy":
            plan = greedy_route(self.topology, pairs)
            art = {
                "plan": plan,
                "bound": _bound_ids(plan.majors),
                "unsatisfied": sorted(plan.unsatisfied),
            }
        else:  # slmp
            art = {"binding": self.binding, "bound": set(self.binding.bound), "unsatisfied": []}
        if cache_key is not None:
            if len(self._plan_cache) >= _PLAN_CACHE_LIMIT:
                self._plan_cache.clear()
            self._plan_cache[cache_key] = art
        return art

    # -- the slot itself ---------------------------------------------------

    def run_slot(self, slot: int) -> SlotOutcome:
        cfg = self.config
        if cfg.fixed_pairs is not None:
            pairs = [tuple(p) for p in cfg.fixed_pairs]
        else:
            pairs = draw_sd_pairs(
                self.topology, cfg.m, rng.substream(cfg.seed, "p1", slot)
            )
        boosts = self._boosts(pairs)
        art = self._plan(pairs, boosts)

        draws = rng.bernoulli_array((cfg.seed, "p2", slot), self.rates)
        outcomes = {cid: bool(draws[cid]) for cid in art["bound"]}

        alg = cfg.algorithm
        if alg == "qcast":
            decisions, routes = qcast_p4(art["majors"], art["recoveries"], outcomes)
        elif alg in ("qpass", "greedy"):
            decisions, routes = qpass_p4(art["plan"], outcomes, cfg.k)
        else:
            decisions, routes = slmp_p4(self.topology, art["binding"], outcomes, pairs)

        delivered = execute_swaps(
            self.topology, decisions, routes, cfg.q, cfg.seed, slot
        )

        ebits = [0] * len(pairs)
        recovered = [0] * len(pairs)
        paths = [0] * len(pairs)
        for rt, ok in zip(routes, delivered):
            paths[rt.pair_index] += 1
            if ok:
                ebits[rt.pair_index] += 1
                if rt.recovery_used:
                    recovered[rt.pair_index] += 1

        if cfg.fairness_enabled:
            for i, p in enumerate(pairs):
                self.streaks[p] = 0 if ebits[i] > 0 else self.streaks.get(p, 0) + 1
        if alg == "qpass":
            for idx in art["unsatisfied"]:
                self.table.grow(pairs[idx])

        return SlotOutcome(slot, pairs, ebits, recovered, paths, len(art["bound"]))

    def run(self) -> list[SlotOutcome]:
        return [self.run_slot(slot) for slot in range(self.config.slots)]

    def plan_document(self, slot: int) -> dict:
        """The slot's P2 reservations as plain data, for debugging runs."""
        cfg = self.config
        if cfg.fixed_pairs is not None:
            pairs = [tuple(p) for p in cfg.fixed_pairs]
        else:
            pairs = draw_sd_pairs(
                self.topology, cfg.m, rng.substream(cfg.seed, "p1", slot)
            )
        art = self._plan(pairs, self._boosts(pairs))
        doc = {"slot": slot, "algorithm": cfg.algorithm, "pairs": [list(p) for p in pairs]}
        if "plan" in art:
            doc["majors"] = [_path_doc(m) for m in art["plan"].majors]
            doc["partials"] = [_path_doc(p) for p in art["plan"].partials]
        elif "majors" in art:
            doc["majors"] = [_path_doc(m) for m in art["majors"]]
            doc["recoveries"] = [
                dict(_path_doc(r), host=r.host, span=list(r.span))
                for r in art["recoveries"]
            ]
        doc["channels_bound"] = sorted(art["bound"])
        return doc


def _bound_ids(planned) -> set[int]:
    out = set()
    for p in planned:
        for hop in p.bound:
            out.update(hop)
    return out


def _path_doc(p) -> dict:
    doc = {"nodes": list(p.path.nodes), "width": p.path.width,
           "bound": [list(h) for h in p.bound]}
    if hasattr(p, "pair_index"):
        doc["pair"] = p.pair_index
    return doc
