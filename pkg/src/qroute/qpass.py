"""Q-PASS: offline candidate enumeration, adaptive reservation, and
segment-based recovery.

The protocol precomputes candidate paths per S-D pair (Yen's algorithm
under a cheap offline metric), then each slot reserves them best-first
while resources last (P2) and recovers from link failures with the
reserved fragments of the paths that did not fit (P4).

P4 consistency under k-hop link state: every major path is cut into
segments of at most k+1 hops, so each node sees the full link state of the
segments containing it.  Partial paths are dedicated to exactly one
(major, segment) slot up front — a pure function of the plan, so every
node derives the same dedication — and a segment's members adopt its
dedicated partials with a greedy left-to-right scan over the segment's
failed hops.  No decision ever consults link state outside the segment,
which keeps per-node and centralized computations identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .metrics import Path
from .pathfind import CR, MetricEvaluator, yen_k_shortest
from .reserve import ResidualState, reserve_path
from .routes import (
    DecisionSet,
    PlannedPath,
    RouteStart,
    SpanPath,
    interior_pairings,
    major_pairings,
    strand_start,
    survivors,
)
from .topology import NetworkTopology

INITIAL_L = 25
L_GROWTH = 1.5
MAX_L = 200


class OfflinePathTable:
    """Candidate paths per unordered S-D pair.

    Entries are filled lazily with the pair's current candidate count L
    (initial 25); ``grow`` bumps L by 50% (capped at 200) when a slot
    could not satisfy the pair, invalidating the cached list.  The table
    is a pure function of (topology, metric, L counters), so every node
    reconstructs it identically.
    """

    def __init__(self, topology: NetworkTopology, metric_kind: str = CR,
                 swap_rate: float = 1.0):
        self.topology = topology
        self.metric_kind = metric_kind
        self.evaluator = MetricEvaluator(metric_kind, swap_rate)
        self._l: dict[tuple[int, int], int] = {}
        self._paths: dict[tuple[int, int], list[Path]] = {}

    @staticmethod
    def _norm(pair: tuple[int, int]) -> tuple[int, int]:
        u, v = pair
        return (u, v) if u < v else (v, u)

    def l_for(self, pair: tuple[int, int]) -> int:
        return self._l.get(self._norm(pair), INITIAL_L)

    def grow(self, pair: tuple[int, int]):
        key = self._norm(pair)
        cur = self._l.get(key, INITIAL_L)
        nxt = min(MAX_L, math.ceil(cur * L_GROWTH))
        if nxt != cur:
            self._l[key] = nxt
            self._paths.pop(key, None)

    def paths(self, pair: tuple[int, int]) -> list[Path]:
        """Candidates oriented from pair[0] to pair[1], best first."""
        key = self._norm(pair)
        got = self._paths.get(key)
        if got is None:
            got = yen_k_shortest(
                self.topology, key[0], key[1], self.l_for(key), self.evaluator
            )
            self._paths[key] = got
        if pair[0] == key[0]:
            return got
        return [Path(tuple(reversed(p.nodes)), p.width) for p in got]

    def fill_all(self):
        for u in range(self.topology.n):
            for v in range(u + 1, self.topology.n):
                self.paths((u, v))
        return self

    def to_json(self) -> str:
        self.fill_all()
        return json.dumps(
            {
                "metric": self.metric_kind,
                "swap_rate": self.evaluator.swap_rate,
                "pairs": [
                    {
                        "pair": list(key),
                        "l": self._l.get(key, INITIAL_L),
                        "paths": [
                            {"nodes": list(p.nodes), "width": p.width}
                            for p in paths
                        ],
                    }
                    for key, paths in sorted(self._paths.items())
                ],
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, topology: NetworkTopology, text: str) -> "OfflinePathTable":
        doc = json.loads(text)
        table = cls(topology, doc["metric"], doc["swap_rate"])
        for item in doc["pairs"]:
            key = tuple(item["pair"])
            if item["l"] != INITIAL_L:
                table._l[key] = item["l"]
            table._paths[key] = [
                Path(tuple(p["nodes"]), p["width"]) for p in item["paths"]
            ]
        return table


def qpass_offline(topology: NetworkTopology, metric_kind: str = CR,
                  swap_rate: float = 1.0) -> OfflinePathTable:
    """Candidate table for every unordered pair, computed eagerly."""
    return OfflinePathTable(topology, metric_kind, swap_rate).fill_all()


@dataclass
class RoutingPlan:
    """Q-PASS reservations for one slot: full-width major paths plus
    width-1 partial fragments, in selection order."""

    majors: list[PlannedPath]
    partials: list[PlannedPath]
    residual: ResidualState
    unsatisfied: set[int] = field(default_factory=set)  # pair indices

    def bound_channels(self) -> set[int]:
        out = set()
        for planned in self.majors + self.partials:
            for hop in planned.bound:
                out.update(hop)
        return out


def qpass_p2(
    topology: NetworkTopology,
    sd_pairs: list[tuple[int, int]],
    table: OfflinePathTable,
    boosts: dict[int, float] | None = None,
) -> RoutingPlan:
    """Adaptive reservation over the pairs' candidate paths.

    Step 1: all candidates enter a priority queue under the offline
    metric; the best is reserved at full width, or requeued with its
    metric recomputed when the residual supports only a narrower width,
    or parked when no width remains.  Step 2: the parked paths, in metric
    order at width 1, have their largest reservable prefix and suffix
    reserved as width-1 partials.
    """
    ev = table.evaluator
    boosts = boosts or {}

    def key_for(idx: int, nodes: tuple[int, ...], width: int) -> tuple:
        raw = ev.key(topology, nodes, width)
        return ev.boosted_key(raw, boosts.get(idx, 1.0))

    import heapq

    residual = ResidualState.fresh(topology)
    heap: list[tuple[tuple, int, tuple[int, ...], int]] = []
    for idx, pair in enumerate(sd_pairs):
        for cand in table.paths(pair):
            heapq.heappush(
                heap, (key_for(idx, cand.nodes, cand.width), idx, cand.nodes, cand.width)
            )

    majors: list[PlannedPath] = []
    parked: list[tuple[tuple, int, tuple[int, ...]]] = []
    satisfied: set[int] = set()
    while heap:
        _, idx, nodes, w_queued = heapq.heappop(heap)
        w_now = residual.width_of(nodes)
        if w_now < 1:
            parked.append((key_for(idx, nodes, 1) + (idx, nodes), idx, nodes))
            continue
        if w_now != w_queued:
            heapq.heappush(heap, (key_for(idx, nodes, w_now), idx, nodes, w_now))
            continue
        bound = reserve_path(residual, Path(nodes, w_now))
        majors.append(
            PlannedPath(idx, Path(nodes, w_now), tuple(tuple(b) for b in bound))
        )
        satisfied.add(idx)

    partials: list[PlannedPath] = []
    parked.sort()
    for _, idx, nodes in parked:
        for ends in (nodes, nodes[::-1]):
            # the prefix reservation can take what the suffix needed, so
            # each fragment is sized against the live residual
            frag = _best_prefix(residual, ends)
            if frag is None:
                continue
            bound = reserve_path(residual, Path(frag, 1))
            partials.append(
                PlannedPath(idx, Path(frag, 1), tuple(tuple(b) for b in bound))
            )

    residual.check_non_negative()
    unsatisfied = {i for i in range(len(sd_pairs)) if i not in satisfied}
    return RoutingPlan(majors, partials, residual, unsatisfied)


def _best_prefix(residual: ResidualState, nodes: tuple[int, ...]) -> tuple[int, ...] | None:
    """Longest reservable width-1 prefix of at least one hop."""
    best = None
    for end in range(2, len(nodes) + 1):
        if residual.width_of(nodes[:end]) >= 1:
            best = nodes[:end]
        else:
            break
    return best


# -- P4: segment-based recovery ------------------------------------------------


def _segment(hop: int, k: float) -> int:
    return 0 if k == math.inf else hop // (int(k) + 1)


def dedicate_partials(plan: RoutingPlan, k: float) -> dict[int, dict[int, list[SpanPath]]]:
    """Statically assign each partial to at most one (major, segment).

    A partial fits a major when both its end nodes lie on it with the
    bypassed hops inside a single segment; the first fit in plan order
    wins.  Pure function of the plan, so every node computes the same
    assignment.
    """
    out: dict[int, dict[int, list[SpanPath]]] = {}
    for order, partial in enumerate(plan.partials):
        nodes, bound = partial.path.nodes, partial.bound
        for mi, major in enumerate(plan.majors):
            pos = {v: i for i, v in enumerate(major.path.nodes)}
            i, j = pos.get(nodes[0]), pos.get(nodes[-1])
            if i is None or j is None or i == j:
                continue
            if i > j:
                i, j = j, i
                nodes = nodes[::-1]
                bound = bound[::-1]
            if _segment(i, k) != _segment(j - 1, k):
                continue
            seg = _segment(i, k)
            out.setdefault(mi, {}).setdefault(seg, []).append(
                SpanPath(mi, (i, j), Path(nodes, 1), bound, order)
            )
            break
    return out


def _adoptions(
    major: PlannedPath,
    by_segment: dict[int, list[SpanPath]],
    outcomes: dict[int, bool],
    k: float,
    segments: set[int] | None = None,
) -> dict[int, list[SpanPath]]:
    """Partials adopted per strand: each segment greedily covers its failed
    hops left to right with its own dedicated partials, strands in
    ascending order consuming them.  ``segments`` restricts the scan for a
    node computing only its own decisions."""
    h, width = major.hops, major.path.width
    used: set[int] = set()
    adopted: dict[int, list[SpanPath]] = {}
    for seg in sorted(by_segment):
        if segments is not None and seg not in segments:
            continue
        lo = seg * (int(k) + 1) if k != math.inf else 0
        hi = min(h, lo + int(k) + 1) if k != math.inf else h
        counts = {t: len(survivors(major.bound[t], outcomes)) for t in range(lo, hi)}
        for s in range(1, width + 1):
            prev_end = 0
            for t in range(lo, hi):
                if counts[t] >= s or t < prev_end:
                    continue
                for sp in by_segment[seg]:
                    i, j = sp.span
                    if sp.order not in used and i <= t < j and i >= prev_end:
                        used.add(sp.order)
                        adopted.setdefault(s, []).append(sp)
                        prev_end = j
                        break
    return adopted


def qpass_p4(
    plan: RoutingPlan, outcomes: dict[int, bool], k: float
) -> tuple[DecisionSet, list[RouteStart]]:
    """Centralized swap decisions and route starts for one slot."""
    dedicated = dedicate_partials(plan, k)
    decisions = DecisionSet()
    routes: list[RouteStart] = []
    for mi, major in enumerate(plan.majors):
        adopted = _adoptions(major, dedicated.get(mi, {}), outcomes, k)
        decisions.update(major_pairings(major, adopted, outcomes))
        for s in range(1, major.path.width + 1):
            routes.append(
                RouteStart(
                    major.pair_index,
                    major.src,
                    major.dst,
                    strand_start(major, s, adopted, outcomes),
                    bool(adopted.get(s)),
                )
            )
    for partial in plan.partials:
        decisions.update(interior_pairings(partial.path.nodes, partial.bound, outcomes))
    return decisions, routes


def qpass_node_decisions(
    plan: RoutingPlan, outcomes: dict[int, bool], node: int, k: float
) -> set[tuple[int, int, int]]:
    """The swap decisions ``node`` makes from its own k-hop link state.

    ``outcomes`` may cover only the node's view; the computation never
    consults a channel outside it.
    """
    dedicated = dedicate_partials(plan, k)
    decisions = DecisionSet()
    for mi, major in enumerate(plan.majors):
        nodes = major.path.nodes
        if node not in nodes:
            continue
        t = nodes.index(node)
        if t == 0 or t == major.hops:
            continue
        segments = {_segment(t - 1, k), _segment(t, k)}
        adopted = _adoptions(major, dedicated.get(mi, {}), outcomes, k, segments)
        decisions.update(major_pairings(major, adopted, outcomes, only_node=node))
    for partial in plan.partials:
        if node in partial.path.nodes[1:-1]:
            decisions.update(
                interior_pairings(partial.path.nodes, partial.bound, outcomes, only_node=node)
            )
    return decisions.pairs
