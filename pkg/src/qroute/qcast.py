"""Q-CAST: online contention-aware path selection and local recovery.

P2 runs greedy multipath selection: repeatedly take the highest-EXT path
over the residual graph until no pair has a positive-width path left.
Recovery paths are then reserved around every major-path span of up to k
hops from whatever capacity remains.

P4 consistency under k-hop link state: each major path statically maps
every hop to at most one recovery path covering it (a pure function of
the plan — spans claim hops greedily, best recovery first, and never
share a hop).  A broken strand adopts the recovery covering its failed
hop unless a lower strand consumed it first; with disjoint covers that
consumer is simply determined by the worst hop inside the span, so a
switching node needs link state only for the spans it anchors — all
within k hops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .metrics import Path
from .pathfind import EXT, MetricEvaluator, eda
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


@dataclass(frozen=True)
class QCastConfig:
    k: float = 3  # link-state horizon in hops; math.inf = global
    h_m: int = 6  # hop bound for path searches
    max_paths: int = 200  # cap on majors + recoveries per slot
    recovery_per_span: int = 1


def qcast_p2_select(
    topology: NetworkTopology,
    sd_pairs: list[tuple[int, int]],
    evaluator: MetricEvaluator,
    config: QCastConfig,
    boosts: dict[int, float] | None = None,
) -> tuple[list[PlannedPath], ResidualState]:
    """Greedy highest-EXT-first selection over the shrinking residual.

    Reserving a path only ever lowers other paths' achievable EXT, so a
    heap entry is re-evaluated lazily: it is trusted only if no node on
    it was touched since the entry was pushed.
    """
    import heapq

    boosts = boosts or {}
    residual = ResidualState.fresh(topology)
    touched = [0] * topology.n  # epoch of last reservation per node
    epoch = 0

    def probe(idx: int):
        s, d = sd_pairs[idx]
        path = eda(topology, residual, s, d, evaluator, config.h_m)
        if path is not None:
            value = evaluator.ext_value(topology, path.nodes, path.width)
            value *= boosts.get(idx, 1.0)
            heapq.heappush(heap, (-value, idx, path.nodes, path.width, epoch))

    heap: list[tuple[float, int, tuple[int, ...], int, int]] = []
    for idx in range(len(sd_pairs)):
        probe(idx)

    majors: list[PlannedPath] = []
    while heap and len(majors) < config.max_paths:
        _, idx, nodes, width, stamp = heapq.heappop(heap)
        if any(touched[v] > stamp for v in nodes):
            probe(idx)
            continue
        bound = reserve_path(residual, Path(nodes, width))
        majors.append(PlannedPath(idx, Path(nodes, width), tuple(tuple(b) for b in bound)))
        epoch += 1
        for v in nodes:
            touched[v] = epoch
        probe(idx)
    return majors, residual


def qcast_build_recovery(
    topology: NetworkTopology,
    residual: ResidualState,
    majors: list[PlannedPath],
    config: QCastConfig,
) -> list[SpanPath]:
    """Reserve recovery paths around spans of the selected majors.

    Spans grow from 1 to k hops; within a length, majors in selection
    order, anchors front to back.  Each recovery is reserved the moment
    it is found, competing for leftover capacity in that order.
    """
    ev = MetricEvaluator(EXT, 1.0)
    budget = config.max_paths - len(majors)
    longest = max((m.hops for m in majors), default=0)
    l_max = int(min(config.k, longest))
    out: list[SpanPath] = []
    for length in range(1, l_max + 1):
        for mi, major in enumerate(majors):
            nodes = major.path.nodes
            for i in range(major.hops - length + 1):
                for _ in range(config.recovery_per_span):
                    if len(out) >= budget:
                        return out
                    found = eda(
                        topology, residual, nodes[i], nodes[i + length], ev, config.h_m
                    )
                    if found is None:
                        break
                    bound = reserve_path(residual, found)
                    out.append(
                        SpanPath(
                            mi, (i, i + length), found,
                            tuple(tuple(b) for b in bound), len(out),
                        )
                    )
    return out


def cover_map(major: PlannedPath, recoveries: list[SpanPath]) -> list[SpanPath | None]:
    """Statically map each hop of ``major`` to the recovery responsible
    for it: shortest span first (then shortest recovery, leftmost anchor,
    construction order), each claiming only hops no better recovery owns,
    all of its span or none.  Claimed spans never overlap, which is what
    keeps adoption decisions local to the span."""
    ranked = sorted(
        recoveries,
        key=lambda r: (r.span_hops, r.path.hops, r.span[0], r.order),
    )
    owner: list[SpanPath | None] = [None] * major.hops
    for r in ranked:
        i, j = r.span
        if all(owner[t] is None for t in range(i, j)):
            for t in range(i, j):
                owner[t] = r
    return owner


def _adoptions(
    major: PlannedPath,
    owner: list[SpanPath | None],
    outcomes: dict[int, bool],
    spans: list[SpanPath] | None = None,
) -> dict[int, list[SpanPath]]:
    """Which strand consumes each owning recovery.

    Strands claim recoveries in ascending order, so the consumer of a
    span is fixed by its weakest hop: the first strand that hop cannot
    carry.  ``spans`` restricts evaluation for a node that only anchors
    some of them."""
    width = major.path.width
    seen: set[int] = set()
    adopted: dict[int, list[SpanPath]] = {}
    for r in spans if spans is not None else owner:
        if r is None or r.order in seen:
            continue
        seen.add(r.order)
        i, j = r.span
        weakest = min(len(survivors(major.bound[t], outcomes)) for t in range(i, j))
        if weakest < width:
            adopted.setdefault(weakest + 1, []).append(r)
    for lst in adopted.values():
        lst.sort(key=lambda r: r.span[0])
    return adopted


def qcast_p4(
    majors: list[PlannedPath],
    recoveries: list[SpanPath],
    outcomes: dict[int, bool],
) -> tuple[DecisionSet, list[RouteStart]]:
    """Centralized swap decisions and route starts for one slot."""
    decisions = DecisionSet()
    routes: list[RouteStart] = []
    for mi, major in enumerate(majors):
        owner = cover_map(major, [r for r in recoveries if r.host == mi])
        adopted = _adoptions(major, owner, outcomes)
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
    for r in recoveries:
        decisions.update(interior_pairings(r.path.nodes, r.bound, outcomes))
    return decisions, routes


def qcast_node_decisions(
    majors: list[PlannedPath],
    recoveries: list[SpanPath],
    outcomes: dict[int, bool],
    node: int,
) -> set[tuple[int, int, int]]:
    """The swap decisions ``node`` makes from its own k-hop link state.

    ``outcomes`` may cover only the node's view; adoption of a span is
    judged from that span's own hops, all within view of its anchors.
    """
    decisions = DecisionSet()
    for mi, major in enumerate(majors):
        nodes = major.path.nodes
        if node not in nodes:
            continue
        t = nodes.index(node)
        if t == 0 or t == major.hops:
            continue
        owner = cover_map(major, [r for r in recoveries if r.host == mi])
        nearby = {
            r.order: r
            for r in owner
            if r is not None and r.span[0] <= t <= r.span[1]
        }
        adopted = _adoptions(major, owner, outcomes, list(nearby.values()))
        decisions.update(major_pairings(major, adopted, outcomes, only_node=node))
    for r in recoveries:
        if node in r.path.nodes[1:-1]:
            decisions.update(
                interior_pairings(r.path.nodes, r.bound, outcomes, only_node=node)
            )
    return decisions.pairs
