"""Reference algorithms: single-link multipath (SLMP) and greedy routing.

SLMP skips path selection entirely: every channel that can get a qubit at
both ends is bound, and after link outcomes are known routes are carved
out of whatever survived, shortest first, round-robin over the pairs.  It
needs global link state, which is what the comparison is about.

Greedy walks each pair's route by Euclidean distance, one neighbor at a
time, and gives up at local minima.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

from .metrics import Path
from .qpass import RoutingPlan
from .reserve import ResidualState, reserve_path
from .routes import DecisionSet, PlannedPath, RouteStart
from .topology import NetworkTopology


@dataclass
class SlmpBinding:
    """P2 output for SLMP: no paths, just qubits committed to channels."""

    bound: tuple[int, ...]  # channel ids, ascending
    residual: ResidualState


def slmp_p2(topology: NetworkTopology, sd_pairs=None) -> SlmpBinding:
    """Bind every channel whose endpoints still have free qubits, in
    channel id order.  The pair list plays no part; it is accepted so all
    P2 phases share a shape."""
    residual = ResidualState.fresh(topology)
    free = residual.free_qubits
    bound = []
    for c in topology.channels:
        if free[c.u] >= 1 and free[c.v] >= 1:
            free[c.u] -= 1
            free[c.v] -= 1
            residual.bind(c.u, c.v, 1)
            bound.append(c.id)
    return SlmpBinding(tuple(bound), residual)


def _bfs_shortest(adj: dict[int, dict[int, list[int]]], src: int, dst: int):
    """Hop-shortest src-dst path in the surviving-link graph; neighbor
    visits in ascending node id, so the result is reproducible."""
    parent = {src: None}
    frontier = deque([src])
    while frontier:
        v = frontier.popleft()
        if v == dst:
            nodes = [dst]
            while parent[nodes[-1]] is not None:
                nodes.append(parent[nodes[-1]])
            return nodes[::-1]
        for w in sorted(adj.get(v, ())):
            if w not in parent and adj[v][w]:
                parent[w] = v
                frontier.append(w)
    return None


def slmp_p4(
    topology: NetworkTopology,
    binding: SlmpBinding,
    outcomes: dict[int, bool],
    sd_pairs: list[tuple[int, int]],
) -> tuple[DecisionSet, list[RouteStart]]:
    """Carve routes from the surviving links: pairs take turns, each turn
    extracting one breadth-first shortest path and consuming its links,
    until no pair can route."""
    adj: dict[int, dict[int, list[int]]] = {}
    for cid in binding.bound:
        if not outcomes[cid]:
            continue
        ch = topology.channels[cid]
        adj.setdefault(ch.u, {}).setdefault(ch.v, []).append(cid)
        adj.setdefault(ch.v, {}).setdefault(ch.u, []).append(cid)
    for nbrs in adj.values():
        for ids in nbrs.values():
            ids.sort(reverse=True)  # consume from the low end by pop()

    decisions = DecisionSet()
    routes: list[RouteStart] = []
    turn = deque((idx, s, d) for idx, (s, d) in enumerate(sd_pairs))
    while turn:
        idx, s, d = turn.popleft()
        nodes = _bfs_shortest(adj, s, d)
        if nodes is None or len(nodes) < 2:
            continue  # this pair is done for the slot
        hops = []
        for u, v in zip(nodes, nodes[1:]):
            cid = adj[u][v].pop()
            adj[v][u].remove(cid)
            hops.append(cid)
        for t in range(1, len(nodes) - 1):
            decisions.add(nodes[t], hops[t - 1], hops[t])
        routes.append(RouteStart(idx, s, d, hops[0], False))
        turn.append((idx, s, d))
    return decisions, routes


def greedy_route(
    topology: NetworkTopology, sd_pairs: list[tuple[int, int]]
) -> RoutingPlan:
    """Walk each pair toward its destination by Euclidean distance.

    A step needs a free channel and free qubits at the next node (two
    unless it is the destination); among eligible strictly-closer
    neighbors the closest wins, ties to the smaller id.  No eligible
    strictly-closer neighbor means a local minimum: the walk aborts and
    reserves nothing.
    """
    residual = ResidualState.fresh(topology)
    nodes = topology.nodes

    def dist(a: int, b: int) -> float:
        return math.hypot(nodes[a].x - nodes[b].x, nodes[a].y - nodes[b].y)

    majors: list[PlannedPath] = []
    unsatisfied = set()
    for idx, (s, d) in enumerate(sd_pairs):
        walk = [s]
        while walk[-1] != d and residual.free_qubits[s] >= 1:
            v = walk[-1]
            best = None
            for x in topology.neighbors(v):
                if residual.free_channels(v, x) < 1:
                    continue
                if residual.free_qubits[x] < (1 if x == d else 2):
                    continue
                cand = (dist(x, d), x)
                if cand[0] < dist(v, d) and (best is None or cand < best):
                    best = cand
            if best is None:
                break
            walk.append(best[1])
        if walk[-1] == d:
            path = Path(tuple(walk), 1)
            bound = reserve_path(residual, path)
            majors.append(PlannedPath(idx, path, tuple(tuple(b) for b in bound)))
        else:
            unsatisfied.add(idx)
    return RoutingPlan(majors, [], residual, unsatisfied)
