"""Path search under routing metrics.

``eda`` is the online search: a Dijkstra-like best-first scan over label
classes.  The throughput metric is neither hop-additive nor monotone
across different path widths, so a single label per node can strand the
optimum behind a wider-but-worse prefix (and, with a hop bound, can even
miss feasible paths entirely).  Keeping one label per (node, evaluation
width, hop count) class fixes both: within a class the evaluation only
decays under extension, so the usual greedy pop order applies, and the
best complete path is simply the first destination label popped.  Ties
break on the lexicographic node sequence, which keeps independent runs
byte-for-byte reproducible.

``yen_k_shortest`` enumerates loopless candidate paths offline (full static
capacities, widths from the bottleneck edge), used to precompute candidate
tables.  ``calibrate_h_m`` derives the hop bound used to prune online
searches.  ``max_flow_width`` is an independent upper-bound oracle for the
total reservable width between two nodes.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable

from . import rng
from .metrics import (
    ExtParams,
    Path,
    binomial_pmf,
    creation_rate,
    ext_from_dist,
    extend_width_dist,
)
from .reserve import ResidualState, reserve_path
from .topology import NetworkTopology

EXT = "EXT"
SUM_DIST = "SumDist"
CR = "CR"
BOT_CAP = "BotCap"
METRIC_KINDS = (EXT, SUM_DIST, CR, BOT_CAP)

# hard cap on paths selected per multipath query
MAX_PATHS_PER_QUERY = 200


@dataclass(frozen=True)
class MetricEvaluator:
    """Ranks paths; smaller key = better path."""

    kind: str
    swap_rate: float = 1.0

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")

    def key(self, topology: NetworkTopology, nodes: Iterable[int], width: int) -> tuple:
        nodes = tuple(nodes)
        hops = list(zip(nodes, nodes[1:]))
        if self.kind == SUM_DIST:
            return (sum(topology.edge_length(u, v) for u, v in hops),)
        rates = [topology.edge_rate(u, v) for u, v in hops]
        if self.kind == CR:
            return (creation_rate(rates),)
        if self.kind == BOT_CAP:
            return (-float(width), creation_rate(rates))
        dist = ext_distribution_for(rates, width)
        return (-ext_from_dist(dist, len(rates), self.swap_rate),)

    def ext_value(self, topology: NetworkTopology, nodes: Iterable[int], width: int) -> float:
        if self.kind != EXT:
            raise ValueError("ext_value only defined for the EXT metric")
        return -self.key(topology, nodes, width)[0]

    def boosted_key(self, key: tuple, factor: float) -> tuple:
        """Apply a fairness boost: the boosted key ranks strictly better
        than the raw key for factor > 1."""
        if factor == 1.0:
            return key
        if self.kind == EXT:
            return (key[0] * factor,)
        if self.kind == BOT_CAP:
            return (key[0] * factor, key[1] / factor)
        return (key[0] / factor,)


def ext_distribution_for(rates: list[float], width: int) -> list[float]:
    dist = binomial_pmf(width, rates[0])
    for p in rates[1:]:
        dist = extend_width_dist(dist, width, p)
    return dist


# -- online best-path search ------------------------------------------------

_tail_cache: dict[tuple[int, float], tuple[float, ...]] = {}


def _edge_tails(width: int, rate: float) -> tuple[float, ...]:
    """(P(X >= 1), ..., P(X >= width)) for X ~ Binomial(width, rate)."""
    got = _tail_cache.get((width, rate))
    if got is None:
        pmf = binomial_pmf(width, rate)
        acc = 0.0
        rev = []
        for i in range(width, 0, -1):
            acc += pmf[i]
            rev.append(acc)
        got = tuple(reversed(rev))
        _tail_cache[(width, rate)] = got
    return got


def eda(
    topology: NetworkTopology,
    residual: ResidualState,
    src: int,
    dst: int,
    evaluator: MetricEvaluator,
    max_hops: float,
    *,
    banned_nodes: set[int] | None = None,
    banned_edges: set[tuple[int, int]] | None = None,
) -> Path | None:
    """Best positive-width path from src to dst under the evaluator.

    Labels live in (node, evaluation width, hop count) classes; within a
    class the value only decays under extension, so the first destination
    pop is the best candidate overall.  Candidate paths longer than
    ``max_hops`` are pruned.  Returns None when no positive-width path
    exists within the bound.  Simple paths only; exact value ties resolve
    to the lexicographically smallest node sequence.  ``banned_nodes`` and
    ``banned_edges`` (normalized pairs) exclude parts of the graph; the
    spur searches of the offline enumeration rely on them.
    """
    if src == dst:
        raise ValueError("src and dst must differ")
    free_q = residual.free_qubits
    if free_q[src] < 1 or free_q[dst] < 1:
        return None
    if evaluator.kind == EXT:
        return _eda_ext(
            topology, residual, src, dst, evaluator.swap_rate, max_hops,
            banned_nodes, banned_edges,
        )
    return _eda_scalar(
        topology, residual, src, dst, evaluator, max_hops,
        banned_nodes, banned_edges,
    )


_QUEUED, _POPPED, _DEAD = 2, 1, 0


def _eda_ext(
    topology: NetworkTopology,
    residual: ResidualState,
    src: int,
    dst: int,
    qswap: float,
    max_hops: float,
    banned_nodes: set[int] | None = None,
    banned_edges: set[tuple[int, int]] | None = None,
) -> Path | None:
    """Throughput-metric search.

    A label carries the per-level survival vector U (U[i-1] = swap factor
    times the probability that every hop so far has at least i successful
    channels); its value is sum(U).  U extends componentwise along an edge,
    so a label whose U is componentwise dominated extends at least as badly
    everywhere and is discarded; each class keeps the non-dominated
    frontier.  (Domination ignores which nodes the paths already visited, so
    in principle a pruned label could have owned the best detour; the
    brute-force comparison suite keeps that premise honest.)  Frontiers stay
    tiny in practice and the first destination pop wins.
    """
    free_q = residual.free_qubits
    src_q = free_q[src]
    adjacency = topology.adjacency
    stats = topology.edge_stats
    bound_get = residual.bound_count.get
    tails_for = _edge_tails
    be = banned_edges or None
    # static hop distances to dst never overestimate the residual ones, so
    # they safely prune labels that cannot reach dst within the bound
    to_dst = topology.hop_distances(dst)
    reach = min(max_hops, topology.n)
    if to_dst[src] > reach:
        return None

    # A label is evaluated at the partial path's own bottleneck width (its
    # narrower evaluations are dominated, so they are never materialized);
    # crossing a narrower edge rebuilds U at the reduced width.
    # classes[(node, width, hops)] = labels [negV, nodes, U, mask, state]
    classes: dict[tuple[int, int, int], list[list]] = {}
    heap: list[list] = []

    def offer(v: int, w: int, h: int, negv: float, nodes: tuple[int, ...],
              uvec: tuple[float, ...], mask: int):
        lst = classes.setdefault((v, w, h), [])
        for e in lst:
            u0 = e[2]
            if all(a >= b for a, b in zip(u0, uvec)):
                if u0 == uvec and nodes < e[1] and e[4] == _QUEUED:
                    e[4] = _DEAD
                    break
                return
        else:
            survivors = []
            for e in lst:
                if all(a >= b for a, b in zip(uvec, e[2])):
                    if e[4] == _QUEUED:
                        e[4] = _DEAD
                else:
                    survivors.append(e)
            lst[:] = survivors
        entry = [negv, nodes, uvec, mask, _QUEUED]
        lst.append(entry)
        heapq.heappush(heap, entry)

    def relax(v: int, w: int, h: int, nodes: tuple[int, ...],
              uvec: tuple[float, ...], mask: int):
        if h + 1 > max_hops:
            return
        interior_cap = src_q if v == src else free_q[v] // 2
        qfac = qswap ** (h + 1)
        budget = min(max_hops - h - 1, reach)
        for x in adjacency[v]:
            if (mask >> x) & 1 or to_dst[x] > budget:
                continue
            key = (v, x) if v < x else (x, v)
            if be is not None and key in be:
                continue
            width, rate, _ = stats[key]
            w2 = interior_cap
            if free_q[x] < w2:
                w2 = free_q[x]
            fc = width - bound_get(key, 0)
            if fc < w2:
                w2 = fc
            if w2 < 1:
                continue
            if w2 >= w:
                w2 = w
                t = tails_for(w, rate)
                u2 = tuple(qswap * a * b for a, b in zip(uvec, t))
            else:
                # narrower hop: rebuild the survival vector at width w2
                prod = list(tails_for(w2, rate))
                for a, b in zip(nodes, nodes[1:]):
                    k2 = (a, b) if a < b else (b, a)
                    t = tails_for(w2, stats[k2][1])
                    for i in range(w2):
                        prod[i] *= t[i]
                u2 = tuple(qfac * c for c in prod)
            offer(x, w2, h + 1, -sum(u2), nodes + (x,), u2, mask | (1 << x))

    src_mask = 1 << src
    if banned_nodes:
        # folded into the visited mask: the same bit test skips them
        for b in banned_nodes:
            src_mask |= 1 << b
    start_budget = min(max_hops - 1, reach)
    for x in adjacency[src]:
        if (src_mask >> x) & 1 or to_dst[x] > start_budget:
            continue
        key = (src, x) if src < x else (x, src)
        if be is not None and key in be:
            continue
        width, rate, _ = stats[key]
        w0 = min(src_q, free_q[x], width - bound_get(key, 0))
        if w0 < 1:
            continue
        t = tails_for(w0, rate)
        u0 = tuple(qswap * c for c in t)
        offer(x, w0, 1, -sum(u0), (src, x), u0, src_mask | (1 << x))

    while heap:
        entry = heapq.heappop(heap)
        if entry[4] != _QUEUED:
            continue
        entry[4] = _POPPED
        nodes = entry[1]
        v = nodes[-1]
        if v == dst:
            return Path(nodes, len(entry[2]))
        relax(v, len(entry[2]), len(nodes) - 1, nodes, entry[2], entry[3])
    return None


def _eda_scalar(
    topology: NetworkTopology,
    residual: ResidualState,
    src: int,
    dst: int,
    evaluator: MetricEvaluator,
    max_hops: float,
    banned_nodes: set[int] | None = None,
    banned_edges: set[tuple[int, int]] | None = None,
) -> Path | None:
    """Search for the additive metrics (and the bottleneck-width one).

    Extension strictly worsens these metrics at any hop count, so classes
    need a hop dimension only when the hop bound can actually prune, and a
    single label per class is exact.
    """
    n = topology.n
    free_q = residual.free_qubits
    src_q = free_q[src]
    kind = evaluator.kind
    use_h = max_hops < n - 1
    per_width = kind == BOT_CAP
    sum_dist = kind == SUM_DIST
    adjacency = topology.adjacency
    stats = topology.edge_stats
    bound_get = residual.bound_count.get
    be = banned_edges or None
    to_dst = topology.hop_distances(dst)
    reach = min(max_hops, n)
    if to_dst[src] > reach:
        return None

    labels: dict[tuple[int, int, int], tuple[tuple, tuple[int, ...]]] = {}
    masks: dict[tuple[int, int, int], int] = {}
    visited: set[tuple[int, int, int]] = set()
    heap: list[tuple[tuple, tuple[int, ...], int]] = []

    def offer(v: int, w: int, h: int, key: tuple, nodes: tuple[int, ...],
              mask: int):
        cls = (v, w, h if use_h else 0)
        if cls in visited:
            return
        cur = labels.get(cls)
        if cur is not None and (cur[0], cur[1]) <= (key, nodes):
            return
        labels[cls] = (key, nodes)
        masks[cls] = mask
        heapq.heappush(heap, (key, nodes, w))

    def relax(v: int, w: int, h: int, key: tuple, nodes: tuple[int, ...],
              mask: int):
        if h + 1 > max_hops:
            return
        interior_cap = src_q if v == src else free_q[v] // 2
        if interior_cap < w:
            return
        budget = min(max_hops - h - 1, reach)
        for x in adjacency[v]:
            if (mask >> x) & 1 or to_dst[x] > budget:
                continue
            ekey = (v, x) if v < x else (x, v)
            if be is not None and ekey in be:
                continue
            width, rate, length = stats[ekey]
            if free_q[x] < w or width - bound_get(ekey, 0) < w:
                continue
            if sum_dist:
                key2 = (key[0] + length,)
            else:
                step = 1.0 / rate if rate > 0 else math.inf
                if kind == CR:
                    key2 = (key[0] + step,)
                else:  # BotCap
                    key2 = (-float(w), key[1] + step)
            offer(x, w, h + 1, key2, nodes + (x,), mask | (1 << x))

    src_mask = 1 << src
    if banned_nodes:
        # folded into the visited mask: the same bit test skips them
        for b in banned_nodes:
            src_mask |= 1 << b
    if per_width:
        # widths beyond every incident edge's capacity cannot start a path
        w_cap = 0
        for x in adjacency[src]:
            if (src_mask >> x) & 1:
                continue
            ekey = (src, x) if src < x else (x, src)
            if be is not None and ekey in be:
                continue
            w_cap = max(w_cap, min(free_q[x], stats[ekey][0] - bound_get(ekey, 0)))
        for w in range(1, min(src_q, w_cap) + 1):
            relax(src, w, 0, (-float(w), 0.0), (src,), src_mask)
    else:
        relax(src, 1, 0, (0.0,), (src,), src_mask)

    while heap:
        key, nodes, w = heapq.heappop(heap)
        v = nodes[-1]
        cls = (v, w, (len(nodes) - 1) if use_h else 0)
        if cls in visited or labels.get(cls) != (key, nodes):
            continue
        visited.add(cls)
        if v == dst:
            if per_width:
                return Path(nodes, w)
            return Path(nodes, residual.width_of(list(nodes)))
        relax(v, w, len(nodes) - 1, key, nodes, masks[cls])
    return None


def multipath_select(
    topology: NetworkTopology,
    residual: ResidualState,
    src: int,
    dst: int,
    evaluator: MetricEvaluator,
    max_hops: float,
    limit: int = MAX_PATHS_PER_QUERY,
) -> list[tuple[Path, float, list[list[int]]]]:
    """Repeated best-path search with reservation for a single pair.

    Returns (path, evaluation value with smaller-key-first orientation
    flattened to the EXT value when applicable, bound channels) per
    selected path.  Mutates ``residual``.
    """
    out = []
    while len(out) < limit:
        path = eda(topology, residual, src, dst, evaluator, max_hops)
        if path is None or path.width < 1:
            break
        value = (
            evaluator.ext_value(topology, path.nodes, path.width)
            if evaluator.kind == EXT
            else -evaluator.key(topology, path.nodes, path.width)[0]
        )
        bound = reserve_path(residual, path)
        out.append((path, value, bound))
    return out


def calibrate_h_m(
    topology: NetworkTopology,
    seed: int,
    swap_rate: float,
    sample_pairs: int = 100,
    ext_threshold: float = 1.0,
) -> int:
    """Hop bound for online searches.

    Runs single-pair multipath selection (fresh residual per pair, hop
    bound n-1) for ``sample_pairs`` random pairs and keeps the maximum hop
    count among selected paths whose expected throughput exceeds
    ``ext_threshold``; never below 2.
    """
    n = topology.n
    stream = rng.substream(seed, "hm-calibration")
    evaluator = MetricEvaluator(EXT, swap_rate)
    best = 2
    for _ in range(sample_pairs):
        src, dst = stream.sample(range(n), 2)
        residual = ResidualState.fresh(topology)
        for path, value, _ in multipath_select(
            topology, residual, src, dst, evaluator, n - 1
        ):
            if value > ext_threshold:
                best = max(best, path.hops)
    return best


# -- offline candidate enumeration -------------------------------------------


def _static_best_path(
    topology: NetworkTopology,
    src: int,
    dst: int,
    evaluator: MetricEvaluator,
    max_hops: float,
    banned_nodes: set[int],
    banned_edges: set[tuple[int, int]],
) -> tuple[int, ...] | None:
    """Best path on the static edge graph (qubit capacities ignored),
    honouring node/edge bans.  Used as the spur search inside Yen."""
    path = eda(
        topology, _StaticResidual(topology), src, dst, evaluator, max_hops,
        banned_nodes=banned_nodes, banned_edges=banned_edges,
    )
    return path.nodes if path else None


class _StaticResidual:
    """Residual view with unlimited qubits and untouched channels: widths
    reduce to the static bottleneck edge width."""

    def __init__(self, topology: NetworkTopology):
        self._topology = topology
        self.free_qubits = [1 << 30] * topology.n
        self.bound_count: dict[tuple[int, int], int] = {}

    def free_channels(self, u: int, v: int) -> int:
        return self._topology.edge_width(u, v)

    def width_of(self, nodes) -> int:
        return min(self.free_channels(u, v) for u, v in zip(nodes, nodes[1:]))


def static_bottleneck_width(topology: NetworkTopology, nodes: tuple[int, ...]) -> int:
    return min(topology.edge_width(u, v) for u, v in zip(nodes, nodes[1:]))


def yen_k_shortest(
    topology: NetworkTopology,
    src: int,
    dst: int,
    count: int,
    evaluator: MetricEvaluator,
    max_hops: float = math.inf,
) -> list[Path]:
    """Up to ``count`` loopless paths, best metric first.

    Candidate costs are always recomputed on the whole path; widths are
    the static bottleneck edge width.  Deterministic: ties break on the
    node sequence.
    """
    def full_key(nodes: tuple[int, ...]) -> tuple:
        return evaluator.key(topology, nodes, static_bottleneck_width(topology, nodes))

    first = _static_best_path(topology, src, dst, evaluator, max_hops, set(), set())
    if first is None:
        return []
    accepted: list[tuple[int, ...]] = [first]
    candidates: list[tuple[tuple, tuple[int, ...]]] = []
    known: set[tuple[int, ...]] = {first}

    while len(accepted) < count:
        base = accepted[-1]
        for i in range(len(base) - 1):
            root = base[: i + 1]
            spur = root[-1]
            banned_edges = set()
            for path in accepted:
                if path[: i + 1] == root and len(path) > i + 1:
                    e = (path[i], path[i + 1])
                    banned_edges.add(e if e[0] < e[1] else (e[1], e[0]))
            banned_nodes = set(root[:-1])
            remaining = max_hops - i if max_hops != math.inf else math.inf
            tail = _static_best_path(
                topology, spur, dst, evaluator, remaining, banned_nodes, banned_edges
            )
            if tail is None:
                continue
            nodes = root[:-1] + tail
            if nodes in known:
                continue
            known.add(nodes)
            heapq.heappush(candidates, (full_key(nodes) + (nodes,), nodes))
        if not candidates:
            break
        _, nxt = heapq.heappop(candidates)
        accepted.append(nxt)

    return [
        Path(nodes, static_bottleneck_width(topology, nodes)) for nodes in accepted
    ]


# -- max-flow width oracle ----------------------------------------------------


def max_flow_width(
    topology: NetworkTopology, residual: ResidualState, src: int, dst: int
) -> int:
    """Total path width reservable between src and dst, all routes combined.

    Computed as integer max flow with nodes split into in/out halves:
    interior nodes pass at most free-qubits//2 units (two qubits per unit),
    endpoints at most their full free-qubit count, edges at most their free
    channel count.
    """
    free_q = residual.free_qubits
    cap: dict[tuple[int, int], int] = {}
    adj: dict[int, list[int]] = {}

    def add(a: int, b: int, c: int):
        if cap.get((a, b)) is None:
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
            cap[(a, b)] = 0
            cap[(b, a)] = 0
        cap[(a, b)] += c

    for nd in topology.nodes:
        q = free_q[nd.id]
        inner = q if nd.id in (src, dst) else q // 2
        add(2 * nd.id, 2 * nd.id + 1, inner)
    for (u, v) in topology.edges:
        c = residual.free_channels(u, v)
        add(2 * u + 1, 2 * v, c)
        add(2 * v + 1, 2 * u, c)

    s, t = 2 * src, 2 * dst + 1
    flow = 0
    while True:
        # BFS augmenting path on residual capacities
        parent = {s: s}
        queue = [s]
        while queue and t not in parent:
            nxt = []
            for a in queue:
                for b in adj.get(a, ()):
                    if b not in parent and cap[(a, b)] > 0:
                        parent[b] = a
                        nxt.append(b)
            queue = nxt
        if t not in parent:
            return flow
        bottleneck = math.inf
        b = t
        while b != s:
            a = parent[b]
            bottleneck = min(bottleneck, cap[(a, b)])
            b = a
        b = t
        while b != s:
            a = parent[b]
            cap[(a, b)] -= bottleneck
            cap[(b, a)] += bottleneck
            b = a
        flow += bottleneck
