"""Network topology: nodes with qubit capacity, multi-channel edges.

Generated topologies place nodes in a 100,000 x 100,000 unit square with a
minimum pairwise separation of 50,000/sqrt(n), connect them with a
distance-decaying random graph, and calibrate two scalars by bisection:
the connection scale so the realized mean degree hits a target, and the
global loss exponent ``alpha`` so the channel success rates e^(-alpha*L)
average to a target.  Every channel's success rate is recomputable from
``alpha`` and its stored length.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import rng

AREA_SIDE = 100_000.0
DIAGONAL = AREA_SIDE * math.sqrt(2.0)
DECAY_SCALE = 0.2 * DIAGONAL

QUBIT_RANGE = (10, 14)
WIDTH_RANGE = (3, 7)

DEGREE_TOLERANCE = 0.5
RATE_TOLERANCE = 0.01
MAX_REGENERATION_ATTEMPTS = 100


class CalibrationError(RuntimeError):
    """Raised when bisection cannot reach a calibration target; carries the
    closest achieved value."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (closest achieved: {achieved:.4f})")
        self.achieved = achieved


def channel_success_rate(length: float, alpha: float) -> float:
    """Per-attempt success rate of a channel of physical ``length``."""
    if length < 0:
        raise ValueError("length must be non-negative")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return math.exp(-alpha * length)


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float
    qubits: int


@dataclass(frozen=True)
class Channel:
    id: int
    u: int
    v: int
    length: float
    rate: float

    @property
    def edge(self) -> tuple[int, int]:
        return (self.u, self.v) if self.u < self.v else (self.v, self.u)


@dataclass
class NetworkTopology:
    alpha: float
    nodes: list[Node]
    channels: list[Channel]
    # derived lookups, built in __post_init__
    edges: dict[tuple[int, int], list[int]] = field(init=False, repr=False)
    edge_stats: dict[tuple[int, int], tuple[int, float, float]] = field(
        init=False, repr=False
    )
    adjacency: list[list[int]] = field(init=False, repr=False)
    _hop_cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self.edges = {}
        for ch in self.channels:
            self.edges.setdefault(ch.edge, []).append(ch.id)
        for ids in self.edges.values():
            ids.sort()
        # (width, rate, length) per edge; flat lookups for the search loops
        self.edge_stats = {
            key: (len(ids), self.channels[ids[0]].rate, self.channels[ids[0]].length)
            for key, ids in self.edges.items()
        }
        self.adjacency = [[] for _ in self.nodes]
        for u, v in sorted(self.edges):
            self.adjacency[u].append(v)
            self.adjacency[v].append(u)
        self._hop_cache = {}

    # -- basic queries ----------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.nodes)

    def edge_width(self, u: int, v: int) -> int:
        key = (u, v) if u < v else (v, u)
        got = self.edge_stats.get(key)
        return got[0] if got else 0

    def edge_channels(self, u: int, v: int) -> list[int]:
        key = (u, v) if u < v else (v, u)
        return self.edges.get(key, [])

    def edge_rate(self, u: int, v: int) -> float:
        key = (u, v) if u < v else (v, u)
        got = self.edge_stats.get(key)
        if got is None:
            raise KeyError(f"no edge between {u} and {v}")
        return got[1]

    def edge_length(self, u: int, v: int) -> float:
        key = (u, v) if u < v else (v, u)
        got = self.edge_stats.get(key)
        if got is None:
            raise KeyError(f"no edge between {u} and {v}")
        return got[2]

    def neighbors(self, u: int) -> list[int]:
        return self.adjacency[u]

    def mean_degree(self) -> float:
        return 2.0 * len(self.edges) / self.n

    def mean_rate(self) -> float:
        return sum(ch.rate for ch in self.channels) / len(self.channels)

    def is_connected(self) -> bool:
        if self.n == 0:
            return True
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in self.adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n

    def hop_distances(self, src: int) -> list[float]:
        """Hop counts from src over the edge graph (inf if unreachable)."""
        if src in self._hop_cache:
            return self._hop_cache[src]
        dist = [math.inf] * self.n
        dist[src] = 0
        frontier = [src]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for v in self.adjacency[u]:
                    if dist[v] == math.inf:
                        dist[v] = d
                        nxt.append(v)
            frontier = nxt
        self._hop_cache[src] = dist
        return dist

    # -- serialization ----------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "alpha": self.alpha,
            "nodes": [
                {"id": nd.id, "x": nd.x, "y": nd.y, "qubits": nd.qubits}
                for nd in self.nodes
            ],
            "channels": [
                {"id": ch.id, "u": ch.u, "v": ch.v, "length": ch.length, "p": ch.rate}
                for ch in self.channels
            ],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "NetworkTopology":
        doc = json.loads(text)
        nodes = [Node(d["id"], d["x"], d["y"], d["qubits"]) for d in doc["nodes"]]
        channels = [
            Channel(d["id"], d["u"], d["v"], d["length"], d["p"])
            for d in doc["channels"]
        ]
        topo = cls(doc["alpha"], nodes, channels)
        topo.validate()
        return topo

    def to_dot(self) -> str:
        lines = [
            "graph topology {",
            f'  graph [alpha="{self.alpha!r}"];',
        ]
        for nd in self.nodes:
            lines.append(
                f'  {nd.id} [pos="{nd.x!r},{nd.y!r}", qubits="{nd.qubits}"];'
            )
        for ch in self.channels:
            u, v = ch.edge
            lines.append(
                f'  {u} -- {v} [id="{ch.id}", length="{ch.length!r}", p="{ch.rate!r}"];'
            )
        lines.append("}")
        return "\n".join(lines) + "\n"

    _DOT_NODE = re.compile(r'^\s*(\d+)\s*\[pos="([^,]+),([^"]+)",\s*qubits="(\d+)"\];')
    _DOT_EDGE = re.compile(
        r'^\s*(\d+)\s*--\s*(\d+)\s*\[id="(\d+)",\s*length="([^"]+)",\s*p="([^"]+)"\];'
    )
    _DOT_GRAPH = re.compile(r'^\s*graph\s*\[alpha="([^"]+)"\];')

    @classmethod
    def from_dot(cls, text: str) -> "NetworkTopology":
        alpha = None
        nodes, channels = [], []
        for line in text.splitlines():
            m = cls._DOT_GRAPH.match(line)
            if m:
                alpha = float(m.group(1))
                continue
            m = cls._DOT_NODE.match(line)
            if m:
                nodes.append(
                    Node(int(m.group(1)), float(m.group(2)), float(m.group(3)), int(m.group(4)))
                )
                continue
            m = cls._DOT_EDGE.match(line)
            if m:
                u, v = int(m.group(1)), int(m.group(2))
                channels.append(
                    Channel(int(m.group(3)), u, v, float(m.group(4)), float(m.group(5)))
                )
        if alpha is None:
            raise ValueError("missing alpha attribute in DOT input")
        channels.sort(key=lambda c: c.id)
        return cls(alpha, nodes, channels)

    def validate(self):
        ids = [nd.id for nd in self.nodes]
        if ids != list(range(len(ids))):
            raise ValueError("node ids must be 0..n-1 in order")
        cids = [ch.id for ch in self.channels]
        if cids != list(range(len(cids))):
            raise ValueError("channel ids must be 0..C-1 in order")
        for ch in self.channels:
            if ch.u == ch.v:
                raise ValueError(f"channel {ch.id} is a self-loop")
            expected = channel_success_rate(ch.length, self.alpha)
            if not math.isclose(ch.rate, expected, rel_tol=0, abs_tol=1e-12):
                raise ValueError(
                    f"channel {ch.id} rate {ch.rate} != e^(-alpha*length) {expected}"
                )


# -- random generation ----------------------------------------------------


def _place_nodes(n: int, seed_key: tuple) -> list[tuple[float, float]]:
    min_sep = 50_000.0 / math.sqrt(n)
    stream = rng.substream(*seed_key, "placement")
    pts: list[tuple[float, float]] = []
    attempts = 0
    while len(pts) < n:
        attempts += 1
        if attempts > 20_000 * n:
            raise CalibrationError("node placement rejection sampling stalled", len(pts))
        x = stream.random() * AREA_SIDE
        y = stream.random() * AREA_SIDE
        ok = all((x - px) ** 2 + (y - py) ** 2 >= min_sep**2 for px, py in pts)
        if ok:
            pts.append((x, y))
    return pts


def _calibrate_edges(
    pts: list[tuple[float, float]], target_degree: float, seed_key: tuple
) -> list[tuple[int, int]]:
    n = len(pts)
    stream = rng.substream(*seed_key, "edges")
    iu, ju = np.triu_indices(n, k=1)
    px = np.array([p[0] for p in pts])
    py = np.array([p[1] for p in pts])
    dx = px[iu] - px[ju]
    dy = py[iu] - py[ju]
    weight = np.exp(-np.sqrt(dx * dx + dy * dy) / DECAY_SCALE)
    # one shared uniform per pair keeps the realized edge set monotone in beta
    draws = np.array([stream.random() for _ in range(len(iu))])

    lo, hi = 1e-4, 1.0
    best_mid, best_gap = None, math.inf
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        degree = 2.0 * int(np.count_nonzero(draws < mid * weight)) / n
        gap = abs(degree - target_degree)
        if gap < best_gap:
            best_gap, best_mid = gap, mid
        if degree < target_degree:
            lo = mid
        else:
            hi = mid
    if best_gap > DEGREE_TOLERANCE:
        achieved = 0.0
        if best_mid is not None:
            achieved = 2.0 * int(np.count_nonzero(draws < best_mid * weight)) / n
        raise CalibrationError("could not reach target mean degree", achieved)
    keep = np.flatnonzero(draws < best_mid * weight)
    return [(int(iu[k]), int(ju[k])) for k in keep]


def _calibrate_alpha(lengths: list[float], widths: list[int], target_rate: float) -> float:
    total_w = sum(widths)

    def mean_rate(alpha: float) -> float:
        return sum(w * math.exp(-alpha * L) for L, w in zip(lengths, widths)) / total_w

    lo, hi = 1e-8, 10.0
    best_alpha, best_gap = lo, math.inf
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        m = mean_rate(mid)
        gap = abs(m - target_rate)
        if gap < best_gap:
            best_gap, best_alpha = gap, mid
        if m > target_rate:
            lo = mid  # too little decay, increase alpha
        else:
            hi = mid
    if best_gap > RATE_TOLERANCE:
        raise CalibrationError("could not reach target mean rate", mean_rate(best_alpha))
    return best_alpha


def generate_waxman(
    n: int,
    target_degree: float,
    target_rate: float,
    seed: int,
    qubit_range: tuple[int, int] = QUBIT_RANGE,
    width_range: tuple[int, int] = WIDTH_RANGE,
) -> NetworkTopology:
    """Random connected topology with calibrated degree and success rate.

    Disconnected draws are regenerated with seed+1 (bounded retries); the
    result is a pure function of the arguments.
    """
    if n < 2:
        raise ValueError("need at least two nodes")
    last_error: Exception | None = None
    for attempt in range(MAX_REGENERATION_ATTEMPTS):
        key = ("waxman", seed + attempt)
        try:
            pts = _place_nodes(n, key)
            edge_list = _calibrate_edges(pts, target_degree, key)
        except CalibrationError as exc:
            last_error = exc
            continue
        edge_list.sort()
        # connectivity check before committing to this draw
        adj = [[] for _ in range(n)]
        for u, v in edge_list:
            adj[u].append(v)
            adj[v].append(u)
        seen = {0}
        stack = [0]
        while stack:
            a = stack.pop()
            for b in adj[a]:
                if b not in seen:
                    seen.add(b)
                    stack.append(b)
        if len(seen) != n:
            last_error = RuntimeError("disconnected draw")
            continue

        wstream = rng.substream(*key, "widths")
        widths = [wstream.randint(*width_range) for _ in edge_list]
        qstream = rng.substream(*key, "qubits")
        qubits = [qstream.randint(*qubit_range) for _ in range(n)]
        lengths = [math.dist(pts[u], pts[v]) for u, v in edge_list]
        try:
            alpha = _calibrate_alpha(lengths, widths, target_rate)
        except CalibrationError as exc:
            last_error = exc
            continue

        nodes = [Node(i, pts[i][0], pts[i][1], qubits[i]) for i in range(n)]
        channels = []
        for (u, v), L, w in zip(edge_list, lengths, widths):
            rate = channel_success_rate(L, alpha)
            for _ in range(w):
                channels.append(Channel(len(channels), u, v, L, rate))
        return NetworkTopology(alpha, nodes, channels)
    raise CalibrationError(
        f"failed to generate a usable topology after {MAX_REGENERATION_ATTEMPTS} attempts: {last_error}",
        float("nan"),
    )


# -- hand-built validation fixtures ---------------------------------------

# Eight nodes: source, six interior relays, destination.  Three edge-disjoint
# routes between source and destination: a 3-hop one through A-B, a 4-hop one
# through C-A-E and a 4-hop one through D-B-F.
FIXTURE_NAMES = ["s", "A", "B", "C", "D", "E", "F", "d"]
_S, _A, _B, _C, _D, _E, _F, _T = range(8)
_FIXTURE_EDGES = [
    (_S, _A), (_A, _B), (_B, _T),          # direct route
    (_S, _C), (_C, _A), (_A, _E), (_E, _T),  # upper detour
    (_S, _D), (_D, _B), (_B, _F), (_F, _T),  # lower detour
]
_FIXTURE_POS = {
    _S: (0.0, 0.0),
    _A: (2_000.0, 1_000.0),
    _B: (4_000.0, 1_000.0),
    _C: (1_000.0, 2_500.0),
    _D: (1_000.0, -2_500.0),
    _E: (4_000.0, 3_000.0),
    _F: (4_000.0, -3_000.0),
    _T: (6_000.0, 0.0),
}


def validation_fixture(example: int) -> tuple[NetworkTopology, int, int]:
    """One of the two hand-built validation topologies.

    Example 1: every edge has width 3 and rate 0.99; endpoint capacity 6,
    interior capacity 6.  Example 2: the direct route has width 2, the
    detours width 1, all rates 0.6; endpoint capacity 3, interior
    capacity 4.  Interior capacities are twice the endpoint-style figures
    because an interior node spends two qubits per reserved channel.
    Returns (topology, source id, destination id).
    """
    if example == 1:
        widths = {e: 3 for e in _FIXTURE_EDGES}
        rate = 0.99
        caps = {i: 6 for i in range(8)}
    elif example == 2:
        widths = {e: 2 for e in _FIXTURE_EDGES[:3]}
        widths.update({e: 1 for e in _FIXTURE_EDGES[3:]})
        rate = 0.6
        caps = {i: 4 for i in range(8)}
        caps[_S] = caps[_T] = 3
    else:
        raise ValueError("example must be 1 or 2")
    # alpha=1 and length=-ln(p) make the stored rate exact
    alpha = 1.0
    length = -math.log(rate)
    nodes = [
        Node(i, _FIXTURE_POS[i][0], _FIXTURE_POS[i][1], caps[i]) for i in range(8)
    ]
    channels = []
    for u, v in _FIXTURE_EDGES:
        for _ in range(widths[(u, v)]):
            channels.append(Channel(len(channels), u, v, length, rate))
    return NetworkTopology(alpha, nodes, channels), _S, _T
