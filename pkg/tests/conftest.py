"""Shared test helpers: independent oracles and small topology builders.

The oracles here deliberately use brute-force enumeration rather than the
package's recursive/incremental implementations, so agreement between the
two is meaningful.

Tests named ``test_criterion_NN_*`` each stand for one release gate; a
hook below collects their outcomes and prints the checklist at the end of
the run.
"""

from __future__ import annotations

import math
import random
import re
from itertools import product

import pytest

from qroute.metrics import Path
from qroute.reserve import ResidualState
from qroute.topology import Channel, NetworkTopology, Node

_CRITERION = re.compile(r"test_criterion_(\d+)")


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    m = _CRITERION.match(item.name)
    if m is None:
        return
    status = "PASS" if report.passed else "FAIL"
    note = getattr(item, "_acceptance_note", "")
    line = f"criterion {int(m.group(1)):2d} {status} [{report.duration:7.1f}s] {note}"
    item.config._acceptance_lines.append((int(m.group(1)), line))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)


def enum_width_dist(rates, width):
    """Exhaustive width distribution: iterate every per-hop success-count
    vector, weight by independent binomials, bucket by the minimum."""
    dist = [0.0] * (width + 1)
    per_hop = []
    for p in rates:
        per_hop.append(
            [math.comb(width, c) * p**c * (1 - p) ** (width - c) for c in range(width + 1)]
        )
    for counts in product(range(width + 1), repeat=len(rates)):
        pr = 1.0
        for pmf, c in zip(per_hop, counts):
            pr *= pmf[c]
        dist[min(counts)] += pr
    return dist


def enum_ext(rates, width, q=1.0):
    dist = enum_width_dist(rates, width)
    return q ** len(rates) * sum(i * pi for i, pi in enumerate(dist))


def build_topology(edges, qubits, positions=None):
    """Topology from [(u, v, width, rate)] and per-node qubit counts.

    Channel lengths are chosen so rate == e^(-alpha * length) with alpha=1.
    """
    n = len(qubits)
    if positions is None:
        positions = [(1000.0 * i, 0.0) for i in range(n)]
    nodes = [Node(i, positions[i][0], positions[i][1], qubits[i]) for i in range(n)]
    channels = []
    for u, v, width, rate in edges:
        length = -math.log(rate) if rate > 0 else 50.0
        for _ in range(width):
            channels.append(Channel(len(channels), u, v, length, rate))
    return NetworkTopology(1.0, nodes, channels)


def all_simple_paths(topology, src, dst, max_hops):
    """Every loopless src-dst node sequence within the hop bound (DFS)."""
    out = []
    stack = [(src, (src,))]
    while stack:
        u, nodes = stack.pop()
        if u == dst:
            out.append(nodes)
            continue
        if len(nodes) - 1 >= max_hops:
            continue
        for v in topology.neighbors(u):
            if v not in nodes:
                stack.append((v, nodes + (v,)))
    return out


def brute_best_ext(topology, residual, src, dst, swap_rate, max_hops):
    """Maximum expected throughput over all simple paths within the hop
    bound, widths from the residual; None if no positive-width path."""
    best = None
    for nodes in all_simple_paths(topology, src, dst, max_hops):
        w = residual.width_of(nodes)
        if w < 1:
            continue
        rates = [topology.edge_rate(u, v) for u, v in zip(nodes, nodes[1:])]
        value = enum_ext(rates, w, swap_rate)
        if best is None or value > best[0] + 1e-15:
            best = (value, Path(nodes, w))
    return best


def fresh(topology):
    return ResidualState.fresh(topology)


def small_random_topology(seed, harsh=False):
    """Connected random graph in the generator's parameter regime (or a
    deliberately starved one when harsh)."""
    r = random.Random(seed)
    n = r.randint(5 if harsh else 6, 10)
    edges = {}
    order = list(range(n))
    r.shuffle(order)
    for i in range(1, n):
        u, v = order[i], order[r.randrange(i)]
        edges[(min(u, v), max(u, v))] = None
    for _ in range(r.randint(n // 2, 2 * n)):
        u, v = r.sample(range(n), 2)
        edges[(min(u, v), max(u, v))] = None
    if harsh:
        spec = [(u, v, r.randint(1, 4), r.uniform(0.3, 0.95)) for (u, v) in edges]
        qubits = [r.randint(2, 12) for _ in range(n)]
    else:
        spec = [(u, v, r.randint(3, 7), r.uniform(0.21, 0.92)) for (u, v) in edges]
        qubits = [r.randint(10, 14) for _ in range(n)]
    topo = build_topology(spec, qubits)
    q = r.choice([0.8, 0.9, 1.0])
    s, d = r.sample(range(n), 2)
    return topo, s, d, q
