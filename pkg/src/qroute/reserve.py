"""Slot-local resource accounting: free qubits and unbound channels.

Reservations only ever consume resources within a slot; nothing is
released until the next slot starts from a fresh state.  Channels on an
edge are interchangeable until bound, so the residual tracks a cursor into
each edge's id-sorted channel list and binding always hands out the
lowest free ids.
"""

from __future__ import annotations

from dataclasses import dataclass

from .metrics import Path, path_width
from .topology import NetworkTopology


@dataclass
class ResidualState:
    topology: NetworkTopology
    free_qubits: list[int]
    bound_count: dict[tuple[int, int], int]

    @classmethod
    def fresh(cls, topology: NetworkTopology) -> "ResidualState":
        return cls(
            topology,
            [nd.qubits for nd in topology.nodes],
            {edge: 0 for edge in topology.edges},
        )

    def clone(self) -> "ResidualState":
        return ResidualState(
            self.topology, list(self.free_qubits), dict(self.bound_count)
        )

    def free_channels(self, u: int, v: int) -> int:
        key = (u, v) if u < v else (v, u)
        got = self.topology.edge_stats.get(key)
        if got is None:
            return 0
        return got[0] - self.bound_count[key]

    def width_of(self, nodes: tuple[int, ...]) -> int:
        return path_width(
            nodes, self.free_qubits.__getitem__, self.free_channels
        )

    def bind(self, u: int, v: int, count: int) -> list[int]:
        """Bind the ``count`` lowest-id free channels on edge (u, v)."""
        key = (u, v) if u < v else (v, u)
        ids = self.topology.edges[key]
        used = self.bound_count[key]
        if used + count > len(ids):
            raise ValueError(f"edge {key} has {len(ids) - used} free channels, need {count}")
        self.bound_count[key] = used + count
        return ids[used : used + count]

    def total_bound(self) -> int:
        return sum(self.bound_count.values())

    def check_non_negative(self):
        for q in self.free_qubits:
            assert q >= 0, "qubit capacity violated"
        for key, used in self.bound_count.items():
            assert 0 <= used <= len(self.topology.edges[key]), "channel capacity violated"


def reserve_path(residual: ResidualState, path: Path) -> list[list[int]]:
    """Reserve a path at its width: W qubits at the endpoints, 2W at each
    interior node, and the W lowest free channels on every hop.  Returns
    the bound channel ids per hop."""
    nodes, w = path.nodes, path.width
    if w < 1:
        raise ValueError("cannot reserve a zero-width path")
    if residual.width_of(nodes) < w:
        raise ValueError("insufficient residual capacity for reservation")
    residual.free_qubits[nodes[0]] -= w
    residual.free_qubits[nodes[-1]] -= w
    for u in nodes[1:-1]:
        residual.free_qubits[u] -= 2 * w
    bound = []
    for u, v in zip(nodes, nodes[1:]):
        bound.append(residual.bind(u, v, w))
    residual.check_non_negative()
    return bound
