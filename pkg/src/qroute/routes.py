"""Swap-decision machinery shared by the protocol P4 phases.

During P4 every node joins pairs of successful links on the paths it
serves; an end-to-end entanglement appears exactly when the chain of
pairings runs unbroken from source to destination.  Distributed
consistency comes from two rules applied everywhere:

* rank pairing — on a width-W path each node pairs the s-th smallest
  surviving channel id toward its predecessor with the s-th smallest
  toward its successor, for every s, so all nodes slice a width-W path
  into the same W strands without communicating;
* unconditional interiors — nodes strictly inside a detour (recovery or
  partial path) always pair their own links, whether or not the detour is
  adopted this slot.  A pairing on an unused detour wastes nothing (its
  links belong to the detour alone) and spares interiors from needing
  link state beyond their own edges.

Only the two anchor nodes of a detour redirect their pairings, and they
decide from link state within the detour's span, which the protocols keep
inside the k-hop view by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

from .metrics import Path
from .topology import NetworkTopology


@dataclass(frozen=True)
class PlannedPath:
    """A reserved end-to-end route serving one S-D pair."""

    pair_index: int
    path: Path
    bound: tuple[tuple[int, ...], ...]  # per hop, ascending channel ids

    @property
    def src(self) -> int:
        return self.path.nodes[0]

    @property
    def dst(self) -> int:
        return self.path.nodes[-1]

    @property
    def hops(self) -> int:
        return self.path.hops


@dataclass(frozen=True)
class SpanPath:
    """A reserved detour anchored to two nodes of one host path.

    ``path`` is oriented from the host node at index ``span[0]`` to the
    one at ``span[1]``.  ``order`` is the construction position, the
    global tie-break for adoption.
    """

    host: int
    span: tuple[int, int]
    path: Path
    bound: tuple[tuple[int, ...], ...]
    order: int

    @property
    def span_hops(self) -> int:
        return self.span[1] - self.span[0]


def survivors(ids: tuple[int, ...], outcomes: dict[int, bool]) -> list[int]:
    return [c for c in ids if outcomes[c]]


def rank(ids: tuple[int, ...], outcomes: dict[int, bool], s: int) -> int | None:
    """The s-th smallest surviving channel id (1-based), or None."""
    alive = survivors(ids, outcomes)
    return alive[s - 1] if len(alive) >= s else None


class DecisionSet:
    """Swap decisions: each entry joins two successful links at one node.

    A link may take part in at most one swap per node end; a second use is
    an internal error, never silently accepted.
    """

    def __init__(self):
        self.pairs: set[tuple[int, int, int]] = set()
        self._partner: dict[tuple[int, int], int] = {}

    def add(self, node: int, a: int, b: int):
        ka, kb = (node, a), (node, b)
        assert ka not in self._partner and kb not in self._partner, (
            f"link reused in a second swap at node {node}"
        )
        self._partner[ka] = b
        self._partner[kb] = a
        self.pairs.add((node, a, b) if a <= b else (node, b, a))

    def update(self, triples):
        for node, a, b in triples:
            self.add(node, a, b)

    def partner(self, node: int, c: int) -> int | None:
        return self._partner.get((node, c))


def interior_pairings(
    nodes: tuple[int, ...],
    bound: tuple[tuple[int, ...], ...],
    outcomes: dict[int, bool],
    only_node: int | None = None,
):
    """Rank pairings at every interior node of a standalone path."""
    for t in range(1, len(nodes) - 1):
        v = nodes[t]
        if only_node is not None and v != only_node:
            continue
        for a, b in zip(survivors(bound[t - 1], outcomes), survivors(bound[t], outcomes)):
            yield (v, a, b)


def major_pairings(
    major: PlannedPath,
    adopted: dict[int, list[SpanPath]],
    outcomes: dict[int, bool],
    only_node: int | None = None,
):
    """Pairings along a reserved path, honouring adopted detours.

    ``adopted[s]`` lists the detours strand s follows this slot; their
    spans are disjoint.  Anchor nodes splice the detour's first/last link
    (its rank-1 survivor) in place of the strand's own link; every other
    node pairs rank-s links as usual.
    """
    nodes = major.path.nodes
    h = major.hops
    for s in range(1, major.path.width + 1):
        start_at: dict[int, SpanPath] = {}
        end_at: dict[int, SpanPath] = {}
        for sp in adopted.get(s, ()):
            start_at[sp.span[0]] = sp
            end_at[sp.span[1]] = sp
        for t in range(1, h):
            v = nodes[t]
            if only_node is not None and v != only_node:
                continue
            if t in end_at:
                pred = rank(end_at[t].bound[-1], outcomes, 1)
            else:
                pred = rank(major.bound[t - 1], outcomes, s)
            if t in start_at:
                succ = rank(start_at[t].bound[0], outcomes, 1)
            else:
                succ = rank(major.bound[t], outcomes, s)
            if pred is not None and succ is not None:
                yield (v, pred, succ)


def strand_start(
    major: PlannedPath,
    s: int,
    adopted: dict[int, list[SpanPath]],
    outcomes: dict[int, bool],
) -> int | None:
    """The first link of strand s's route, or None when it dies at hop 0."""
    for sp in adopted.get(s, ()):
        if sp.span[0] == 0:
            return rank(sp.bound[0], outcomes, 1)
    return rank(major.bound[0], outcomes, s)


@dataclass(frozen=True)
class RouteStart:
    """One potential end-to-end chain for the engine to follow."""

    pair_index: int
    src: int
    dst: int
    channel: int | None  # None: the chain is dead before its first hop
    recovery_used: bool


def trace_route(
    topology: NetworkTopology,
    decisions: DecisionSet,
    src: int,
    channel: int,
) -> tuple[list[tuple[int, int, int]], int, int]:
    """Follow pairings from the source's first link.

    Returns (swap events as (node, in_channel, out_channel), final node,
    final channel).  The chain delivers an ebit only if the final node is
    the route's destination.
    """
    events = []
    v, c = src, channel
    for _ in range(2 * len(topology.channels) + 2):
        ch = topology.channels[c]
        v = ch.v if ch.u == v else ch.u
        nxt = decisions.partner(v, c)
        if nxt is None:
            return events, v, c
        events.append((v, c, nxt))
        c = nxt
    raise AssertionError("pairing chain does not terminate")
