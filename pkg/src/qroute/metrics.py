"""Path-quality metrics for entanglement routing.

The central quantity is the expected number of end-to-end entangled pairs
(ebits) a reserved path delivers in one time slot.  A path reserves ``W``
parallel channels on each of its ``h`` hops; during the slot each channel
on hop k succeeds independently with rate ``p_k``, and every swap at an
intermediate node succeeds with rate ``q``.  The number of end-to-end
chains is the minimum per-hop success count, and each chain survives its
``h - 1`` swaps with probability ``q**(h-1)``; by linearity the expectation
is computed here with the hop-recursive width distribution, weighting each
chain by ``q**h`` (the conventional per-hop swap discount, which also
covers the degenerate one-hop case).

Offline metrics (sum of hop lengths, creation rate, bottleneck capacity)
rank candidate paths when the slot-level distribution is too expensive to
evaluate for every candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import rng

INFINITE_COST = math.inf


@dataclass(frozen=True)
class Path:
    """A routing path: node ids in order plus the reserved width."""

    nodes: tuple[int, ...]
    width: int

    @property
    def hops(self) -> int:
        return len(self.nodes) - 1

    def edges(self) -> list[tuple[int, int]]:
        return [tuple(sorted(e)) for e in zip(self.nodes, self.nodes[1:])]


@dataclass(frozen=True)
class ExtParams:
    """Inputs to the expected-throughput evaluation of one (W, h)-path."""

    hop_rates: tuple[float, ...]  # per-hop channel success rate, length h
    width: int                    # channels reserved per hop
    swap_rate: float = 1.0        # q

    @property
    def hops(self) -> int:
        return len(self.hop_rates)


def binomial_pmf(width: int, p: float) -> list[float]:
    """P[exactly i of ``width`` channels succeed], i = 0..width."""
    qf = 1.0 - p
    return [math.comb(width, i) * p**i * qf ** (width - i) for i in range(width + 1)]


@lru_cache(maxsize=None)
def _pmf_and_tail(width: int, p: float) -> tuple[tuple[float, ...], tuple[float, ...]]:
    pmf = binomial_pmf(width, p)
    tail = list(pmf)
    for i in range(width - 1, -1, -1):
        tail[i] += tail[i + 1]
    return tuple(pmf), tuple(tail)


def extend_width_dist(prev: Sequence[float], width: int, p: float) -> list[float]:
    """One step of the width recursion.

    ``prev[i]`` is the probability the first k-1 hops form exactly an
    i-entangled prefix (i = 0..W).  Appending hop k with per-channel rate
    ``p`` gives width i when either the prefix already had width i and the
    new hop has at least i successes, or the new hop has exactly i
    successes and the prefix was strictly wider.
    """
    qk, qk_tail = _pmf_and_tail(width, p)
    out = [0.0] * (width + 1)
    above_prev = 0.0
    for i in range(width, 0, -1):
        out[i] = prev[i] * qk_tail[i] + qk[i] * above_prev
        above_prev += prev[i]
    out[0] = max(0.0, 1.0 - sum(out[1:]))
    return out


def ext_distribution(params: ExtParams) -> list[float]:
    """Distribution of the delivered path width after all hops.

    Returns ``dist`` of length W+1 where ``dist[i]`` is the probability
    that exactly i end-to-end channel chains survive the slot's link
    attempts (swaps not yet applied).  O(h·W) time, O(W) space.
    """
    if params.width < 1:
        raise ValueError("width must be >= 1")
    if not params.hop_rates:
        raise ValueError("at least one hop required")
    for p in params.hop_rates:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"hop rate {p} outside [0, 1]")
    dist = binomial_pmf(params.width, params.hop_rates[0])
    for p in params.hop_rates[1:]:
        dist = extend_width_dist(dist, params.width, p)
    return dist


def ext_from_dist(dist: Sequence[float], hops: int, swap_rate: float) -> float:
    mean_width = sum(i * pi for i, pi in enumerate(dist))
    return swap_rate**hops * mean_width


def ext(params: ExtParams) -> float:
    """Expected delivered ebits: q**h * sum_i i * P[width = i]."""
    return ext_from_dist(ext_distribution(params), params.hops, params.swap_rate)


def sum_dist(hop_lengths: Sequence[float]) -> float:
    """Total physical length of the path."""
    return float(sum(hop_lengths))


def creation_rate(hop_rates: Sequence[float]) -> float:
    """Sum of expected attempts per hop, 1/p_i; infinite if any hop is dead."""
    total = 0.0
    for p in hop_rates:
        if p <= 0.0:
            return INFINITE_COST
        total += 1.0 / p
    return total


def bot_cap(width: int, hop_rates: Sequence[float]) -> tuple[float, float]:
    """Bottleneck-capacity cost key: wider is better, creation rate breaks
    ties.  Smaller key = better path."""
    return (-float(width), creation_rate(hop_rates))


def path_width(
    nodes: Sequence[int],
    free_qubits: Callable[[int], int],
    free_channels: Callable[[int, int], int],
) -> int:
    """Largest width at which the path is reservable.

    A width-W reservation needs W free channels on every hop, W free qubits
    at both endpoints, and 2W at every intermediate node (one qubit per
    channel on each side).
    """
    if len(nodes) < 2:
        raise ValueError("path needs at least two nodes")
    w = min(free_channels(u, v) for u, v in zip(nodes, nodes[1:]))
    w = min(w, free_qubits(nodes[0]), free_qubits(nodes[-1]))
    for u in nodes[1:-1]:
        w = min(w, free_qubits(u) // 2)
    return max(w, 0)


def simulate_path_trials(
    params: ExtParams, trials: int, seed: int, batch: int = 1 << 16
) -> tuple[float, float]:
    """Monte-Carlo estimate of expected ebits for a standalone path.

    Simulates ``trials`` independent slots: per-hop channel successes are
    Bernoulli draws, end-to-end chains are the per-hop minimum, and each
    chain survives its swaps with rate q**h.  Returns (mean, standard
    error of the mean).
    """
    h, w, q = params.hops, params.width, params.swap_rate
    rates = np.asarray(params.hop_rates)[None, :, None]
    total = 0.0
    total_sq = 0.0
    done = 0
    gen = rng.generator(seed, "path-trials")
    while done < trials:
        nb = min(batch, trials - done)
        hits = gen.random((nb, h, w)) < rates
        chains = hits.sum(axis=2).min(axis=1)
        if q >= 1.0:
            ebits = chains.astype(np.float64)
        else:
            swaps = gen.random((nb, w)) < q**h
            idx = np.arange(w)[None, :] < chains[:, None]
            ebits = (swaps & idx).sum(axis=1).astype(np.float64)
        total += float(ebits.sum())
        total_sq += float((ebits**2).sum())
        done += nb
    mean = total / trials
    var = max(total_sq / trials - mean**2, 0.0)
    return mean, math.sqrt(var / trials)
