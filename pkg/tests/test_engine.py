"""Slot engine: keyed draws, per-slot composition, bookkeeping invariants."""

import json
import math

import pytest

from qroute import rng
from qroute.engine import (
    ALGORITHMS,
    Session,
    SimConfig,
    disseminate,
    draw_sd_pairs,
    fairness_adjust,
    fairness_factor,
    realize_links,
)
from qroute.pathfind import CR, EXT, MetricEvaluator

from conftest import build_topology, enum_ext, small_random_topology


def chain(widths, rates, qubits):
    edges = [(i, i + 1, w, r) for i, (w, r) in enumerate(zip(widths, rates))]
    return build_topology(edges, qubits)


# -- end-to-end delivery rates ----------------------------------------------


def test_two_hop_delivery_charges_swaps_at_every_non_source_node():
    # width-1 two-hop chain: both links up AND a swap at the relay AND the
    # terminal acceptance at dst -> p^2 * q^2 = 0.2916
    topo = chain([1, 1], [0.6, 0.6], [1, 2, 1])
    cfg = SimConfig(
        n=3, m=1, algorithm="greedy", q=0.9, slots=40_000, k=math.inf,
        fixed_pairs=((0, 2),), seed=11,
    )
    outcomes = Session(topo, cfg).run()
    mean = sum(o.eps for o in outcomes) / len(outcomes)
    se = math.sqrt(0.2916 * (1 - 0.2916) / len(outcomes))
    assert abs(mean - 0.2916) < 3 * se


def test_three_hop_width_two_delivery_matches_expected_throughput():
    # the disconnected side chain 4-5-6-7 exists only to pull the calibrated
    # hop bound up to 3; it offers (0, 3) no route
    topo = build_topology(
        [(0, 1, 2, 0.6), (1, 2, 2, 0.6), (2, 3, 2, 0.6),
         (4, 5, 3, 0.95), (5, 6, 3, 0.95), (6, 7, 3, 0.95)],
        [2, 4, 4, 2, 6, 6, 6, 6],
    )
    expected = enum_ext([0.6, 0.6, 0.6], 2, q=1.0)
    assert expected == pytest.approx(0.63936)
    cfg = SimConfig(
        n=8, m=1, algorithm="qcast", q=1.0, slots=30_000,
        fixed_pairs=((0, 3),), seed=4,
    )
    session = Session(topo, cfg)
    assert session.qcast_config.h_m == 3
    outcomes = session.run()
    mean = sum(o.eps for o in outcomes) / len(outcomes)
    # ebits per slot is bounded by the width, so variance <= E[X^2] <= 2E[X]
    se = math.sqrt(2 * expected / len(outcomes))
    assert abs(mean - expected) < 3 * se


# -- determinism --------------------------------------------------------------


def test_identical_seeds_reproduce_every_outcome():
    topo, _, _, q = small_random_topology(3)
    for alg in ALGORITHMS:
        cfg = SimConfig(n=topo.n, m=2, algorithm=alg, q=q, k=2, slots=15, seed=5)
        first = Session(topo, cfg).run()
        second = Session(topo, cfg).run()
        assert first == second, alg


def test_fresh_session_replays_single_slot():
    # slot draws are keyed by index, so a cold session reproduces any slot
    topo, _, _, _ = small_random_topology(8)
    cfg = SimConfig(
        n=topo.n, m=2, algorithm="qcast", q=0.9, slots=10, seed=2,
        fixed_pairs=((0, topo.n - 1), (1, topo.n - 2)),
    )
    full = Session(topo, cfg).run()
    for slot in (0, 4, 9):
        assert Session(topo, cfg).run_slot(slot) == full[slot]


# -- bookkeeping invariants ---------------------------------------------------


def test_slot_tallies_stay_within_reserved_capacity():
    for seed in range(6):
        topo, _, _, q = small_random_topology(seed, harsh=True)
        for alg in ("qcast", "qpass"):
            cfg = SimConfig(n=topo.n, m=2, algorithm=alg, q=q, slots=40, seed=seed)
            for out in Session(topo, cfg).run():
                assert len(out.pairs) == 2
                assert len(out.ebits) == len(out.recovered) == len(out.paths) == 2
                for e, r, p in zip(out.ebits, out.recovered, out.paths):
                    assert 0 <= r <= e <= p
                assert sum(out.paths) <= out.channels_bound


def test_delivery_happens_on_a_friendly_topology():
    topo, _, _, _ = small_random_topology(1)
    for alg in ALGORITHMS:
        cfg = SimConfig(n=topo.n, m=2, algorithm=alg, q=0.9, slots=60, seed=7)
        outcomes = Session(topo, cfg).run()
        assert sum(o.eps for o in outcomes) > 0, alg


def test_recovery_toggle_never_loses_a_slot_end_to_end():
    hits = 0
    for seed in (0, 2, 5):
        topo, _, _, _ = small_random_topology(seed, harsh=True)
        for alg in ("qcast", "qpass"):
            runs = {}
            for flag in (True, False):
                cfg = SimConfig(
                    n=topo.n, m=2, algorithm=alg, q=0.9, slots=120,
                    seed=seed, recovery_enabled=flag,
                )
                runs[flag] = Session(topo, cfg).run()
            assert all(a.eps >= b.eps for a, b in zip(runs[True], runs[False]))
            hits += sum(a.eps - b.eps for a, b in zip(runs[True], runs[False]))
    assert hits > 0


# -- slot ingredients ----------------------------------------------------------


def test_draw_sd_pairs_are_distinct_and_normalized():
    topo = chain([1] * 7, [0.9] * 7, [2] * 8)
    pairs = draw_sd_pairs(topo, 5, rng.substream(0, "p1", 3))
    assert len(pairs) == len(set(pairs)) == 5
    assert all(u < v for u, v in pairs)
    assert pairs == draw_sd_pairs(topo, 5, rng.substream(0, "p1", 3))
    assert pairs != draw_sd_pairs(topo, 5, rng.substream(0, "p1", 4))
    with pytest.raises(ValueError):
        draw_sd_pairs(topo, 29, rng.substream(0, "p1", 0))


def test_realize_links_extremes_and_frequency():
    topo = build_topology([(0, 1, 1, 1.0), (1, 2, 8, 0.6), (2, 3, 1, 1e-300)],
                          [4, 8, 8, 4])
    all_ids = range(len(topo.channels))
    ups = 0
    for slot in range(2000):
        got = realize_links(topo, all_ids, seed=9, slot=slot)
        assert got[0] is True
        assert got[9] is False
        ups += sum(got[c] for c in range(1, 9))
    freq = ups / (2000 * 8)
    assert abs(freq - 0.6) < 0.012  # 3 sigma
    assert realize_links(topo, all_ids, 9, 77) == realize_links(topo, all_ids, 9, 77)


def test_disseminate_views_grow_with_k():
    topo = chain([1, 1, 1], [0.9, 0.9, 0.9], [2, 2, 2, 2])
    outcomes = {0: True, 1: False, 2: True}
    near = disseminate(topo, outcomes, 0)
    assert near[0] == {0: True}
    assert near[1] == {0: True, 1: False}
    one = disseminate(topo, outcomes, 1)
    assert one[0] == {0: True, 1: False}
    # k at the diameter already sees everything
    assert disseminate(topo, outcomes, 3) == disseminate(topo, outcomes, math.inf)
    assert disseminate(topo, outcomes, math.inf)[3] == outcomes


# -- configuration ------------------------------------------------------------


def test_config_validation_points_at_the_bad_field():
    bad = [
        (dict(n=1), "n:"),
        (dict(e_p=0.0), "e_p:"),
        (dict(q=1.5), "q:"),
        (dict(k=-1), "k:"),
        (dict(k=2.5), "k:"),
        (dict(e_d=0.0), "e_d:"),
        (dict(m=0), "m:"),
        (dict(n=3, m=4), "m:"),
        (dict(algorithm="dijkstra"), "algorithm:"),
        (dict(metric="hops"), "metric:"),
        (dict(slots=-1), "slots:"),
        (dict(m=2, fixed_pairs=((0, 1),)), "fixed_pairs:"),
        (dict(m=1, fixed_pairs=((3, 3),)), "fixed_pairs:"),
        (dict(m=1, fixed_pairs=((0, 99),)), "fixed_pairs:"),
    ]
    for overrides, prefix in bad:
        with pytest.raises(ValueError, match=prefix):
            SimConfig(**overrides).validate()
    SimConfig(k=math.inf).validate()
    topo = chain([1, 1], [0.9, 0.9], [2, 2, 2])
    with pytest.raises(ValueError, match="n:"):
        Session(topo, SimConfig(n=5, m=1))


def test_fairness_boost_shapes():
    assert fairness_factor(0) == 1.0
    assert fairness_factor(2) == pytest.approx(1.21)
    cr = MetricEvaluator(CR, 0.9)
    assert fairness_adjust(cr, (2.5,), 1) == (2.5 / 1.1,)
    ext = MetricEvaluator(EXT, 0.9)
    boosted = fairness_adjust(ext, (-0.5,), 2)
    assert boosted[0] == pytest.approx(-0.605)
    assert fairness_adjust(cr, (2.5,), 0) == (2.5,)


def test_fairness_streaks_track_starved_pairs():
    # node 3 is disconnected: pair (1, 3) can never be served
    topo = build_topology([(0, 1, 1, 1.0), (1, 2, 1, 1.0)], [2, 4, 2, 2])
    cfg = SimConfig(
        n=4, m=2, algorithm="qcast", q=1.0, slots=5, seed=0,
        fixed_pairs=((0, 2), (1, 3)), fairness_enabled=True,
    )
    session = Session(topo, cfg)
    outcomes = session.run()
    assert session.streaks[(1, 3)] == 5
    assert session.streaks[(0, 2)] == 0
    assert all(o.ebits == [1, 0] for o in outcomes)


# -- plan inspection -----------------------------------------------------------


def test_plan_document_is_serializable_and_consistent():
    topo, _, _, _ = small_random_topology(4)
    cfg = SimConfig(
        n=topo.n, m=1, algorithm="qcast", q=0.9, slots=3, seed=6,
        fixed_pairs=((0, topo.n - 1),),
    )
    session = Session(topo, cfg)
    out = session.run_slot(1)
    doc = session.plan_document(1)
    json.dumps(doc)  # must be plain data
    assert len(doc["channels_bound"]) == out.channels_bound
    assert doc["channels_bound"] == sorted(doc["channels_bound"])
    for major in doc["majors"]:
        assert major["width"] >= 1
        assert len(major["nodes"]) >= 2
