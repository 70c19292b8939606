"""Operator entry point.

Subcommands: ``generate`` writes a calibrated topology (JSON + DOT),
``run`` simulates slots on a topology file, ``sweep`` varies one parameter
dimension with per-cell checkpointing, and ``fixtures`` replays the two
counterexample fixtures against their documented outcomes.

Configuration comes from a JSON file whose keys mirror SimConfig; flags
passed on the command line take precedence.  Exit codes: 0 success, 1
invalid configuration or arguments, 2 runtime failure, 3 fixture mismatch.
All outputs are byte-identical across reruns with the same seeds.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from .engine import ALGORITHMS, METRICS, Session, SimConfig
from .pathfind import EXT, MetricEvaluator, max_flow_width
from .qcast import QCastConfig, qcast_p2_select
from .reserve import ResidualState
from .stats import (
    aggregate,
    config_from_doc,
    sweep,
    write_aggregate_json,
    write_plot_data,
    write_slot_csv,
    write_sweep_csv,
)
from .topology import (
    CalibrationError,
    NetworkTopology,
    validation_fixture,
    generate_waxman,
)

_CONFIG_KEYS = (
    "n", "e_p", "q", "k", "e_d", "m", "algorithm", "metric", "slots",
    "recovery_enabled", "fairness_enabled", "seed", "fixed_pairs",
)
_INT_DIMENSIONS = {"n", "m"}


def _k_value(text: str) -> float:
    return math.inf if text.lower() == "inf" else float(text)


def _load_config_file(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config: expected a JSON object")
    for key in doc:
        if key not in _CONFIG_KEYS:
            raise ValueError(f"config: unknown key '{key}'")
    return doc


def _config(args) -> SimConfig:
    doc = {}
    if getattr(args, "config", None):
        doc.update(_load_config_file(args.config))
    for key in ("seed", "slots", "algorithm", "metric", "k"):
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    if getattr(args, "recovery", None) is not None:
        doc["recovery_enabled"] = args.recovery == "on"
    if getattr(args, "fairness", None) is not None:
        doc["fairness_enabled"] = args.fairness == "on"
    try:
        cfg = config_from_doc(doc)
    except TypeError as exc:
        raise ValueError(f"config: {exc}")
    cfg.validate()
    return cfg


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _workers(args) -> int:
    if getattr(args, "workers", None) is not None:
        return args.workers
    return int(os.environ.get("QROUTE_WORKERS", "1"))


# -- subcommands ---------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    try:
        topo = generate_waxman(cfg.n, cfg.e_d, cfg.e_p, seed=cfg.seed)
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return 2
    with open(os.path.join(out, "topology.json"), "w", encoding="utf-8") as fh:
        fh.write(topo.to_json())
    with open(os.path.join(out, "topology.dot"), "w", encoding="utf-8") as fh:
        fh.write(topo.to_dot())
    print(f"nodes {topo.n}, channels {len(topo.channels)}")
    print(f"realized mean degree {topo.mean_degree():.4f} (target {cfg.e_d})")
    print(f"realized mean rate {topo.mean_rate():.4f} (target {cfg.e_p})")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    with open(args.topology, encoding="utf-8") as fh:
        topo = NetworkTopology.from_json(fh.read())
    out = _out_dir(args)
    session = Session(topo, cfg)
    plans_dir = None
    if args.debug_plans:
        plans_dir = os.path.join(out, "plans")
        os.makedirs(plans_dir, exist_ok=True)
    outcomes = []
    for slot in range(cfg.slots):
        if plans_dir is not None:
            # document the plan before the slot runs: offline tables grow
            # during a slot, so planning after it could disagree
            doc = session.plan_document(slot)
            with open(os.path.join(plans_dir, f"slot-{slot:05d}.json"),
                      "w", encoding="utf-8") as fh:
                json.dump(doc, fh, sort_keys=True, indent=1)
        outcomes.append(session.run_slot(slot))
    write_slot_csv(os.path.join(out, "slots.csv"), outcomes)
    agg_path = os.path.join(out, "aggregate.json")
    if outcomes:
        result = aggregate(cfg, [outcomes])
        write_aggregate_json(agg_path, result)
        print(f"mean eps {result.mean_eps:.4f} over {cfg.slots} slots")
    else:
        with open(agg_path, "w", encoding="utf-8") as fh:
            json.dump({"slots": 0}, fh)
            fh.write("\n")
        print("no slots requested")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    dimension = args.dimension
    raw = [v for v in (args.values or "").split(",") if v.strip()]
    if not raw:
        raise ValueError("values: need a comma-separated list")
    values = []
    for text in raw:
        text = text.strip()
        if text.lower() == "inf":
            values.append(math.inf)
        elif dimension in _INT_DIMENSIONS:
            values.append(int(text))
        else:
            values.append(float(text))
    out = _out_dir(args)
    checkpoint = args.checkpoint or os.path.join(out, f"checkpoint-{dimension}.json")

    def progress(dim, value, done, total, error):
        note = f"error: {error}" if error else "ok"
        print(f"[{done}/{total}] {dim}={value} {note}", file=sys.stderr)

    cells = sweep(
        dimension, values, cfg,
        topologies=args.topologies,
        checkpoint_path=checkpoint,
        workers=_workers(args),
        progress=progress,
    )
    write_sweep_csv(os.path.join(out, f"sweep-{dimension}.csv"), cells)
    write_plot_data(os.path.join(out, f"plot-{dimension}.json"), cells)
    for cell in cells:
        if cell.result is not None:
            print(f"{dimension}={cell.value} mean_eps={cell.result.mean_eps:.4f}")
        else:
            print(f"{dimension}={cell.value} failed ({cell.error})")
    return 0


def cmd_fixtures(args) -> int:
    diffs = []

    def expect(name, wanted, got):
        if wanted != got:
            diffs.append(f"{name}: expected {wanted!r}, got {got!r}")

    evaluator = MetricEvaluator(EXT, 1.0)
    topo, s, t = validation_fixture(1)
    majors, _ = qcast_p2_select(topo, [(s, t)], evaluator, QCastConfig())
    expect(
        "example-1 selection",
        [((0, 1, 2, 7), 3)],
        [(m.path.nodes, m.path.width) for m in majors],
    )
    expect(
        "example-1 max flow width",
        6,
        max_flow_width(topo, ResidualState.fresh(topo), s, t),
    )

    topo, s, t = validation_fixture(2)
    majors, _ = qcast_p2_select(topo, [(s, t)], evaluator, QCastConfig())
    if not majors:
        diffs.append("example-2 selection: expected a path, got none")
    else:
        first = majors[0]
        expect("example-2 first selection",
               ((0, 1, 2, 7), 2), (first.path.nodes, first.path.width))
        value = evaluator.ext_value(topo, first.path.nodes, first.path.width)
        if abs(value - 0.63936) > 1e-9:
            diffs.append(f"example-2 value: expected 0.63936, got {value!r}")
        # the best achievable total over width-1 selections
        if not value > 0.4752:
            diffs.append(f"example-2 advantage: {value!r} is not above 0.4752")

    if diffs:
        for line in diffs:
            print(f"MISMATCH {line}", file=sys.stderr)
        return 3
    print("example-1 ok: single width-3 selection, max flow width 6")
    print("example-2 ok: width-2 selection beats any width-1 total")
    return 0


# -- parser --------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON config file mirroring SimConfig keys")
    parser.add_argument("--out", default="qroute-out", help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--slots", type=int)
    parser.add_argument("--algorithm", choices=ALGORITHMS)
    parser.add_argument("--metric", choices=METRICS)
    parser.add_argument("--k", type=_k_value, help="link-state range (inf allowed)")
    parser.add_argument("--recovery", choices=("on", "off"))
    parser.add_argument("--fairness", choices=("on", "off"))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qroute",
        description="entanglement routing simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write a calibrated topology")
    _add_common(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_run = sub.add_parser("run", help="simulate slots on a topology file")
    _add_common(p_run)
    p_run.add_argument("--topology", required=True, help="topology JSON file")
    p_run.add_argument("--debug-plans", action="store_true",
                       help="export per-slot plan documents")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="vary one parameter dimension")
    _add_common(p_sweep)
    p_sweep.add_argument("--dimension", required=True,
                         choices=("n", "e_p", "q", "k", "e_d", "m"))
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values (inf allowed for k)")
    p_sweep.add_argument("--topologies", type=int, default=1)
    p_sweep.add_argument("--checkpoint", help="checkpoint file (defaults into --out)")
    p_sweep.add_argument("--workers", type=int,
                         help="sweep worker processes (env QROUTE_WORKERS)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_fix = sub.add_parser("fixtures", help="replay the counterexample fixtures")
    p_fix.set_defaults(func=cmd_fixtures)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
