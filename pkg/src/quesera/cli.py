"""Experiment harness: run simulations, validate traces, sweep seeds.

Two commands.  ``run`` executes one reproducible simulation (or a store-backed
client run for --layer qscod) and prints its metrics line, optionally the
validator verdict and a serialized trace.  ``sweep`` repeats a configuration
across consecutive seeds and prints per-seed metrics plus an aggregate commit
rate, which is how the liveness numbers are measured.
"""

from __future__ import annotations

import argparse
import sys
import threading
from typing import Optional

from . import netsim, qscod
from .netsim import Metrics, SimConfig
from .qsc import check_consensus
from .tlcr import ConfigError
from .tsb import (
    RunTrace,
    validate_delivery,
    validate_fifo,
    validate_layer,
    validate_substeps,
)

_SUBSTEPS = {  # outer layer -> inner layers consumed per call
    "tlcb": (("tlcb", "tlcr", 2),),
    "tlcf": (("tlcf", "tlcw", 1), ("tlcf", "tlcr", 1)),
}


def parse_crash(text: str) -> tuple[int, int, str]:
    """Crash specs look like 2@5b: node 2, wire step 5, before the send
    (b) or right after it (a)."""
    try:
        node_part, rest = text.split("@", 1)
        phase = {"b": "before", "a": "after"}[rest[-1]]
        return int(node_part), int(rest[:-1]), phase
    except (ValueError, KeyError, IndexError):
        raise argparse.ArgumentTypeError(
            f"bad crash spec {text!r}, want NODE@STEP{{b|a}} like 2@5b"
        ) from None


def validate_trace(trace: RunTrace, consensus: bool) -> list[str]:
    """Full validator panel for everything the trace recorded."""
    problems: list[str] = []
    if trace.rets:
        for name, params in trace.layers.items():
            problems += validate_layer(trace, name, full_spread=params.t_s == trace.n)
        for outer, inner, per_step in _SUBSTEPS.get(trace.top_layer, ()):
            if inner in trace.layers:
                problems += validate_substeps(trace, outer, inner, per_step)
    if trace.xmits:
        problems += validate_fifo(trace)
        problems += validate_delivery(trace)
    if consensus:
        problems += check_consensus(trace)
    return problems


def build_config(args: argparse.Namespace, seed: int) -> SimConfig:
    return SimConfig(
        layer=args.layer,
        n=args.n,
        seed=seed,
        rounds=args.rounds,
        f=args.f,
        t_r=args.t_r,
        t_b=args.t_b,
        t_s=args.t_s,
        delay=args.delay,
        delay_scale=args.delay_scale,
        crashes=tuple(args.crash or ()),
        defer_future=args.defer_future,
        trace_level=args.trace_level,
    )


def _run_qscod(args: argparse.Namespace, seed: int) -> tuple[Metrics, list[str]]:
    """Store-backed client run shaped into the common metrics record."""
    params = qscod.qscod_params(args.n, args.f if args.f else None,
                                args.t_r, args.t_s, args.t_b)
    tally = qscod.ByteTally()
    raw = [qscod.MemoryStore() for _ in range(args.n)]
    stores = [qscod.CountingStore(s, tally) for s in raw]
    clients = [
        qscod.Client(cid, stores, params, netsim.mix64(seed, cid))
        for cid in range(args.clients)
    ]
    reports: list[Optional[qscod.ClientReport]] = [None] * args.clients

    def drive(cid: int) -> None:
        workload = [b"c%d-m%d" % (cid, k) for k in range(args.messages)]
        reports[cid] = clients[cid].run(workload, args.rounds)

    threads = [threading.Thread(target=drive, args=(cid,)) for cid in range(args.clients)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for c in clients:
        c.close()
    done = [r for r in reports if r is not None]
    problems = qscod.audit(raw, params, done)
    metrics = Metrics(
        layer="qscod",
        n=args.n,
        f=params.f,
        seed=seed,
        rounds=sum(r.rounds for r in done),
        commits=sum(r.commits for r in done),
        unicasts=tally.ops,
        bytes=tally.total,
    )
    return metrics, problems


def cmd_run(args: argparse.Namespace) -> int:
    if args.layer == "qscod":
        metrics, problems = _run_qscod(args, args.seed)
        trace_text = None
    else:
        result = netsim.run(build_config(args, args.seed))
        metrics = result.metrics
        problems = validate_trace(result.trace, args.layer.startswith("qsc-")) if args.validate else []
        trace_text = result.trace.serialize(include_transport=args.trace_level == "full")
        if args.trace_out:
            with open(args.trace_out, "w", encoding="ascii") as fh:
                fh.write(trace_text)
    print(metrics.line())
    if args.validate:
        print(f"validate={'ok' if not problems else 'FAIL'}")
        for p in problems:
            print(f"violation: {p}")
    return 1 if problems else 0


def cmd_sweep(args: argparse.Namespace) -> int:
    total_rounds = 0
    total_commits = 0
    failures = 0
    for k in range(args.seeds):
        seed = args.seed + k
        if args.layer == "qscod":
            metrics, problems = _run_qscod(args, seed)
        else:
            result = netsim.run(build_config(args, seed))
            metrics = result.metrics
            problems = validate_trace(result.trace, args.layer.startswith("qsc-")) if args.validate else []
        print(metrics.line())
        for p in problems:
            print(f"violation: seed={seed} {p}")
        failures += bool(problems)
        total_rounds += metrics.rounds * (1 if args.layer == "qscod" else args.n)
        total_commits += metrics.commits
    rate = total_commits / total_rounds if total_rounds else 0.0
    print(
        f"aggregate seeds={args.seeds} rounds={total_rounds} "
        f"commits={total_commits} rate={rate:.4f} "
        f"validate={'ok' if not failures else 'FAIL'}"
    )
    return 1 if failures else 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="qsc-sim",
        description="Deterministic consensus/broadcast simulations and seed sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--layer", required=True, choices=netsim.LAYERS + ("qscod",))
        p.add_argument("--n", type=int, default=3, help="nodes (or stores for qscod)")
        p.add_argument("--f", type=int, default=0, help="tolerated crashes")
        p.add_argument("--rounds", type=int, default=10)
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--t-r", type=int, dest="t_r")
        p.add_argument("--t-b", type=int, dest="t_b")
        p.add_argument("--t-s", type=int, dest="t_s")
        p.add_argument("--delay", choices=netsim.DELAY_POLICIES, default="random")
        p.add_argument("--delay-scale", type=int, default=4)
        p.add_argument("--crash", action="append", type=parse_crash, metavar="N@Sb|a")
        p.add_argument("--defer-future", action="store_true",
                       help="buffer early messages instead of piggybacking sets")
        p.add_argument("--trace-level", choices=netsim.TRACE_LEVELS, default="full")
        p.add_argument("--validate", action="store_true")
        p.add_argument("--clients", type=int, default=1, help="qscod only")
        p.add_argument("--messages", type=int, default=4, help="qscod only")

    p_run = sub.add_parser("run", help="one simulation")
    common(p_run)
    p_run.add_argument("--trace-out", help="write the serialized trace here")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="same configuration across seeds")
    common(p_sweep)
    p_sweep.add_argument("--seeds", type=int, default=10, help="seed count (seed, seed+1, ...)")
    p_sweep.set_defaults(func=cmd_sweep)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        parser.exit(2, f"{parser.prog}: error: {exc}\n")


if __name__ == "__main__":
    raise SystemExit(main())
