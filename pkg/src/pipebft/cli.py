"""Command-line entry points: replica node, load generator, simulation
runner/bench sweep, genesis helper, and the kernel benchmark."""

import argparse
import asyncio
import signal
import sys

from . import ledger as ledger_mod
from .bench import (
    select_operating_point,
    sim_bench,
    write_reports_csv,
)
from .core import Config, load_config
from .simnet import TRACE_COMMITS, TRACE_FULL, SimScenario


def _parse_peers(spec):
    peers = []
    for part in spec.split(","):
        host, _, port = part.strip().rpartition(":")
        peers.append((host, int(port)))
    return peers


def _load_cfg(args, n):
    overrides = {"n": n, "replica_id": getattr(args, "id", None)}
    if args.config:
        return load_config(args.config, **{k: v for k, v in overrides.items() if v is not None})
    return Config(**{k: v for k, v in overrides.items() if v is not None})


def cmd_node(args):
    if args.mode == "sim":
        # the whole replica set runs inside the simulator instead of over TCP
        if not args.scenario:
            print("error: --mode sim requires --scenario", file=sys.stderr)
            return 2
        args.rates = str(args.rate)
        args.full_trace = False
        args.batch_size = 32768
        args.tx_bytes = 400 if args.tx_kind == "transfer" else 128
        args.mode = "pipelined"
        return cmd_sim(args)
    from .tcpnode import Node

    if not args.peers or args.id is None:
        print("error: --mode tcp requires --id and --peers", file=sys.stderr)
        return 2
    peers = _parse_peers(args.peers)
    try:
        cfg = _load_cfg(args, len(peers))
    except Exception as exc:  # bad config is an operator error, not a crash
        print(f"error: {exc}", file=sys.stderr)
        return 2
    app = None
    if args.tx_kind == "transfer":
        genesis = ledger_mod.load_genesis(args.genesis) if args.genesis else {}
        app = ledger_mod.LedgerApp(genesis, verify=args.verify)
    node = Node(
        cfg,
        peers,
        app=app,
        tx_kind=args.tx_kind,
        verify=args.verify,
        verify_workers=args.verify_workers,
    )

    async def main():
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGTERM, signal.SIGINT):
            loop.add_signal_handler(sig, stop.set)
        replica = await node.run(stop)
        if args.out:
            replica.write_committed_csv(args.out)
        if app is not None and args.ledger_out:
            app.state.dump_csv(args.ledger_out)
        print(
            f"replica {cfg.replica_id}: committed {len(replica.committed_log)} epochs,"
            f" {sum(e.tx_count for e in replica.committed_log)} txs,"
            f" log {replica.log_fingerprint()[:16]}"
        )

    asyncio.run(main())
    return 0


def cmd_loadgen(args):
    from .tcpnode import LoadGen

    peers = _parse_peers(args.peers)
    keys = None
    if args.tx_kind == "transfer":
        keys = [
            ledger_mod.keypair_from_seed(f"client-{args.key_seed}-{i}".encode())
            for i in range(args.accounts)
        ]
    gen = LoadGen(
        peers,
        rate_tps=args.rate,
        duration=args.duration,
        tx_kind=args.tx_kind,
        tx_bytes=args.tx_bytes,
        keys=keys,
    )
    report = asyncio.run(gen.run())
    if args.out:
        write_reports_csv(args.out, [report])
    print(
        f"load {args.rate}/s for {args.duration}s: committed {report.committed_tx}"
        f" ({report.tx_per_s:.0f} tx/s, {report.goodput_mib_s:.2f} MiB/s),"
        f" mean latency {report.mean_latency_s * 1000:.1f} ms"
    )
    return 0


def cmd_sim(args):
    scenario = SimScenario.from_file(args.scenario)
    rates = [float(r) for r in args.rates.split(",")]
    reports = []
    for rate in rates:
        report, trace, _ = sim_bench(
            scenario,
            args.mode,
            duration=args.duration,
            load_tps=rate,
            tx_bytes=args.tx_bytes,
            batch_size=args.batch_size,
            trace_level=TRACE_FULL if args.full_trace else TRACE_COMMITS,
        )
        reports.append(report)
        print(
            f"load {rate:.0f}/s: {report.tx_per_s:.0f} tx/s,"
            f" {report.goodput_mib_s:.2f} MiB/s, mean latency"
            f" {report.mean_latency_s * 1000:.1f} ms, rejected {report.rejected}"
        )
        if args.out:
            with open(f"{args.out}.load{rate:g}.trace.csv", "w") as fh:
                fh.write(trace.to_csv())
    if args.out:
        write_reports_csv(f"{args.out}.reports.csv", reports)
    if len(reports) > 1:
        load, tput, lat = select_operating_point(reports)
        print(f"operating point: load {load:.0f}/s -> {tput:.0f} tx/s at {lat * 1000:.1f} ms")
    return 0


def cmd_make_genesis(args):
    genesis = {}
    for i in range(args.accounts):
        _, pub = ledger_mod.keypair_from_seed(f"client-{args.key_seed}-{i}".encode())
        genesis[pub] = args.balance
    ledger_mod.save_genesis(args.out, genesis)
    print(f"wrote {args.accounts} accounts x {args.balance} to {args.out}")
    return 0


def cmd_bench_kernels(args):
    from .bench_kernels import run_benchmark

    return run_benchmark(args.seconds, args.seed)


def main(argv=None):
    p = argparse.ArgumentParser(prog="pipebft")
    sub = p.add_subparsers(dest="cmd", required=True)

    node = sub.add_parser("node", help="run one replica over TCP (or the cluster in the simulator)")
    node.add_argument("--config", help="TOML config file")
    node.add_argument("--mode", choices=["tcp", "sim"], default="tcp")
    node.add_argument("--id", type=int)
    node.add_argument("--peers", help="host:port,host:port,... (index = replica id)")
    node.add_argument("--scenario", help="scenario TOML file (sim mode)")
    node.add_argument("--rate", type=float, default=1000.0, help="client load (sim mode)")
    node.add_argument("--duration", type=float, default=10.0, help="run length (sim mode)")
    node.add_argument("--tx-kind", choices=["raw", "transfer"], default="raw")
    node.add_argument("--genesis")
    node.add_argument("--verify", action=argparse.BooleanOptionalAction, default=True)
    node.add_argument("--verify-workers", type=int, default=2)
    node.add_argument("--out", help="committed-log CSV on shutdown")
    node.add_argument("--ledger-out", help="ledger balances CSV on shutdown")
    node.set_defaults(fn=cmd_node)

    load = sub.add_parser("loadgen", help="open-loop client load")
    load.add_argument("--peers", required=True)
    load.add_argument("--rate", type=float, required=True, help="aggregate tx/s")
    load.add_argument("--duration", type=float, required=True)
    load.add_argument("--tx-kind", choices=["raw", "transfer"], default="raw")
    load.add_argument("--tx-bytes", type=int, default=400)
    load.add_argument("--accounts", type=int, default=64)
    load.add_argument("--key-seed", default="0")
    load.add_argument("--out", help="bench report CSV")
    load.set_defaults(fn=cmd_loadgen)

    sim = sub.add_parser("sim", help="run the stack in the simulator")
    sim.add_argument("--scenario", required=True, help="scenario TOML file")
    sim.add_argument("--mode", choices=["pipelined", "sequential"], default="pipelined")
    sim.add_argument("--duration", type=float, default=10.0)
    sim.add_argument("--rates", default="1000", help="comma-separated loads to sweep")
    sim.add_argument("--tx-bytes", type=int, default=128)
    sim.add_argument("--batch-size", type=int, default=32768)
    sim.add_argument("--full-trace", action="store_true")
    sim.add_argument("--out", help="output file prefix")
    sim.set_defaults(fn=cmd_sim)

    gen = sub.add_parser("make-genesis", help="write a genesis allocation file")
    gen.add_argument("--accounts", type=int, default=64)
    gen.add_argument("--balance", type=int, default=1_000_000)
    gen.add_argument("--key-seed", default="0")
    gen.add_argument("--out", required=True)
    gen.set_defaults(fn=cmd_make_genesis)

    bk = sub.add_parser("bench-kernels", help="compare compiled vs pure kernels")
    bk.add_argument("--seconds", type=float, default=3.0, help="simulated seconds per run")
    bk.add_argument("--seed", type=int, default=7)
    bk.set_defaults(fn=cmd_bench_kernels)

    args = p.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
