"""Benchmark the compiled kernels against the pure-Python reference.

Runs the identical simulated workload under both backends (swapping the
kernel bindings in-process), checks the traces agree, and reports events/s.
"""

import time
from contextlib import contextmanager

from . import binary as _binary
from . import epoch as _epoch
from . import rbc as _rbc
from . import simnet as _simnet
from .bench import sim_bench
from .kernels import BACKEND
from .simnet import SimScenario, TRACE_COMMITS, TRACE_FULL


@contextmanager
def pure_kernels():
    """Rebind the kernel entry points to the pure-Python reference."""
    saved = (_epoch.RbcInstance, _epoch.BinInstance, _simnet.SimLinkEngine)
    _epoch.RbcInstance = _rbc.RbcInstance
    _epoch.BinInstance = _binary.BinInstance
    _simnet.SimLinkEngine = None
    try:
        yield
    finally:
        _epoch.RbcInstance, _epoch.BinInstance, _simnet.SimLinkEngine = saved


def _scenario(seed):
    return SimScenario.regions(
        16, 4, intra_latency=0.005, inter_latency=0.04,
        bandwidth=20 * 1024 * 1024, seed=seed,
    )


def _one_run(seconds, seed, trace_level=None):
    t0 = time.perf_counter()
    report, trace, replicas = sim_bench(
        _scenario(seed), "pipelined", duration=seconds, load_tps=2000, tx_bytes=128,
        batch_size=8192, pool_timeout=0.2,
        trace_level=trace_level or TRACE_COMMITS,
    )
    wall = time.perf_counter() - t0
    net_events = replicas[0].services.net.seq_total()
    return wall, net_events, trace, report.committed_tx


def run_benchmark(seconds=3.0, seed=7):
    if BACKEND != "compiled":
        wall, events, _, committed = _one_run(seconds, seed, None)
        print(
            f"pure-python only (compiled kernels unavailable):"
            f" {events / wall / 1e6:.2f} M events/s ({committed} tx committed)"
        )
        return 0
    wall_c, events_c, _, committed = _one_run(seconds, seed, None)
    with pure_kernels():
        wall_p, events_p, _, _ = _one_run(seconds, seed, None)
    # equivalence check on a short run with full delivery recording
    _, _, trace_c, _ = _one_run(min(seconds, 1.0), seed, TRACE_FULL)
    with pure_kernels():
        _, _, trace_p, _ = _one_run(min(seconds, 1.0), seed, TRACE_FULL)
    match = trace_c.to_csv() == trace_p.to_csv()
    print(f"workload: n=16, {seconds} simulated seconds, {events_c} scheduled events")
    print(f"compiled: {wall_c:.2f}s  ({events_c / wall_c / 1e6:.2f} M events/s)")
    print(f"pure:     {wall_p:.2f}s  ({events_p / wall_p / 1e6:.2f} M events/s)")
    print(f"speedup:  {wall_p / wall_c:.2f}x   traces identical: {match}")
    return 0 if match else 1
