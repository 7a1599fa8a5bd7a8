"""Differential tests: the compiled kernels must be observationally identical
to the pure-Python reference, message for message."""

import random

import pytest

import pipebft.binary as pure_binary
import pipebft.rbc as pure_rbc
from pipebft.core import Batch, Config, quorums

ck = pytest.importorskip("pipebft._ckernels")


def _outs_equal(a, b):
    assert len(a) == len(b)
    for (da, ea), (db, eb) in zip(a, b):
        assert da == db and ea == eb


@pytest.mark.parametrize("seed", range(120))
def test_rbc_differential(seed):
    rng = random.Random(seed)
    cfg = Config(n=4, batch_size_bytes=4096)
    q = quorums(cfg)
    pure = pure_rbc.RbcInstance(4, q, 0, 0, 1)
    comp = ck.RbcInstance(4, q, 0, 0, 1)
    digests = [bytes([i]) * 32 for i in range(3)]
    batch = Batch((b"v",), 0, 0)
    for _ in range(60):
        op = rng.randrange(4)
        sender = rng.randrange(4)
        d = rng.choice(digests)
        args_out = []
        comp_out = []
        if op == 0:
            ra = pure.on_batch(d, args_out)
            rb = comp.on_batch(d, comp_out)
        elif op == 1:
            ra = pure.on_echo(sender, d, args_out)
            rb = comp.on_echo(sender, d, comp_out)
        elif op == 2:
            ra = pure.on_ready(sender, d, args_out)
            rb = comp.on_ready(sender, d, comp_out)
        else:
            continue
        assert ra == rb
        _outs_equal(args_out, comp_out)
    assert pure.delivered == comp.delivered
    assert pure.echo_count == comp.echo_count
    assert pure.ready_count == comp.ready_count
    assert pure.equivocators == comp.equivocators


@pytest.mark.parametrize("seed", range(200))
def test_binary_differential(seed):
    rng = random.Random(seed)
    pure = pure_binary.BinInstance(4, 1, 0, 0, 2)
    comp = ck.BinInstance(4, 1, 0, 0, 2)
    proposed = False
    for _ in range(120):
        op = rng.randrange(6)
        sender = rng.randrange(4)
        b = rng.randrange(2)
        r = max(1, pure.round + rng.randrange(-1, 2))
        po, co = [], []
        if op == 0 and not proposed:
            proposed = True
            pure.propose(b, po)
            comp.propose(b, co)
        elif op == 1:
            pure.on_est(sender, r, b, po)
            comp.on_est(sender, r, b, co)
        elif op == 2:
            pure.on_aux(sender, r, b, po)
            comp.on_aux(sender, r, b, co)
        elif op == 3:
            pure.on_coord(sender, r, b, po)
            comp.on_coord(sender, r, b, co)
        elif op == 4:
            pure.on_decide(sender, b, po)
            comp.on_decide(sender, b, co)
        else:
            pure.on_deadline(pure.round, po)
            comp.on_deadline(comp.round, co)
        _outs_equal(po, co)
        assert pure.round == comp.round
        assert pure.decided == comp.decided
        assert pure.est == comp.est
        assert list(pure.cur.bin_values) == list(comp.cur.bin_values)


def test_full_simulation_traces_identical():
    from pipebft.bench_kernels import _one_run, pure_kernels
    from pipebft.simnet import TRACE_FULL

    _, _, trace_c, committed_c = _one_run(0.8, seed=13, trace_level=TRACE_FULL)
    with pure_kernels():
        _, _, trace_p, committed_p = _one_run(0.8, seed=13, trace_level=TRACE_FULL)
    assert committed_c == committed_p
    assert trace_c.to_csv() == trace_p.to_csv()
