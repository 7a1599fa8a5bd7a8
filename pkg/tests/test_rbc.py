"""Reliable-broadcast unit tests plus a seeded-schedule property harness with
an equivocating source."""

import random

import pytest

from pipebft.core import Batch, Config, digest, quorums
from pipebft.kernels import DuplicateStart, RbcInstance
from pipebft.messages import BATCH, ECHO, READY


def make(n=4, epoch=0, source=0, me=1):
    cfg = Config(n=n, batch_size_bytes=4096)
    return RbcInstance(n, quorums(cfg), epoch, source, me)


def kinds(out):
    return [env.kind for _, env in out]


def test_start_emits_batch_then_echo():
    inst = make(me=0, source=0)
    batch = Batch((b"t",), 0, 0)
    out = []
    inst.start(batch, digest(batch), out)
    assert kinds(out) == [BATCH, ECHO]
    assert out[0][0] is None and out[1][0] is None  # both broadcast
    assert out[1][1].payload == (0, digest(batch))


def test_start_twice_raises():
    inst = make(me=0, source=0)
    batch = Batch((), 0, 0)
    inst.start(batch, digest(batch), [])
    with pytest.raises(DuplicateStart):
        inst.start(batch, digest(batch), [])


def test_batch_triggers_single_echo():
    inst = make()
    d = bytes(32)
    out = []
    inst.on_batch(d, out)
    assert kinds(out) == [ECHO]
    out2 = []
    inst.on_batch(d, out2)  # duplicate batch: no second echo
    assert out2 == []


def test_echo_threshold_sends_ready():
    # n=4: three matching ECHOes force a READY
    inst = make()
    d = bytes(32)
    out = []
    for sender in (0, 2, 3):
        inst.on_echo(sender, d, out)
    assert kinds(out) == [READY]
    assert out[0][1].payload == (0, d)


def test_ready_amplification():
    # f+1 = 2 READYs amplify our own READY before any ECHO quorum
    inst = make()
    d = bytes(32)
    out = []
    inst.on_ready(0, d, out)
    assert out == []
    inst.on_ready(2, d, out)
    assert kinds(out) == [READY]


def test_delivery_without_payload():
    # 2f+1 = 3 READYs deliver even though the batch bytes never arrived
    inst = make()
    d = bytes(range(32))
    out = []
    assert inst.on_ready(0, d, out) is None
    assert inst.on_ready(2, d, out) is None
    delivered = inst.on_ready(3, d, out)
    assert delivered == d
    assert inst.batch_digest is None  # payload still unknown
    assert inst.delivered == d


def test_conflicting_digest_from_one_sender_ignored():
    inst = make()
    d1, d2 = bytes(32), bytes(range(32))
    out = []
    inst.on_echo(2, d1, out)
    inst.on_echo(2, d2, out)  # equivocation: second digest ignored
    assert inst.echo_count.get(d1) == 1
    assert d2 not in inst.echo_count
    assert 2 in inst.equivocators


def test_at_most_one_echo_and_ready():
    inst = make()
    d1, d2 = bytes(32), bytes(range(32))
    out = []
    inst.on_batch(d1, out)
    for s in (0, 1, 2):
        inst.on_echo(s, d2, out)
    for s in (0, 1, 2):
        inst.on_ready(s, d2, out)
    sent = [env.kind for _, env in out]
    assert sent.count(ECHO) == 1
    assert sent.count(READY) == 1


# -- seeded-schedule property harness -----------------------------------------


class RbcWorld:
    """n replicas running one RBC instance for a single source; the scheduler
    delivers pending broadcasts in seeded random order. The source may
    equivocate by sending different batches to different receivers."""

    def __init__(self, n, seed, equivocate=None):
        cfg = Config(n=n, batch_size_bytes=4096)
        self.n = n
        self.f = cfg.f
        self.q = quorums(cfg)
        self.rng = random.Random(seed)
        self.equivocate = equivocate  # None | "half" | "one"
        self.insts = [RbcInstance(n, self.q, 0, 0, me) for me in range(n)]
        self.queues = [[] for _ in range(n)]  # pending (kind, sender, digest)
        self.delivered = [None] * n

    def start(self):
        batch_a = Batch((b"value-a",), 0, 0)
        batch_b = Batch((b"value-b",), 0, 0)
        for me in range(self.n):
            if self.equivocate == "half":
                batch = batch_b if me % 2 else batch_a
            elif self.equivocate == "one":
                batch = batch_b if me == self.n - 1 else batch_a
            else:
                batch = batch_a
            self.queues[me].append((BATCH, 0, digest(batch)))

    def _emit(self, sender, out):
        for _, env in out:
            kind = env.kind
            d = env.payload[1]
            for dest in range(self.n):
                self.queues[dest].append((kind, sender, d))

    def step(self):
        busy = [i for i in range(self.n) if self.queues[i]]
        if not busy:
            return False
        i = self.rng.choice(busy)
        idx = self.rng.randrange(len(self.queues[i]))
        kind, sender, d = self.queues[i].pop(idx)
        inst = self.insts[i]
        out = []
        if kind == BATCH:
            got = inst.on_batch(d, out)
        elif kind == ECHO:
            got = inst.on_echo(sender, d, out)
        else:
            got = inst.on_ready(sender, d, out)
        if got is not None and self.delivered[i] is None:
            self.delivered[i] = got
        self._emit(i, out)
        return True

    def run(self, max_steps=100_000):
        self.start()
        steps = 0
        while self.step():
            steps += 1
            assert steps < max_steps, "schedule did not quiesce"


def check_equivocation_run(n, seed, split):
    w = RbcWorld(n, seed, equivocate=split)
    w.run()
    correct = [w.delivered[i] for i in range(1, n)]  # replica 0 is the liar
    chosen = {d for d in correct if d is not None}
    assert len(chosen) <= 1  # agreement: never two different digests
    if chosen:
        # totality: once one correct replica delivers, all eventually do
        assert all(d is not None for d in correct)


@pytest.mark.parametrize("split", ["one", "half"])
@pytest.mark.parametrize("seed", range(30))
def test_rbc_agreement_and_totality_under_equivocation(seed, split):
    check_equivocation_run(4, seed, split)


@pytest.mark.parametrize("seed", range(25))
def test_rbc_validity_honest_source(seed):
    w = RbcWorld(4, seed)
    w.run()
    expected = digest(Batch((b"value-a",), 0, 0))
    assert all(d == expected for d in w.delivered)
