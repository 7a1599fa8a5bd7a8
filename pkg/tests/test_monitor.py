import pytest
from hypothesis import given, strategies as st

from pipebft.core import Config
from pipebft.monitor import (
    IdleDetector,
    InsufficientSamples,
    TxPool,
    epoch_budget,
    spawn_ready,
)

MIB = 1024 * 1024


def test_pool_accepts_until_capacity():
    pool = TxPool(1000)
    assert pool.offer(b"x" * 400, now=0.0)
    assert pool.byte_size == 400
    assert not pool.full()
    assert pool.offer(b"x" * 400, now=0.1)
    # the crossing transaction is accepted and closes the batch
    assert pool.offer(b"x" * 400, now=0.2)
    assert pool.full()
    assert pool.byte_size == 1200  # capacity + less than one tx over


def test_full_pool_rejects():
    pool = TxPool(800)
    assert pool.offer(b"x" * 800, now=0.0)
    assert pool.full()
    assert not pool.offer(b"y", now=0.1)  # client must retry


def test_pool_rejects_oversized_and_empty():
    pool = TxPool(100)
    assert not pool.offer(b"", now=0.0)
    assert not pool.offer(b"z" * 101, now=0.0)


def test_pool_drain_resets():
    pool = TxPool(100)
    pool.offer(b"ab", now=1.0)
    pool.offer(b"cd", now=2.0)
    assert pool.opened_at == 1.0
    assert pool.drain() == (b"ab", b"cd")
    assert pool.byte_size == 0 and len(pool) == 0 and pool.opened_at is None


def test_pool_overdue():
    pool = TxPool(100)
    assert not pool.overdue(now=10.0, timeout=0.5)  # empty pool never overdue
    pool.offer(b"x", now=10.0)
    assert not pool.overdue(now=10.4, timeout=0.5)
    assert pool.overdue(now=10.5, timeout=0.5)


def test_idle_examples():
    det = IdleDetector(600 * MIB, 0.05, 3)
    for s in (10 * MIB, 12 * MIB, 8 * MIB):
        det.add(s)
    assert det.is_idle()  # mean 10 MiB/s < 30 MiB/s
    det = IdleDetector(600 * MIB, 0.05, 3)
    for s in (40 * MIB, 20 * MIB, 35 * MIB):
        det.add(s)
    assert not det.is_idle()  # mean 31.7 MiB/s >= 30 MiB/s


def test_idle_warmup_guard():
    det = IdleDetector(600 * MIB, 0.05, 3)
    det.add(0.0)
    det.add(0.0)
    assert not det.warmed_up()
    with pytest.raises(InsufficientSamples):
        det.is_idle()


def test_idle_window_slides():
    det = IdleDetector(100, 0.05, 3)  # threshold 5
    for s in (100, 100, 100):
        det.add(s)
    assert not det.is_idle()
    for s in (0, 0, 0):
        det.add(s)
    assert det.is_idle()  # only the last 3 samples count


def test_epoch_budget_examples():
    assert epoch_budget(Config(n=4, batch_size_bytes=6_250_000, max_epochs=12,
                               memory_budget_bytes=8 << 30)) == 12
    assert epoch_budget(Config(n=4, batch_size_bytes=25_000_000, max_epochs=12,
                               memory_budget_bytes=50_000_000)) == 2
    assert epoch_budget(Config(n=4, batch_size_bytes=25_000_000, max_epochs=12,
                               memory_budget_bytes=10_000_000)) == 1  # floor


def _det(idle):
    det = IdleDetector(100.0, 0.05, 3)
    for _ in range(3):
        det.add(0.0 if idle else 100.0)
    return det


def test_spawn_ready_conditions():
    full = TxPool(10)
    full.offer(b"x" * 10, now=0.0)
    empty = TxPool(10)
    stale = TxPool(10)
    stale.offer(b"y", now=0.0)

    assert spawn_ready(full, _det(True), 3, 12, now=1.0, pool_timeout=0.5)
    assert not spawn_ready(full, _det(False), 3, 12, now=1.0, pool_timeout=0.5)
    assert not spawn_ready(full, _det(True), 12, 12, now=1.0, pool_timeout=0.5)
    assert not spawn_ready(empty, _det(True), 0, 12, now=1.0, pool_timeout=0.5)
    # half-full pool past the timeout spawns anyway
    assert spawn_ready(stale, _det(True), 0, 12, now=1.0, pool_timeout=0.5)
    assert not spawn_ready(stale, _det(True), 0, 12, now=0.2, pool_timeout=0.5)


@given(
    st.booleans(), st.booleans(), st.booleans(),
    st.integers(min_value=0, max_value=13),
)
def test_spawn_ready_monotone(pool_full, pool_stale, idle, active):
    """Flipping fullness or idleness to true never turns the result false."""

    def ready(full_flag, idle_flag):
        pool = TxPool(10)
        if full_flag:
            pool.offer(b"x" * 10, now=0.0)
        elif pool_stale:
            pool.offer(b"y", now=0.0)
        return spawn_ready(pool, _det(idle_flag), active, 12, now=5.0, pool_timeout=0.5)

    base = ready(pool_full, idle)
    assert ready(True, idle) >= base
    assert ready(pool_full, True) >= base
