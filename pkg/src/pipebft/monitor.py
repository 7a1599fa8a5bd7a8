"""Local resource signals gating epoch spawns: transaction-pool fullness,
network idleness, and the memory-budget cap on concurrent epochs.
"""

from collections import deque


class InsufficientSamples(Exception):
    """Idle detector queried before its sample window warmed up."""


class TxPool:
    """FIFO staging buffer for the next batch.

    Accepts while strictly below capacity; the transaction that crosses
    capacity is accepted and closes the batch, so byte_size never exceeds
    capacity plus one transaction. A full pool rejects (clients retry).
    """

    __slots__ = ("capacity", "pending", "byte_size", "opened_at")

    def __init__(self, capacity):
        self.capacity = capacity
        self.pending = deque()
        self.byte_size = 0
        self.opened_at = None

    def offer(self, tx, now):
        if not tx or len(tx) > self.capacity:
            return False
        if self.byte_size >= self.capacity:
            return False
        if not self.pending:
            self.opened_at = now
        self.pending.append(tx)
        self.byte_size += len(tx)
        return True

    def full(self):
        return self.byte_size >= self.capacity

    def overdue(self, now, timeout):
        return bool(self.pending) and now - self.opened_at >= timeout

    def drain(self):
        txs = tuple(self.pending)
        self.pending.clear()
        self.byte_size = 0
        self.opened_at = None
        return txs

    def __len__(self):
        return len(self.pending)


class IdleDetector:
    """Declares the network idle when the mean of the last k send-rate
    samples is below the idle fraction of link capacity."""

    __slots__ = ("samples", "count", "threshold")

    def __init__(self, capacity, fraction, count):
        self.samples = deque(maxlen=count)
        self.count = count
        self.threshold = fraction * capacity

    def add(self, bytes_per_s):
        self.samples.append(bytes_per_s)

    def warmed_up(self):
        return len(self.samples) >= self.count

    def is_idle(self):
        if len(self.samples) < self.count:
            raise InsufficientSamples(f"{len(self.samples)}/{self.count} samples")
        return sum(self.samples) / self.count < self.threshold


def epoch_budget(cfg):
    """Concurrent-epoch cap: configured limit bounded by how many batches fit
    in the memory budget, never below one."""
    by_memory = cfg.memory_budget_bytes // cfg.batch_size_bytes
    return max(1, min(cfg.max_epochs, by_memory))


def spawn_ready(pool, detector, active_epochs, budget, now, pool_timeout):
    """True when a new epoch should start: pool full (or stale and non-empty),
    network idle, and an epoch slot free."""
    if active_epochs >= budget:
        return False
    if not (pool.full() or pool.overdue(now, pool_timeout)):
        return False
    return detector.warmed_up() and detector.is_idle()
