"""Per-epoch multivalue consensus: n reliable-broadcast instances feed n
binary instances whose decisions form a bitmask over the delivered digests.

Coordinate k proposes 1 to its binary instance when RBC delivers source k's
digest; the first binary 1-decision triggers 0-proposals for every
still-silent coordinate. Once all n bits are in, the decided set is the
mask-selected digests sorted ascending by digest bytes; emission waits for
any mask-1 digest whose RBC delivery is still in flight.
"""

from .kernels import BinInstance, RbcInstance
from .messages import AUX, COORD, DECIDE, EST


class DuplicateEpoch(Exception):
    """Local replica already proposed for this epoch."""


class EpochConsensus:
    __slots__ = (
        "n",
        "epoch",
        "me",
        "rtimeout",
        "rfactor",
        "defer",
        "rbc",
        "bins",
        "delivered",
        "mask",
        "mask_count",
        "bin_proposed",
        "first_one_done",
        "own_proposed",
        "decided_set",
        "_armed",
    )

    def __init__(self, cfg, q, epoch, me, defer):
        n = cfg.n
        self.n = n
        self.epoch = epoch
        self.me = me
        self.rtimeout = cfg.round_timeout_initial
        self.rfactor = cfg.round_timeout_factor
        self.defer = defer  # defer(delay, fn) where fn(out) runs on the event loop
        self.rbc = [RbcInstance(n, q, epoch, src, me) for src in range(n)]
        self.bins = [BinInstance(n, cfg.f, epoch, k, me) for k in range(n)]
        self.delivered = [None] * n
        self.mask = [None] * n
        self.mask_count = 0
        self.bin_proposed = [False] * n
        self.first_one_done = False
        self.own_proposed = False
        self.decided_set = None
        self._armed = [0] * n

    # -- proposals -------------------------------------------------------------

    def propose(self, batch, batch_digest, out):
        """Start our own coordinate's reliable broadcast (batch may be empty)."""
        if self.own_proposed:
            raise DuplicateEpoch(self.epoch)
        self.own_proposed = True
        self.rbc[self.me].start(batch, batch_digest, out)
        return None

    def _propose_bin(self, k, b, out):
        if self.bin_proposed[k]:
            return
        self.bin_proposed[k] = True
        self.bins[k].propose(b, out)
        self._arm(k)

    # -- inbound ----------------------------------------------------------------

    def on_batch(self, source, d, out):
        """Source's batch arrived and was hashed to d."""
        delivered = self.rbc[source].on_batch(d, out)
        return self._rbc_event(source, delivered, out)

    def on_echo(self, sender, source, d, out):
        delivered = self.rbc[source].on_echo(sender, d, out)
        return self._rbc_event(source, delivered, out)

    def on_ready(self, sender, source, d, out):
        delivered = self.rbc[source].on_ready(sender, d, out)
        return self._rbc_event(source, delivered, out)

    def on_vote(self, kind, sender, k, r, b, out):
        inst = self.bins[k]
        if kind == EST:
            inst.on_est(sender, r, b, out)
        elif kind == AUX:
            inst.on_aux(sender, r, b, out)
        elif kind == COORD:
            inst.on_coord(sender, r, b, out)
        elif kind == DECIDE:
            inst.on_decide(sender, b, out)
        self._arm(k)
        return self._bin_event(k, out)

    # -- plumbing ----------------------------------------------------------------

    def _rbc_event(self, source, delivered, out):
        if delivered is None:
            return None
        if self.delivered[source] is None:
            self.delivered[source] = delivered
            self._propose_bin(source, 1, out)
            decision = self._bin_event(source, out)
            if decision is not None:
                return decision
            return self._maybe_decide()
        return None

    def _bin_event(self, k, out):
        inst = self.bins[k]
        if inst.decided is None or self.mask[k] is not None:
            return None
        bit = inst.decided
        self.mask[k] = bit
        self.mask_count += 1
        if bit == 1 and not self.first_one_done:
            self.first_one_done = True
            for j in range(self.n):
                if not self.bin_proposed[j]:
                    self._propose_bin(j, 0, out)
                    d = self._bin_event(j, out)
                    if d is not None:
                        return d
        return self._maybe_decide()

    def _maybe_decide(self):
        """Emit the decision once the mask is complete and every selected
        coordinate's digest is known; returns the sorted digest tuple once."""
        if self.decided_set is not None or self.mask_count < self.n:
            return None
        chosen = []
        for k in range(self.n):
            if self.mask[k] == 1:
                d = self.delivered[k]
                if d is None:
                    return None  # binary validity guarantees this resolves
                chosen.append(d)
        chosen.sort()
        self.decided_set = tuple(chosen)
        return self.decided_set

    def _arm(self, k):
        """Schedule the round deadline whenever instance k enters a new round."""
        inst = self.bins[k]
        r = inst.round
        if inst.decided is not None or self._armed[k] >= r:
            return
        self._armed[k] = r
        delay = inst.deadline_delay(self.rtimeout, self.rfactor)
        self.defer(delay, lambda out, k=k, r=r: self._deadline(k, r, out))

    def _deadline(self, k, r, out):
        inst = self.bins[k]
        inst.on_deadline(r, out)
        self._arm(k)
        return self._bin_event(k, out)

    def done(self):
        return self.decided_set is not None
