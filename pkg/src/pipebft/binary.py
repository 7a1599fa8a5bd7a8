"""Deterministic binary Byzantine consensus with a weak round-robin
coordinator.

Round structure, per instance (epoch, k):

1. BV step: broadcast EST[r](est); relay a bit once f+1 distinct senders
   EST it; a bit enters bin_values once 2f+1 distinct senders EST it.
2. Coordinator step: replica (r mod n) broadcasts COORD[r](w), w being the
   first bit BV-delivered at the coordinator.
3. AUX step: once bin_values is non-empty and the coordinator spoke (or the
   round deadline elapsed), broadcast AUX[r](v), preferring the coordinator's
   suggestion when it is BV-justified.
4. Decision step: on n-f AUX votes whose bits are all BV-justified, let V be
   those bits: V = {v} with v = r mod 2 decides v; V = {v} otherwise adopts
   v; a mixed V adopts r mod 2. Then the round advances and the deadline
   doubles.

A decided replica broadcasts DECIDE(v) once and halts; everyone treats a
DECIDE from sender s as a standing EST and AUX vote by s in every later
round, and f+1 matching DECIDEs short-circuit the rounds entirely. Safety
never depends on timing; the deadline only gates how long the AUX step waits
for the coordinator.

Messages one round ahead are buffered, anything further is dropped.
"""

from .messages import AUX, COORD, DECIDE, EST, Envelope


class DuplicatePropose(Exception):
    """propose() called twice on the same instance."""


class _Round:
    __slots__ = (
        "est_recv",
        "est_sent",
        "bin_values",
        "coord_val",
        "coord_received",
        "coord_sent",
        "aux_from",
        "aux_invalid",
        "aux_valid",
        "aux_sent",
        "evaluated",
        "deadline_passed",
    )

    def __init__(self):
        self.est_recv = ({0: set(), 1: set()})
        self.est_sent = [False, False]
        self.bin_values = []
        self.coord_val = None
        self.coord_received = False
        self.coord_sent = False
        self.aux_from = {}
        self.aux_invalid = {0: set(), 1: set()}
        self.aux_valid = 0
        self.aux_sent = False
        self.evaluated = False
        self.deadline_passed = False


class BinInstance:
    __slots__ = (
        "n",
        "f",
        "me",
        "epoch",
        "k",
        "bv_low",
        "bv_high",
        "aux_q",
        "round",
        "est",
        "proposed",
        "decided",
        "decide_sent",
        "decided_senders",
        "decide_votes",
        "cur",
        "ahead",
        "_buf_cap",
    )

    def __init__(self, n, f, epoch, k, me):
        self.n = n
        self.f = f
        self.me = me
        self.epoch = epoch
        self.k = k
        self.bv_low = f + 1
        self.bv_high = 2 * f + 1
        self.aux_q = n - f
        self.round = 1
        self.est = None  # unset until propose() or adoption on round advance
        self.proposed = False
        self.decided = None
        self.decide_sent = False
        self.decided_senders = {}
        self.decide_votes = {0: set(), 1: set()}
        self.cur = _Round()
        self.ahead = []  # buffered (tag, sender, bit) for round+1
        self._buf_cap = 8 * n

    # -- input ---------------------------------------------------------------

    def propose(self, b, out):
        if self.proposed:
            raise DuplicatePropose(f"epoch {self.epoch} k {self.k}")
        self.proposed = True
        if self.decided is not None:
            return
        if self.est is None:
            self.est = b
            if not self.cur.est_sent[b]:
                self.cur.est_sent[b] = True
                self._vote(EST, b, out)

    def on_est(self, sender, r, b, out):
        if self.decided is not None or b not in (0, 1):
            return
        if r == self.round:
            self._est(sender, b, out)
        elif r == self.round + 1 and len(self.ahead) < self._buf_cap:
            self.ahead.append((EST, sender, b))

    def on_coord(self, sender, r, w, out):
        if self.decided is not None or w not in (0, 1):
            return
        if r == self.round:
            self._coord(sender, w, out)
        elif r == self.round + 1 and len(self.ahead) < self._buf_cap:
            self.ahead.append((COORD, sender, w))

    def on_aux(self, sender, r, b, out):
        if self.decided is not None or b not in (0, 1):
            return
        if r == self.round:
            self._aux(sender, b, out)
        elif r == self.round + 1 and len(self.ahead) < self._buf_cap:
            self.ahead.append((AUX, sender, b))

    def on_decide(self, sender, b, out):
        if b not in (0, 1) or sender in self.decided_senders:
            return
        self.decided_senders[sender] = b
        self.decide_votes[b].add(sender)
        if self.decided is not None:
            return
        if len(self.decide_votes[b]) >= self.f + 1:
            self._decide(b, out)
            return
        # a DECIDE is a standing EST and AUX vote in the current round
        self._est(sender, b, out)
        if self.decided is None:
            self._aux(sender, b, out)

    def on_deadline(self, r, out):
        if r == self.round and self.decided is None:
            self.cur.deadline_passed = True
            self._try_aux(out)

    def deadline_delay(self, initial, factor):
        return initial * factor ** (self.round - 1)

    # -- round machine --------------------------------------------------------

    def _vote(self, kind, b, out):
        out.append((None, Envelope(kind, self.epoch, self.me, (self.k, self.round, b))))

    def _est(self, sender, b, out):
        cur = self.cur
        recv = cur.est_recv[b]
        if sender in recv:
            return
        recv.add(sender)
        count = len(recv)
        if count >= self.bv_low and not cur.est_sent[b]:
            cur.est_sent[b] = True
            self._vote(EST, b, out)
        if count >= self.bv_high and b not in cur.bin_values:
            cur.bin_values.append(b)
            if len(cur.bin_values) == 1 and self.me == self.round % self.n:
                cur.coord_sent = True
                self._vote(COORD, b, out)
            stragglers = cur.aux_invalid[b]
            if stragglers:
                cur.aux_valid += len(stragglers)
                stragglers.clear()
            self._try_aux(out)
            self._try_decide(out)

    def _coord(self, sender, w, out):
        if sender != self.round % self.n or self.cur.coord_received:
            return
        self.cur.coord_received = True
        self.cur.coord_val = w
        self._try_aux(out)

    def _aux(self, sender, b, out):
        cur = self.cur
        if sender in cur.aux_from:
            return
        cur.aux_from[sender] = b
        if b in cur.bin_values:
            cur.aux_valid += 1
            self._try_decide(out)
        else:
            cur.aux_invalid[b].add(sender)

    def _try_aux(self, out):
        cur = self.cur
        if cur.aux_sent or not cur.bin_values:
            return
        if not (cur.coord_received or cur.deadline_passed):
            return
        if cur.coord_received and cur.coord_val in cur.bin_values:
            v = cur.coord_val
        else:
            v = cur.bin_values[0]
        cur.aux_sent = True
        self._vote(AUX, v, out)

    def _try_decide(self, out):
        cur = self.cur
        if cur.evaluated or self.decided is not None:
            return
        if cur.aux_valid < self.aux_q:
            return
        cur.evaluated = True
        values = set()
        for b in cur.aux_from.values():
            if b in cur.bin_values:
                values.add(b)
        parity = self.round & 1
        if len(values) == 1:
            v = values.pop()
            if v == parity:
                self._decide(v, out)
                return
            self.est = v
        else:
            self.est = parity
        self._advance(out)

    def _decide(self, v, out):
        self.decided = v
        if not self.decide_sent:
            self.decide_sent = True
            self._vote(DECIDE, v, out)

    def _advance(self, out):
        target = self.round + 1
        self.round = target
        self.cur = _Round()
        replay = self.ahead
        self.ahead = []
        if self.est is not None:
            self.cur.est_sent[self.est] = True
            self._vote(EST, self.est, out)
        for sender, b in self.decided_senders.items():
            self._est(sender, b, out)
            if self.round != target or self.decided is not None:
                return
            self._aux(sender, b, out)
            if self.round != target or self.decided is not None:
                return
        for tag, sender, b in replay:
            if tag == EST:
                self._est(sender, b, out)
            elif tag == AUX:
                self._aux(sender, b, out)
            else:
                self._coord(sender, b, out)
            if self.round != target or self.decided is not None:
                return
