# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the per-message hot kernels.

Behavior must match rbc.py, binary.py and the simulator fan-out in simnet.py
exactly: same emitted envelopes in the same order, same RNG draw sequence,
same float arithmetic. The differential tests in tests/test_kernels.py hold
both implementations to that.
"""

from cpython cimport array
import array as _array
import heapq

from .messages import AUX, COORD, DECIDE, EST, ECHO, READY, BATCH, Envelope, frame_size
from .rbc import DuplicateStart
from .binary import DuplicatePropose

cdef int K_EST = EST
cdef int K_COORD = COORD
cdef int K_AUX = AUX
cdef int K_DECIDE = DECIDE
cdef int K_ECHO = ECHO
cdef int K_READY = READY
cdef int K_BATCH = BATCH


cdef class RbcInstance:
    cdef public int n, epoch, source, me
    cdef public int echo_threshold, ready_amplify, deliver_threshold
    cdef public bint started
    cdef public object echoed, readied, delivered, batch_digest
    cdef public dict echo_from, ready_from, echo_count, ready_count
    cdef public set equivocators

    def __init__(self, n, q, epoch, source, me):
        self.n = n
        self.epoch = epoch
        self.source = source
        self.me = me
        self.echo_threshold = q.echo
        self.ready_amplify = q.ready_amplify
        self.deliver_threshold = q.deliver
        self.started = False
        self.echoed = None
        self.readied = None
        self.delivered = None
        self.batch_digest = None
        self.echo_from = {}
        self.ready_from = {}
        self.echo_count = {}
        self.ready_count = {}
        self.equivocators = set()

    def start(self, batch, batch_digest, list out):
        if self.started:
            raise DuplicateStart(f"epoch {self.epoch} source {self.source}")
        self.started = True
        out.append((None, Envelope(K_BATCH, self.epoch, self.me, (batch,))))
        self._send_echo(batch_digest, out)
        return None

    def on_batch(self, d, list out):
        if self.batch_digest is None:
            self.batch_digest = d
            if self.echoed is None:
                self._send_echo(d, out)
        return None

    def on_echo(self, sender, d, list out):
        prev = self.echo_from.get(sender)
        if prev is not None:
            if prev != d:
                self.equivocators.add(sender)
            return None
        self.echo_from[sender] = d
        cdef int count = self.echo_count.get(d, 0) + 1
        self.echo_count[d] = count
        if count >= self.echo_threshold and self.readied is None:
            self._send_ready(d, out)
        return None

    def on_ready(self, sender, d, list out):
        prev = self.ready_from.get(sender)
        if prev is not None:
            if prev != d:
                self.equivocators.add(sender)
            return None
        self.ready_from[sender] = d
        cdef int count = self.ready_count.get(d, 0) + 1
        self.ready_count[d] = count
        if count >= self.ready_amplify and self.readied is None:
            self._send_ready(d, out)
        if count >= self.deliver_threshold and self.delivered is None:
            self.delivered = d
            return d
        return None

    cdef _send_echo(self, d, list out):
        self.echoed = d
        out.append((None, Envelope(K_ECHO, self.epoch, self.me, (self.source, d))))

    cdef _send_ready(self, d, list out):
        self.readied = d
        out.append((None, Envelope(K_READY, self.epoch, self.me, (self.source, d))))


cdef class _Round:
    cdef public dict est_recv
    cdef public list est_sent, bin_values
    cdef public object coord_val
    cdef public bint coord_received, coord_sent, aux_sent, evaluated, deadline_passed
    cdef public dict aux_from, aux_invalid
    cdef public int aux_valid

    def __init__(self):
        self.est_recv = {0: set(), 1: set()}
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


cdef class BinInstance:
    cdef public int n, f, me, epoch, k
    cdef public int bv_low, bv_high, aux_q
    cdef public int round
    cdef public object est, decided
    cdef public bint proposed, decide_sent
    cdef public dict decided_senders, decide_votes
    cdef public _Round cur
    cdef public list ahead
    cdef int _buf_cap

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
        self.est = None
        self.proposed = False
        self.decided = None
        self.decide_sent = False
        self.decided_senders = {}
        self.decide_votes = {0: set(), 1: set()}
        self.cur = _Round()
        self.ahead = []
        self._buf_cap = 8 * n

    def propose(self, b, list out):
        if self.proposed:
            raise DuplicatePropose(f"epoch {self.epoch} k {self.k}")
        self.proposed = True
        if self.decided is not None:
            return
        if self.est is None:
            self.est = b
            if not self.cur.est_sent[b]:
                self.cur.est_sent[b] = True
                self._vote(K_EST, b, out)

    def on_est(self, sender, r, b, list out):
        if self.decided is not None or (b != 0 and b != 1):
            return
        if r == self.round:
            self._est(sender, b, out)
        elif r == self.round + 1 and len(self.ahead) < self._buf_cap:
            self.ahead.append((K_EST, sender, b))

    def on_coord(self, sender, r, w, list out):
        if self.decided is not None or (w != 0 and w != 1):
            return
        if r == self.round:
            self._coord(sender, w, out)
        elif r == self.round + 1 and len(self.ahead) < self._buf_cap:
            self.ahead.append((K_COORD, sender, w))

    def on_aux(self, sender, r, b, list out):
        if self.decided is not None or (b != 0 and b != 1):
            return
        if r == self.round:
            self._aux(sender, b, out)
        elif r == self.round + 1 and len(self.ahead) < self._buf_cap:
            self.ahead.append((K_AUX, sender, b))

    def on_decide(self, sender, b, list out):
        if (b != 0 and b != 1) or sender in self.decided_senders:
            return
        self.decided_senders[sender] = b
        self.decide_votes[b].add(sender)
        if self.decided is not None:
            return
        if len(self.decide_votes[b]) >= self.f + 1:
            self._decide(b, out)
            return
        self._est(sender, b, out)
        if self.decided is None:
            self._aux(sender, b, out)

    def on_deadline(self, r, list out):
        if r == self.round and self.decided is None:
            self.cur.deadline_passed = True
            self._try_aux(out)

    def deadline_delay(self, initial, factor):
        return initial * factor ** (self.round - 1)

    cdef _vote(self, int kind, b, list out):
        out.append((None, Envelope(kind, self.epoch, self.me, (self.k, self.round, b))))

    cdef _est(self, sender, b, list out):
        cdef _Round cur = self.cur
        recv = cur.est_recv[b]
        if sender in recv:
            return
        recv.add(sender)
        cdef int count = len(recv)
        if count >= self.bv_low and not cur.est_sent[b]:
            cur.est_sent[b] = True
            self._vote(K_EST, b, out)
        if count >= self.bv_high and b not in cur.bin_values:
            cur.bin_values.append(b)
            if len(cur.bin_values) == 1 and self.me == self.round % self.n:
                cur.coord_sent = True
                self._vote(K_COORD, b, out)
            stragglers = cur.aux_invalid[b]
            if stragglers:
                cur.aux_valid += len(stragglers)
                stragglers.clear()
            self._try_aux(out)
            self._try_decide(out)

    cdef _coord(self, sender, w, list out):
        if sender != self.round % self.n or self.cur.coord_received:
            return
        self.cur.coord_received = True
        self.cur.coord_val = w
        self._try_aux(out)

    cdef _aux(self, sender, b, list out):
        cdef _Round cur = self.cur
        if sender in cur.aux_from:
            return
        cur.aux_from[sender] = b
        if b in cur.bin_values:
            cur.aux_valid += 1
            self._try_decide(out)
        else:
            cur.aux_invalid[b].add(sender)

    cdef _try_aux(self, list out):
        cdef _Round cur = self.cur
        if cur.aux_sent or not cur.bin_values:
            return
        if not (cur.coord_received or cur.deadline_passed):
            return
        if cur.coord_received and cur.coord_val in cur.bin_values:
            v = cur.coord_val
        else:
            v = cur.bin_values[0]
        cur.aux_sent = True
        self._vote(K_AUX, v, out)

    cdef _try_decide(self, list out):
        cdef _Round cur = self.cur
        if cur.evaluated or self.decided is not None:
            return
        if cur.aux_valid < self.aux_q:
            return
        cur.evaluated = True
        values = set()
        for b in cur.aux_from.values():
            if b in cur.bin_values:
                values.add(b)
        cdef int parity = self.round & 1
        if len(values) == 1:
            v = values.pop()
            if v == parity:
                self._decide(v, out)
                return
            self.est = v
        else:
            self.est = parity
        self._advance(out)

    cdef _decide(self, v, list out):
        self.decided = v
        if not self.decide_sent:
            self.decide_sent = True
            self._vote(K_DECIDE, v, out)

    cdef _advance(self, list out):
        cdef int target = self.round + 1
        self.round = target
        self.cur = _Round()
        replay = self.ahead
        self.ahead = []
        if self.est is not None:
            self.cur.est_sent[self.est] = True
            self._vote(K_EST, self.est, out)
        for sender, b in self.decided_senders.items():
            self._est(sender, b, out)
            if self.round != target or self.decided is not None:
                return
            self._aux(sender, b, out)
            if self.round != target or self.decided is not None:
                return
        for tag, sender, b in replay:
            if tag == K_EST:
                self._est(sender, b, out)
            elif tag == K_AUX:
                self._aux(sender, b, out)
            else:
                self._coord(sender, b, out)
            if self.round != target or self.decided is not None:
                return


cdef class SimLinkEngine:
    """Per-frame transmit/fan-out arithmetic for the simulator: link busy
    tracking, loss-as-stream-stall draws, and delivery scheduling. Owns the
    event heap ordering counter so compiled and pure runs interleave events
    identically."""

    cdef public int n
    cdef public long long seq
    cdef public list heap
    cdef double rto
    cdef array.array _lat, _bw, _loss, _busy
    cdef array.array _sent
    cdef double[:] lat, bw, loss, busy
    cdef long long[:] sent
    cdef object rng, deliver

    def __init__(self, int n, lat, bw, loss, double rto, rng):
        self.n = n
        self.seq = 0
        self.heap = []
        self.rto = rto
        self.rng = rng
        self.deliver = None
        cdef int i, j
        self._lat = _array.array("d", [lat[i][j] for i in range(n) for j in range(n)])
        self._bw = _array.array("d", [bw[i][j] for i in range(n) for j in range(n)])
        self._loss = _array.array("d", [loss[i][j] for i in range(n) for j in range(n)])
        self._busy = _array.array("d", [0.0] * (n * n))
        self._sent = _array.array("q", [0] * n)
        self.lat = self._lat
        self.bw = self._bw
        self.loss = self._loss
        self.busy = self._busy
        self.sent = self._sent

    def bind(self, deliver):
        self.deliver = deliver

    def push(self, double at, fn, args):
        heapq.heappush(self.heap, (at, self.seq, fn, args))
        self.seq += 1

    def sent_bytes(self, int i):
        return self.sent[i]

    def add_sent(self, int i, long long size):
        self.sent[i] += size

    def transmit(self, int i, int j, env, long long size, double now):
        self._transmit(i, j, env, size, now)

    cdef _transmit(self, int i, int j, env, long long size, double now):
        cdef int link = i * self.n + j
        cdef double start = self.busy[link]
        cdef double p, loss
        cdef long long segments
        if start < now:
            start = now
        loss = self.loss[link]
        if loss != 0.0:
            segments = (size + 1499) // 1500
            if segments == 1:
                p = loss
            else:
                p = 1.0 - (1.0 - loss) ** segments
            if self.rng.random() < p:
                start += self.rto
        cdef double end = start + size / self.bw[link]
        self.busy[link] = end
        heapq.heappush(self.heap, (end + self.lat[link], self.seq, self.deliver, (j, env)))
        self.seq += 1

    def broadcast(self, int i, env, double now):
        """Fast-path fan-out: no strategy, no partitions; caller checked."""
        cdef long long size = frame_size(env)
        cdef long long total = 0
        cdef int j
        for j in range(self.n):
            if j == i:
                heapq.heappush(self.heap, (now, self.seq, self.deliver, (j, env)))
                self.seq += 1
            else:
                total += size
                self._transmit(i, j, env, size, now)
        self.sent[i] += total
