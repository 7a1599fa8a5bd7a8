"""The distributed pipeline manager: spawns epochs from local resource
signals, joins remotely spawned epochs, resolves decided digests to batch
payloads, and gates commits so the application sees epochs in order.

A Replica owns one serialized event stream: transport intake, monitor ticks
and timer callbacks all run to completion one at a time. Transport backends
provide `services` (clock, send/broadcast, timers, send-rate sampling); the
application receives ordered batches via `app.on_commit`.
"""

import csv
import hashlib
from collections import deque

from . import monitor
from .core import Batch, digest, quorums
from .epoch import EpochConsensus
from .messages import (
    BATCH,
    BATCH_REQ,
    BATCH_RESP,
    BLOCK_REQ,
    BLOCK_RESP,
    CLIENT_TX,
    DECIDE,
    ECHO,
    READY,
    Envelope,
    decode_block,
    encode_block,
)

RUNNING = "R"
DECIDED = "D"
COMMITABLE = "C"
TERMINATED = "T"

PENDING_CAP = 10_000  # buffered out-of-order envelopes per epoch, drop-oldest


class EpochRecord:
    __slots__ = (
        "epoch",
        "state",
        "consensus",
        "received_batches",
        "decided_digests",
        "missing",
    )

    def __init__(self, epoch, consensus):
        self.epoch = epoch
        self.state = RUNNING
        self.consensus = consensus
        self.received_batches = {}
        self.decided_digests = None
        self.missing = set()


class CommitEntry:
    __slots__ = ("epoch", "digests", "batches", "time", "tx_count", "payload_bytes")

    def __init__(self, epoch, digests, batches, time):
        self.epoch = epoch
        self.digests = digests
        self.batches = batches
        self.time = time
        self.tx_count = sum(len(b.txs) for b in batches)
        self.payload_bytes = sum(b.payload_bytes for b in batches)

    def drop_payload(self):
        """Free the batch bytes; digests and counters stay for log checks."""
        self.batches = ()


class Replica:
    """One correct replica: consensus pipeline plus resource monitor."""

    def __init__(self, cfg, services, app=None, trace=None):
        self.cfg = cfg
        self.q = quorums(cfg)
        self.me = cfg.replica_id
        self.services = services
        self.app = app
        self.trace = trace
        self.pool = monitor.TxPool(cfg.batch_size_bytes)
        self.idle = monitor.IdleDetector(
            cfg.link_capacity_bytes_per_s, cfg.idle_fraction, cfg.idle_sample_count
        )
        self.budget = monitor.epoch_budget(cfg)
        self.records = {}
        self.pending = {}  # epoch -> deque of buffered envelopes
        self.next_spawn = 0
        self.next_commit = 0
        self.committed_log = []
        self._log_index = {}
        self.rejected_txs = 0
        self.dropped_far_future = 0
        self.adopted_blocks = 0
        self.stopped = False
        self._stall_epoch = 0
        self._stall_since = 0.0
        self._stall_drops = 0
        self._catchup_last = float("-inf")
        self._catchup_votes = {}  # sender -> block bytes, for next_commit only

    # -- host entry points ----------------------------------------------------

    def on_tick(self):
        """Monitor tick: sample the send rate, then spawn if conditions hold."""
        if self.stopped:
            return
        self.idle.add(self.services.tx_rate_sample())
        self.maybe_spawn()
        self._maybe_catchup()

    def on_client_tx(self, payload):
        """Admit one client transaction into the pool; False means retry later."""
        if self.stopped or not (0 < len(payload) <= self.cfg.batch_size_bytes):
            self.rejected_txs += 1
            return False
        if self.pool.offer(payload, self.services.now()):
            return True
        self.rejected_txs += 1
        return False

    def on_envelope(self, env):
        if self.stopped:
            return
        kind = env.kind
        if kind <= DECIDE:
            rec = self.records.get(env.epoch)
            if rec is not None:
                self._route(rec, env)
            else:
                self._consensus_env(env)
        elif kind == BATCH_REQ:
            self._serve_batch_req(env)
        elif kind == BATCH_RESP:
            self._on_batch_resp(env)
        elif kind == CLIENT_TX:
            self.on_client_tx(env.payload[0])
        elif kind == BLOCK_REQ:
            if env.sender < self.cfg.n:
                self.services.send(env.sender, self.serve_block(env.epoch))
        elif kind == BLOCK_RESP:
            self._on_block_resp(env)

    # -- spawning and joining ---------------------------------------------------

    def active_epochs(self):
        return self.next_spawn - self.next_commit

    def maybe_spawn(self):
        now = self.services.now()
        if not monitor.spawn_ready(
            self.pool,
            self.idle,
            self.active_epochs(),
            self.budget,
            now,
            self.cfg.pool_timeout,
        ):
            return None
        e = self.next_spawn
        self._start_epoch(e, self.pool.drain())
        return e

    def _start_epoch(self, e, txs):
        rec = EpochRecord(e, None)
        rec.consensus = EpochConsensus(
            self.cfg, self.q, e, self.me, self._make_defer(rec)
        )
        self.records[e] = rec
        self.next_spawn = max(self.next_spawn, e + 1)
        self._trace("estate", e, RUNNING)
        batch = Batch(txs, self.me, e)
        d = digest(batch)
        rec.received_batches[d] = batch
        out = []
        rec.consensus.propose(batch, d, out)
        self._flush(out)
        pend = self.pending.pop(e, None)
        if pend:
            for env in pend:
                self._route(rec, env)
        return rec

    def _consensus_env(self, env):
        """Slow path: consensus traffic for an epoch we have no record for."""
        e = env.epoch
        if e < self.next_commit:
            return  # tail traffic for a terminated epoch
        if e - self.next_commit >= self.budget:
            self.dropped_far_future += 1
            return
        prev = e - 1
        if e == 0 or prev < self.next_commit or (
            prev in self.records and self.records[prev].state != RUNNING
        ):
            self._route(self._join_epoch(e), env)
        else:
            buf = self.pending.get(e)
            if buf is None:
                buf = self.pending[e] = deque(maxlen=PENDING_CAP)
            buf.append(env)

    def _join_epoch(self, e):
        """Participate in a remotely spawned epoch; use the pool only if this
        is exactly the epoch we would spawn next ourselves."""
        if e == self.next_spawn and len(self.pool):
            txs = self.pool.drain()
        else:
            txs = ()
        return self._start_epoch(e, txs)

    def _flush_pending(self, e):
        """Join epoch e if traffic for it was buffered and its predecessor has
        now decided."""
        if e not in self.pending or e in self.records:
            return
        prev = e - 1
        if e == 0 or prev < self.next_commit or (
            prev in self.records and self.records[prev].state != RUNNING
        ):
            self._join_epoch(e)

    # -- consensus event routing --------------------------------------------------

    def _route(self, rec, env):
        kind = env.kind
        out = []
        decision = None
        ec = rec.consensus
        if kind == BATCH:
            batch = env.payload[0]
            if (
                batch.epoch == rec.epoch
                and batch.origin == env.sender
                and len(batch.encode()) <= 2 * self.cfg.batch_size_bytes + 64
            ):
                d = digest(batch)
                # bound the payload store: keep the first batch per source,
                # plus anything the decided set is still waiting on
                if (
                    ec.rbc[env.sender].batch_digest is None
                    or ec.delivered[env.sender] == d
                    or d in rec.missing
                ):
                    self._store_payload(rec, d, batch)
                decision = ec.on_batch(env.sender, d, out)
        elif kind == ECHO:
            src, d = env.payload
            if src < self.cfg.n:
                decision = ec.on_echo(env.sender, src, d, out)
        elif kind == READY:
            src, d = env.payload
            if src < self.cfg.n:
                decision = ec.on_ready(env.sender, src, d, out)
        else:  # EST | COORD | AUX | DECIDE
            k, r, b = env.payload
            if k < self.cfg.n and r >= 1:
                decision = ec.on_vote(kind, env.sender, k, r, b, out)
        if out:
            services = self.services
            for dest, e in out:
                if dest is None:
                    services.broadcast(e)
                else:
                    services.send(dest, e)
        if decision is not None:
            self._on_decision(rec, decision)

    def _make_defer(self, rec):
        def defer(delay, fn):
            self.services.schedule(delay, lambda: self._deferred(rec, fn))

        return defer

    def _deferred(self, rec, fn):
        if self.stopped or rec.state == TERMINATED:
            return
        out = []
        decision = fn(out)
        self._flush(out)
        if decision is not None:
            self._on_decision(rec, decision)

    # -- decisions, payload resolution, commit gating ------------------------------

    def _on_decision(self, rec, digests):
        if rec.state != RUNNING:
            return
        rec.state = DECIDED
        rec.decided_digests = tuple(digests)
        self._trace("estate", rec.epoch, DECIDED)
        rec.missing = {d for d in digests if d not in rec.received_batches}
        if rec.missing:
            self._request_missing(rec)
        else:
            self._make_commitable(rec)
        self._advance_commit()
        self._flush_pending(rec.epoch + 1)

    def _request_missing(self, rec):
        if self.stopped or rec.state != DECIDED or not rec.missing:
            return
        env = Envelope(BATCH_REQ, rec.epoch, self.me, (tuple(sorted(rec.missing)),))
        self.services.broadcast(env)
        self.services.schedule(
            self.cfg.round_timeout_initial, lambda: self._request_missing(rec)
        )

    def _store_payload(self, rec, d, batch):
        if d not in rec.received_batches:
            rec.received_batches[d] = batch
            if rec.state == DECIDED and d in rec.missing:
                rec.missing.discard(d)
                if not rec.missing:
                    self._make_commitable(rec)
                    self._advance_commit()

    def _make_commitable(self, rec):
        rec.state = COMMITABLE
        self._trace("estate", rec.epoch, COMMITABLE)

    def _advance_commit(self):
        while True:
            rec = self.records.get(self.next_commit)
            if rec is None or rec.state != COMMITABLE:
                return
            batches = tuple(rec.received_batches[d] for d in rec.decided_digests)
            rec.state = TERMINATED
            del self.records[rec.epoch]
            self._commit(
                CommitEntry(rec.epoch, rec.decided_digests, batches, self.services.now())
            )

    def _commit(self, entry):
        self.committed_log.append(entry)
        self._log_index[entry.epoch] = entry
        self._trace("estate", entry.epoch, TERMINATED)
        self._trace("commit", entry.epoch, entry.tx_count, entry.payload_bytes)
        self.next_commit = entry.epoch + 1
        retain = self.cfg.block_retention
        if retain:
            old = self._log_index.get(entry.epoch - retain)
            if old is not None:
                old.drop_payload()
        if self.app is not None:
            self.app.on_commit(entry.epoch, entry.batches, entry.time)

    # -- payload and block serving ---------------------------------------------------

    def _serve_batch_req(self, env):
        if env.sender >= self.cfg.n:
            return
        (digests,) = env.payload
        if len(digests) > 4 * self.cfg.n:
            return
        rec = self.records.get(env.epoch)
        store = rec.received_batches if rec is not None else None
        entry = self._log_index.get(env.epoch)
        for d in digests:
            batch = store.get(d) if store is not None else None
            if batch is None and entry is not None:
                for dd, bb in zip(entry.digests, entry.batches):
                    if dd == d:
                        batch = bb
                        break
            if batch is not None:
                self.services.send(
                    env.sender, Envelope(BATCH_RESP, env.epoch, self.me, (batch,))
                )

    def _on_batch_resp(self, env):
        batch = env.payload[0]
        rec = self.records.get(env.epoch)
        if rec is None or batch.epoch != env.epoch:
            return
        if len(batch.encode()) > 2 * self.cfg.batch_size_bytes + 64:
            return
        d = digest(batch)
        # accept only payloads we are (or could be) waiting on; a response
        # whose hash matches nothing requested is discarded and the pending
        # request keeps retrying
        if d in rec.missing or d in rec.consensus.delivered:
            self._store_payload(rec, d, batch)

    def serve_block(self, e):
        """Build the BLOCK_RESP for epoch e (commit time < 0 when unknown)."""
        entry = self._log_index.get(e)
        if entry is None or len(entry.batches) != len(entry.digests):
            return Envelope(BLOCK_RESP, e, self.me, (-1.0, b""))
        return Envelope(BLOCK_RESP, e, self.me, (entry.time, encode_block(entry.batches)))

    # -- laggard catch-up --------------------------------------------------------
    #
    # A replica that falls more than the epoch budget behind has an epoch's
    # reliable-broadcast burst dropped by the far-future guard, and the rest
    # of the cluster retires the epoch and goes quiet. The way back in is the
    # block service: ask everyone for the stalled epoch and adopt the copy
    # that f+1 replicas agree on byte for byte (at least one of them correct).

    def _maybe_catchup(self):
        now = self.services.now()
        e = self.next_commit
        if e != self._stall_epoch:
            self._stall_epoch = e
            self._stall_since = now
            self._stall_drops = self.dropped_far_future
            self._catchup_votes = {}
            return
        # only ask around when something is actually outstanding: an epoch in
        # flight, buffered future traffic, or far-future drops since the stall
        if (
            self.next_spawn <= e
            and not self.pending
            and self.dropped_far_future == self._stall_drops
        ):
            self._stall_since = now
            return
        if now - self._stall_since < 4 * self.cfg.round_timeout_initial:
            return
        if now - self._catchup_last < self.cfg.round_timeout_initial:
            return
        self._catchup_last = now
        self.services.broadcast(Envelope(BLOCK_REQ, e, self.me, ()))

    def _on_block_resp(self, env):
        if env.sender >= self.cfg.n or env.epoch != self.next_commit:
            return
        commit_time, blob = env.payload
        if commit_time < 0 or len(blob) > 4 * self.cfg.n * self.cfg.batch_size_bytes:
            return
        self._catchup_votes[env.sender] = blob
        matching = sum(1 for b in self._catchup_votes.values() if b == blob)
        if matching >= self.cfg.f + 1:
            self._adopt_block(env.epoch, blob)

    def _adopt_block(self, e, blob):
        try:
            batches = decode_block(blob)
        except Exception:
            return  # malformed copy; keep waiting for honest matches
        digests = tuple(digest(b) for b in batches)
        if list(digests) != sorted(digests) or any(b.epoch != e for b in batches):
            return
        rec = self.records.pop(e, None)
        if rec is not None:
            rec.state = TERMINATED
        self._catchup_votes = {}
        self.adopted_blocks += 1
        self._commit(CommitEntry(e, digests, batches, self.services.now()))
        self._advance_commit()
        self._flush_pending(self.next_commit)
        # a deficit is rarely one epoch deep: keep pulling at network pace
        # (the next tick re-requests immediately; a healthy epoch just gets
        # not-found answers and proceeds through consensus)
        self._stall_epoch = self.next_commit
        self._stall_since = float("-inf")
        self._catchup_last = float("-inf")

    # -- misc -------------------------------------------------------------------------

    def _flush(self, out):
        send = self.services.send
        broadcast = self.services.broadcast
        for dest, env in out:
            if dest is None:
                broadcast(env)
            else:
                send(dest, env)

    def _trace(self, tag, *fields):
        if self.trace is not None:
            self.trace((self.services.now(), tag, self.me) + fields)

    def log_fingerprint(self):
        """Digest of the committed sequence (epoch numbers + batch digests)."""
        h = hashlib.sha256()
        for entry in self.committed_log:
            h.update(entry.epoch.to_bytes(8, "big"))
            for d in entry.digests:
                h.update(d)
        return h.hexdigest()

    def write_committed_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "commit_time", "tx_count", "payload_bytes"])
            for e in self.committed_log:
                w.writerow([e.epoch, repr(e.time), e.tx_count, e.payload_bytes])
