"""Real-network backend: an asyncio replica node and an open-loop load
generator.

One persistent TCP connection per ordered peer pair (the sender dials), with
exponential-backoff reconnect. Every inbound envelope funnels into a single
intake queue so the protocol sees a serialized event stream; signature
verification fans out to a thread pool (the EC verify releases the GIL) and
its outcomes re-enter the queue.
"""

import asyncio
import struct
import time
from concurrent.futures import ThreadPoolExecutor

from . import ledger as ledger_mod
from .messages import (
    BLOCK_REQ,
    CLIENT_TX,
    CLIENT_SENDER,
    Envelope,
    decode_block,
    encode_frame,
)
from .pipeline import Replica

_LEN = struct.Struct(">I")
OUT_QUEUE_FRAMES = 4096
MAX_FRAME = 64 * 1024 * 1024


async def read_frame(reader):
    head = await reader.readexactly(4)
    (length,) = _LEN.unpack(head)
    if not 0 < length <= MAX_FRAME:
        raise ValueError(f"bad frame length {length}")
    body = await reader.readexactly(length)
    from .messages import decode_frame

    env, _ = decode_frame(head + body)
    return env


class TcpServices:
    """Replica-facing transport surface backed by the node's queues."""

    def __init__(self, node):
        self.node = node
        self._last_bytes = 0
        self._last_time = time.time()

    def now(self):
        return time.time()

    def send(self, dest, env):
        self.node.enqueue_frame(dest, encode_frame(env))

    def broadcast(self, env):
        node = self.node
        frame = encode_frame(env)
        for j in range(node.cfg.n):
            if j == node.cfg.replica_id:
                node.intake.put_nowait(("env", env))
            else:
                node.enqueue_frame(j, frame)

    def schedule(self, delay, fn):
        node = self.node
        node.loop.call_later(delay, node.intake.put_nowait, ("call", fn))

    def tx_rate_sample(self):
        now = time.time()
        sent = self.node.bytes_sent
        elapsed = now - self._last_time
        delta = sent - self._last_bytes
        self._last_bytes = sent
        self._last_time = now
        if elapsed <= 0:
            return 0.0
        return delta / elapsed


class Node:
    """One replica process: protocol event loop, peer links, client service."""

    def __init__(self, cfg, peers, app=None, tx_kind="raw", verify=True, verify_workers=2):
        if len(peers) != cfg.n:
            raise ValueError("need one peer address per replica")
        self.cfg = cfg
        self.peers = peers
        self.app = app
        self.tx_kind = tx_kind
        self.verify = verify and tx_kind == "transfer" and app is not None
        self.loop = None
        self.intake = None
        self.out_queues = {}
        self.bytes_sent = 0
        self.dropped_frames = 0
        self.pending_verifies = 0
        self.executor = ThreadPoolExecutor(max_workers=max(1, verify_workers))
        self.replica = Replica(cfg, TcpServices(self), app=self._commit_gate())
        self._apply_next = None
        self._apply_ready = {}
        self._admit_buf = []
        self._admit_scheduled = False
        self._stop = None
        self._server = None
        self._tasks = []

    # -- commit-side verification pipeline ------------------------------------

    def _commit_gate(self):
        if self.app is None:
            return None
        if not self.verify:
            return self.app
        node = self

        class Gate:
            def on_commit(self, epoch, batches, now):
                node._queue_apply(epoch, batches, now)

        self._apply_next = None
        return Gate()

    def _queue_apply(self, epoch, batches, now):
        if self._apply_next is None:
            self._apply_next = epoch
        unverified = [
            tx
            for b in batches
            for tx in b.txs
            if tx not in self.app.verified_cache
        ]
        self._apply_ready[epoch] = [batches, now, len(unverified)]
        if not unverified:
            self._drain_applies()
            return
        chunk = max(1, len(unverified) // self.executor._max_workers)
        for start in range(0, len(unverified), chunk):
            part = unverified[start : start + chunk]
            try:
                fut = self.executor.submit(self._verify_many, part)
            except RuntimeError:
                return  # shutting down; the apply queue dies with the node
            fut.add_done_callback(
                lambda f, e=epoch, k=len(part): self._post(("verified", e, k, f.result()))
            )

    def _post(self, item):
        """Thread-safe intake push that tolerates a closing event loop."""
        try:
            self.loop.call_soon_threadsafe(self.intake.put_nowait, item)
        except RuntimeError:
            pass

    def _verify_many(self, txs):
        out = []
        for data in txs:
            status, tx = ledger_mod.verify_tx(data)
            if status == ledger_mod.VALID:
                out.append((data, tx))
        return out

    def _on_verified(self, epoch, count, results):
        entry = self._apply_ready.get(epoch)
        if entry is None:
            return
        for data, tx in results:
            self.app.verified_cache[data] = tx
        entry[2] -= count
        if entry[2] <= 0:
            self._drain_applies()

    def _drain_applies(self):
        while True:
            entry = self._apply_ready.get(self._apply_next)
            if entry is None or entry[2] > 0:
                return
            batches, now, _ = entry
            del self._apply_ready[self._apply_next]
            self.app.on_commit(self._apply_next, batches, now)
            self._apply_next += 1

    # -- transport ---------------------------------------------------------------

    def enqueue_frame(self, dest, frame):
        q = self.out_queues.get(dest)
        if q is None:
            return
        try:
            q.put_nowait(frame)
        except asyncio.QueueFull:
            self.dropped_frames += 1

    async def _writer_loop(self, j):
        backoff = 0.05
        host, port = self.peers[j]
        q = self.out_queues[j]
        while not self._stop.is_set():
            try:
                _, writer = await asyncio.open_connection(host, port)
            except OSError:
                await asyncio.sleep(backoff)
                backoff = min(backoff * 2, 2.0)
                continue
            backoff = 0.05
            try:
                while not self._stop.is_set():
                    frame = await q.get()
                    writer.write(frame)
                    self.bytes_sent += len(frame)
                    if q.empty():
                        await writer.drain()
            except (ConnectionError, OSError):
                continue
            finally:
                writer.close()

    async def _on_connection(self, reader, writer):
        try:
            while True:
                env = await read_frame(reader)
                kind = env.kind
                if kind == CLIENT_TX:
                    self._admit_client_tx(env.payload[0])
                elif kind == BLOCK_REQ and env.sender == CLIENT_SENDER:
                    resp = self.replica.serve_block(env.epoch)
                    writer.write(encode_frame(resp))
                    await writer.drain()
                else:
                    self.intake.put_nowait(("env", env))
        except (asyncio.IncompleteReadError, ConnectionError, ValueError, OSError, RuntimeError):
            pass
        finally:
            writer.close()

    def _admit_client_tx(self, payload):
        """Buffer admissions and verify them in chunks on the worker pool;
        per-transaction executor round-trips would swamp the crypto cost."""
        if not self.verify:
            self.intake.put_nowait(("client_tx", payload))
            return
        if self.pending_verifies > 20000 or self._stop.is_set():
            self.replica.rejected_txs += 1
            return
        self.pending_verifies += 1
        self._admit_buf.append(payload)
        if not self._admit_scheduled:
            self._admit_scheduled = True
            self.loop.call_later(0.002, self._flush_admissions)
        elif len(self._admit_buf) >= 256:
            self._flush_admissions()

    def _flush_admissions(self):
        self._admit_scheduled = False
        buf = self._admit_buf
        if not buf:
            return
        self._admit_buf = []
        try:
            fut = self.executor.submit(self._prevalidate_chunk, buf)
        except RuntimeError:  # executor already shut down
            self.pending_verifies -= len(buf)
            return
        fut.add_done_callback(lambda f: self._post(("admitted", f.result())))

    def _prevalidate_chunk(self, payloads):
        return [(p, self.app.prevalidate(p)) for p in payloads]

    def _on_admitted(self, results):
        self.pending_verifies -= len(results)
        for payload, status in results:
            if status == ledger_mod.VALID:
                self.replica.on_client_tx(payload)
            else:
                self.replica.rejected_txs += 1

    # -- event loop ------------------------------------------------------------------

    async def _consume(self):
        replica = self.replica
        intake = self.intake
        while True:
            item = await intake.get()
            tag = item[0]
            if tag == "env":
                replica.on_envelope(item[1])
            elif tag == "tick":
                replica.on_tick()
            elif tag == "call":
                item[1]()
            elif tag == "client_tx":
                replica.on_client_tx(item[1])
            elif tag == "admitted":
                self._on_admitted(item[1])
            elif tag == "verified":
                self._on_verified(item[1], item[2], item[3])
            elif tag == "stop":
                return

    async def _ticker(self):
        period = self.cfg.idle_sample_period
        while not self._stop.is_set():
            await asyncio.sleep(period)
            self.intake.put_nowait(("tick",))

    async def run(self, stop_event=None):
        """Serve until the stop event fires; returns the replica for inspection."""
        self.loop = asyncio.get_running_loop()
        self.intake = asyncio.Queue()
        self._stop = stop_event or asyncio.Event()
        me = self.cfg.replica_id
        for j in range(self.cfg.n):
            if j != me:
                self.out_queues[j] = asyncio.Queue(maxsize=OUT_QUEUE_FRAMES)
        host, port = self.peers[me]
        self._server = await asyncio.start_server(self._on_connection, host, port)
        self._tasks = [asyncio.create_task(self._writer_loop(j)) for j in self.out_queues]
        self._tasks.append(asyncio.create_task(self._ticker()))
        consumer = asyncio.create_task(self._consume())
        await self._stop.wait()
        self.replica.stopped = True
        self.intake.put_nowait(("stop",))
        await consumer
        for t in self._tasks:
            t.cancel()
        self._server.close()
        await self._server.wait_closed()
        self.executor.shutdown(wait=False)
        return self.replica


# -- load generation -----------------------------------------------------------------


class LoadGen:
    """Open-loop client: submits at a fixed aggregate rate spread across the
    replicas and polls committed blocks to measure commit latency."""

    def __init__(self, peers, rate_tps, duration, tx_kind="raw", tx_bytes=400,
                 keys=None, poll_interval=0.05):
        self.peers = peers
        self.rate = rate_tps
        self.duration = duration
        self.tx_kind = tx_kind
        self.tx_bytes = tx_bytes
        self.keys = keys or []
        self.poll_interval = poll_interval
        self.submitted = {}  # tx bytes -> (target index, submit wall time)
        self.commit_times = {}
        self.rejected_conns = 0
        self._seq = 0
        self._nonces = {}
        self._pregen = None

    def pregenerate(self, count=None):
        """Sign the whole run's transfers up front (clients pre-generate and
        replay; signing must not eat into the measurement window)."""
        count = count or int(self.rate * self.duration * 1.1) + len(self.peers)
        self._pregen = [self._build_tx(0) for _ in range(count)]
        self._pregen.reverse()
        return len(self._pregen)

    def _build_tx(self, target):
        self._seq += 1
        if self.tx_kind == "transfer":
            priv, pub = self.keys[self._seq % len(self.keys)]
            _, to_pub = self.keys[(self._seq + 1) % len(self.keys)]
            nonce = self._nonces.get(pub, 0) + 1
            self._nonces[pub] = nonce
            return ledger_mod.sign_transfer(priv, to_pub, 1, nonce)
        head = struct.pack(">HI", target, self._seq & 0xFFFFFFFF)
        return head + bytes(self.tx_bytes - len(head))

    def _make_tx(self, target):
        if self._pregen:
            return self._pregen.pop()
        return self._build_tx(target)

    async def _submit_loop(self, idx, writer, per_burst, interval, deadline):
        while time.time() < deadline:
            for _ in range(per_burst):
                tx = self._make_tx(idx)
                env = Envelope(CLIENT_TX, 0, CLIENT_SENDER, (tx,))
                writer.write(encode_frame(env))
                self.submitted[tx] = (idx, time.time())
            await writer.drain()
            await asyncio.sleep(interval)

    async def _poll_loop(self, idx, host, port, stop):
        epoch = 0
        reader, writer = await asyncio.open_connection(host, port)
        try:
            while not stop.is_set():
                writer.write(encode_frame(Envelope(BLOCK_REQ, epoch, CLIENT_SENDER, ())))
                await writer.drain()
                resp = await read_frame(reader)
                commit_time, blob = resp.payload
                if commit_time < 0:
                    await asyncio.sleep(self.poll_interval)
                    continue
                for batch in decode_block(blob):
                    for tx in batch.txs:
                        sub = self.submitted.get(tx)
                        if sub is not None and sub[0] == idx and tx not in self.commit_times:
                            self.commit_times[tx] = commit_time
                epoch += 1
        finally:
            writer.close()

    async def run(self):
        deadline = time.time() + self.duration
        per_target = self.rate / len(self.peers)
        interval = 0.02
        per_burst = max(1, round(per_target * interval))
        interval = per_burst / per_target if per_target > 0 else 1.0
        stop = asyncio.Event()
        submits = []
        polls = []
        for idx, (host, port) in enumerate(self.peers):
            _, writer = await asyncio.open_connection(host, port)
            submits.append(
                asyncio.create_task(
                    self._submit_loop(idx, writer, per_burst, interval, deadline)
                )
            )
            polls.append(asyncio.create_task(self._poll_loop(idx, host, port, stop)))
        await asyncio.gather(*submits)
        await asyncio.sleep(max(1.0, self.poll_interval * 4))
        stop.set()
        for p in polls:
            p.cancel()
        return self.report()

    def report(self):
        from .bench import BenchReport

        lats = []
        for tx, t_commit in self.commit_times.items():
            idx, t_sub = self.submitted[tx]
            lats.append(t_commit - t_sub)
        lats.sort()
        committed = len(lats)
        payload = committed * (self.tx_bytes if self.tx_kind == "raw" else ledger_mod.TX_SIZE)
        mean = sum(lats) / len(lats) if lats else 0.0

        def pct(p):
            return lats[min(len(lats) - 1, int(p * len(lats)))] if lats else 0.0

        return BenchReport(
            load_tps=self.rate,
            duration=self.duration,
            committed_tx=committed,
            payload_bytes=payload,
            tx_per_s=committed / self.duration,
            goodput_mib_s=payload / self.duration / (1024 * 1024),
            mean_latency_s=mean,
            p50_latency_s=pct(0.50),
            p99_latency_s=pct(0.99),
            rejected=0,
            commit_series=(),
        )
