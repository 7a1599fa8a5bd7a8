"""Byzantine reliable broadcast, one instance per (epoch, source).

The source broadcasts its full batch once; the two all-to-all rounds that
follow carry only the 32-byte digest, so delivery can happen before the
payload is known. Counting is per distinct sender with first-writer-wins on
conflicting digests; equivocating senders are recorded as evidence but never
crash the instance.
"""

from .messages import BATCH, ECHO, READY, Envelope


class DuplicateStart(Exception):
    """The local replica already started this (epoch, source) instance."""


class RbcInstance:
    __slots__ = (
        "n",
        "epoch",
        "source",
        "me",
        "echo_threshold",
        "ready_amplify",
        "deliver_threshold",
        "started",
        "echoed",
        "readied",
        "delivered",
        "batch_digest",
        "echo_from",
        "ready_from",
        "echo_count",
        "ready_count",
        "equivocators",
    )

    def __init__(self, n, q, epoch, source, me):
        self.n = n
        self.epoch = epoch
        self.source = source
        self.me = me
        self.echo_threshold = q.echo
        self.ready_amplify = q.ready_amplify
        self.deliver_threshold = q.deliver
        self.started = False
        self.echoed = None  # digest we echoed, at most one
        self.readied = None  # digest we sent READY for, at most one
        self.delivered = None
        self.batch_digest = None  # digest of the batch received from source
        self.echo_from = {}  # sender -> digest, first wins
        self.ready_from = {}
        self.echo_count = {}  # digest -> count of distinct senders
        self.ready_count = {}
        self.equivocators = set()

    def start(self, batch, batch_digest, out):
        """Source-side start: broadcast the batch, then echo its digest."""
        if self.started:
            raise DuplicateStart(f"epoch {self.epoch} source {self.source}")
        self.started = True
        out.append((None, Envelope(BATCH, self.epoch, self.me, (batch,))))
        self._send_echo(batch_digest, out)
        return None

    def on_batch(self, d, out):
        """Digest of a batch received from the source (already hashed).

        Returns the delivered digest if this arrival completes delivery
        bookkeeping (it never does by itself; delivery needs READYs), None
        otherwise. A batch conflicting with a previously echoed digest is
        ignored, first writer wins.
        """
        if self.batch_digest is None:
            self.batch_digest = d
            if self.echoed is None:
                self._send_echo(d, out)
        return None

    def on_echo(self, sender, d, out):
        prev = self.echo_from.get(sender)
        if prev is not None:
            if prev != d:
                self.equivocators.add(sender)
            return None
        self.echo_from[sender] = d
        count = self.echo_count.get(d, 0) + 1
        self.echo_count[d] = count
        if count >= self.echo_threshold and self.readied is None:
            self._send_ready(d, out)
        return None

    def on_ready(self, sender, d, out):
        prev = self.ready_from.get(sender)
        if prev is not None:
            if prev != d:
                self.equivocators.add(sender)
            return None
        self.ready_from[sender] = d
        count = self.ready_count.get(d, 0) + 1
        self.ready_count[d] = count
        if count >= self.ready_amplify and self.readied is None:
            self._send_ready(d, out)
        if count >= self.deliver_threshold and self.delivered is None:
            self.delivered = d
            return d
        return None

    def _send_echo(self, d, out):
        self.echoed = d
        out.append((None, Envelope(ECHO, self.epoch, self.me, (self.source, d))))

    def _send_ready(self, d, out):
        self.readied = d
        out.append((None, Envelope(READY, self.epoch, self.me, (self.source, d))))
