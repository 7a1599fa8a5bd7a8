"""Byzantine behaviors, attached at the transport boundary.

A strategy wraps one replica's outbound traffic: it may drop frames, rewrite
them per destination (equivocation), or inject frames of its own. The replica
under the strategy keeps running the normal protocol, so protocol code never
special-cases tests.
"""

from .core import Batch
from .messages import BATCH, EST, Envelope

FAR_FUTURE_EPOCH = 1 << 40


class Mute:
    """Sends nothing at all (fail-silent without the crash bookkeeping)."""

    def __init__(self, me, n):
        pass

    def transform(self, dest, env, now, rng):
        return None


class RbcEquivocator:
    """Broadcasts different batch contents to the two halves of the cluster,
    so receivers echo conflicting digests for this source."""

    def __init__(self, me, n):
        self.me = me

    def transform(self, dest, env, now, rng):
        if env.kind == BATCH:
            batch = env.payload[0]
            if batch.origin == self.me:
                marker = b"\x01" if dest % 2 else b"\x02"
                forged = Batch(batch.txs + (marker,), batch.origin, batch.epoch)
                return Envelope(BATCH, env.epoch, env.sender, (forged,))
        return env


class EstEquivocator:
    """Flips the bit of every EST vote sent to odd destinations."""

    def __init__(self, me, n):
        pass

    def transform(self, dest, env, now, rng):
        if env.kind == EST and dest % 2:
            k, r, b = env.payload
            return Envelope(EST, env.epoch, env.sender, (k, r, b ^ 1))
        return env


class EpochSpammer:
    """Sends otherwise-honest traffic but periodically floods votes tagged
    with an absurdly distant epoch number (anti-starvation-guard probe)."""

    inject_period = 0.05

    def __init__(self, me, n):
        self.me = me

    def transform(self, dest, env, now, rng):
        return env

    def inject(self, now, emit):
        emit(None, Envelope(EST, FAR_FUTURE_EPOCH, self.me, (0, 1, 1)))


STRATEGIES = {
    "mute": Mute,
    "rbc_equivocate": RbcEquivocator,
    "est_equivocate": EstEquivocator,
    "epoch_spam": EpochSpammer,
}


def make_strategy(behavior, me, n):
    try:
        return STRATEGIES[behavior](me, n)
    except KeyError:
        raise ValueError(f"unknown byzantine behavior {behavior!r}") from None
