"""Shared domain types: replica configuration, quorum arithmetic, batches and
their SHA-256 identities.

Everything here is immutable after construction and safe to share between
concurrent executors.
"""

import hashlib
import struct
from collections import namedtuple
from dataclasses import dataclass

MIB = 1024 * 1024

# Aggregate decision budget split across proposers (25/n MB per batch).
DEFAULT_DECISION_BUDGET = 25_000_000


class ConfigError(ValueError):
    """Raised for configurations that violate n >= 3f+1 or field bounds."""


def default_f(n):
    """Largest tolerated Byzantine count for n replicas."""
    return (n - 1) // 3


def default_batch_size(n, total_budget_bytes=DEFAULT_DECISION_BUDGET):
    """Per-replica batch size: the aggregate decision budget split n ways."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    return total_budget_bytes // n


Quorums = namedtuple("Quorums", "echo ready_amplify deliver aux")


def quorums(cfg):
    """Thresholds for reliable broadcast and binary-vote collection.

    echo: ceil((n+f+1)/2) matching ECHOes before sending READY.
    ready_amplify: f+1 READYs before amplifying our own READY.
    deliver: 2f+1 READYs to deliver.
    aux: n-f AUX votes to close a binary round.
    """
    n, f = cfg.n, cfg.f
    return Quorums(
        echo=(n + f + 2) // 2,
        ready_amplify=f + 1,
        deliver=2 * f + 1,
        aux=n - f,
    )


@dataclass(frozen=True)
class Config:
    """Static per-replica configuration, fixed for the lifetime of the run.

    f defaults to floor((n-1)/3) and batch_size_bytes to the 25 MB aggregate
    budget divided by n. round_timeout_initial defaults to 4x a 50 ms RTT
    estimate; deployments on slower links should raise it.
    """

    n: int
    replica_id: int = 0
    f: int = -1
    batch_size_bytes: int = -1
    max_epochs: int = 12
    pool_timeout: float = 0.5
    idle_sample_period: float = 0.002
    idle_sample_count: int = 3
    idle_fraction: float = 0.05
    link_capacity_bytes_per_s: float = 600 * MIB
    round_timeout_initial: float = 0.2
    round_timeout_factor: float = 2.0
    memory_budget_bytes: int = 1 << 30
    block_retention: int = 0  # committed epochs to keep payload for; 0 = all

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.f < 0:
            object.__setattr__(self, "f", default_f(self.n))
        if self.batch_size_bytes < 0:
            object.__setattr__(self, "batch_size_bytes", default_batch_size(self.n))
        if self.n < 3 * self.f + 1:
            raise ConfigError(f"n={self.n} violates n >= 3f+1 for f={self.f}")
        if not 0 <= self.replica_id < self.n:
            raise ConfigError(f"replica_id {self.replica_id} outside [0, {self.n})")
        if self.batch_size_bytes <= 0:
            raise ConfigError("batch_size_bytes must be > 0")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if not 0 < self.idle_fraction < 1:
            raise ConfigError("idle_fraction must be in (0, 1)")
        if self.idle_sample_count < 1:
            raise ConfigError("idle_sample_count must be >= 1")
        if self.round_timeout_initial <= 0 or self.round_timeout_factor < 1:
            raise ConfigError("bad round timeout schedule")


def config_from_dict(data, **overrides):
    """Build a Config from a flat key/value mapping, e.g. a parsed TOML file.

    Unknown keys are rejected so typos in config files fail loudly.
    """
    fields = dict(data)
    fields.update({k: v for k, v in overrides.items() if v is not None})
    known = set(Config.__dataclass_fields__)
    unknown = set(fields) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return Config(**fields)


def load_config(path, **overrides):
    import tomli

    with open(path, "rb") as fh:
        return config_from_dict(tomli.load(fh), **overrides)


# --- Batches ---------------------------------------------------------------
#
# Canonical encoding (digests must be identical on every replica):
#   origin u16 | epoch u64 | tx count u32 | each tx: u32 length + bytes
# All integers big-endian.

_BATCH_HEAD = struct.Struct(">HQI")
_U32 = struct.Struct(">I")


class Batch:
    """An ordered list of transactions proposed by one replica in one epoch."""

    __slots__ = ("txs", "origin", "epoch", "_encoded")

    def __init__(self, txs, origin, epoch):
        self.txs = tuple(txs)
        self.origin = origin
        self.epoch = epoch
        self._encoded = None

    def encode(self):
        enc = self._encoded
        if enc is None:
            parts = [_BATCH_HEAD.pack(self.origin, self.epoch, len(self.txs))]
            for tx in self.txs:
                parts.append(_U32.pack(len(tx)))
                parts.append(tx)
            enc = self._encoded = b"".join(parts)
        return enc

    @classmethod
    def decode(cls, data):
        origin, epoch, count = _BATCH_HEAD.unpack_from(data, 0)
        off = _BATCH_HEAD.size
        txs = []
        for _ in range(count):
            (ln,) = _U32.unpack_from(data, off)
            off += 4
            txs.append(bytes(data[off : off + ln]))
            if len(txs[-1]) != ln:
                raise ValueError("truncated batch")
            off += ln
        if off != len(data):
            raise ValueError("trailing bytes after batch")
        return cls(txs, origin, epoch)

    @property
    def payload_bytes(self):
        return sum(len(tx) for tx in self.txs)

    def __eq__(self, other):
        return (
            isinstance(other, Batch)
            and self.origin == other.origin
            and self.epoch == other.epoch
            and self.txs == other.txs
        )

    def __hash__(self):
        return hash((self.origin, self.epoch, self.txs))

    def __repr__(self):
        return f"Batch(origin={self.origin}, epoch={self.epoch}, txs={len(self.txs)})"


def digest(batch):
    """SHA-256 of the canonical batch encoding; 32 bytes."""
    return hashlib.sha256(batch.encode()).digest()


def digest_bytes(data):
    return hashlib.sha256(data).digest()
