"""Wire envelopes and the bit-exact frame codec.

Frame layout: u32 length | u8 kind | u64 epoch | u16 sender | payload, all
big-endian; length counts everything after itself. Inside the process an
Envelope carries its payload as a decoded tuple; encoding happens only at a
real socket boundary (and in codec tests). frame_size() reports the on-wire
size without encoding so the simulator can model bandwidth cheaply.
"""

import struct

from .core import Batch

BATCH = 1
ECHO = 2
READY = 3
EST = 4
COORD = 5
AUX = 6
DECIDE = 7
BATCH_REQ = 8
BATCH_RESP = 9
CLIENT_TX = 10
BLOCK_REQ = 11
BLOCK_RESP = 12

KIND_NAMES = {
    BATCH: "BATCH",
    ECHO: "ECHO",
    READY: "READY",
    EST: "EST",
    COORD: "COORD",
    AUX: "AUX",
    DECIDE: "DECIDE",
    BATCH_REQ: "BATCH_REQ",
    BATCH_RESP: "BATCH_RESP",
    CLIENT_TX: "CLIENT_TX",
    BLOCK_REQ: "BLOCK_REQ",
    BLOCK_RESP: "BLOCK_RESP",
}

# sender id reserved for client connections (not a replica)
CLIENT_SENDER = 0xFFFF

HEADER = struct.Struct(">IBQH")
HEADER_SIZE = HEADER.size  # 15 bytes, 4 of which are the length prefix

_VOTE = struct.Struct(">HIB")  # (instance k, round r, bit)
_ECHOP = struct.Struct(">H32s")  # (source, digest)
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_F64 = struct.Struct(">d")

DIGEST_SIZE = 32


class Envelope:
    __slots__ = ("kind", "epoch", "sender", "payload")

    def __init__(self, kind, epoch, sender, payload=()):
        self.kind = kind
        self.epoch = epoch
        self.sender = sender
        self.payload = payload

    def __eq__(self, other):
        return (
            isinstance(other, Envelope)
            and self.kind == other.kind
            and self.epoch == other.epoch
            and self.sender == other.sender
            and self.payload == other.payload
        )

    def __repr__(self):
        return (
            f"Envelope({KIND_NAMES.get(self.kind, self.kind)}, epoch={self.epoch},"
            f" sender={self.sender}, payload={self.payload!r})"
        )


def _encode_payload(kind, payload):
    if kind == BATCH or kind == BATCH_RESP:
        return payload[0].encode()
    if kind == ECHO or kind == READY:
        return _ECHOP.pack(payload[0], payload[1])
    if EST <= kind <= DECIDE:
        return _VOTE.pack(payload[0], payload[1], payload[2])
    if kind == BATCH_REQ:
        digests = payload[0]
        return _U32.pack(len(digests)) + b"".join(digests)
    if kind == CLIENT_TX:
        return payload[0]
    if kind == BLOCK_REQ:
        return b""
    if kind == BLOCK_RESP:
        return _F64.pack(payload[0]) + payload[1]
    raise ValueError(f"unknown kind {kind}")


def _decode_payload(kind, data):
    if kind == BATCH or kind == BATCH_RESP:
        return (Batch.decode(data),)
    if kind == ECHO or kind == READY:
        return _ECHOP.unpack(data)
    if EST <= kind <= DECIDE:
        return _VOTE.unpack(data)
    if kind == BATCH_REQ:
        (count,) = _U32.unpack_from(data, 0)
        if len(data) != 4 + count * DIGEST_SIZE:
            raise ValueError("bad BATCH_REQ payload")
        return (
            tuple(
                bytes(data[4 + i * DIGEST_SIZE : 4 + (i + 1) * DIGEST_SIZE])
                for i in range(count)
            ),
        )
    if kind == CLIENT_TX:
        return (bytes(data),)
    if kind == BLOCK_REQ:
        if data:
            raise ValueError("BLOCK_REQ carries no payload")
        return ()
    if kind == BLOCK_RESP:
        return (_F64.unpack_from(data, 0)[0], bytes(data[8:]))
    raise ValueError(f"unknown kind {kind}")


# fixed payload sizes by kind; None means payload-dependent
_FIXED_PAYLOAD = {
    ECHO: 2 + DIGEST_SIZE,
    READY: 2 + DIGEST_SIZE,
    EST: 7,
    COORD: 7,
    AUX: 7,
    DECIDE: 7,
    BLOCK_REQ: 0,
}


def payload_size(kind, payload):
    fixed = _FIXED_PAYLOAD.get(kind)
    if fixed is not None:
        return fixed
    if kind == BATCH or kind == BATCH_RESP:
        return len(payload[0].encode())
    if kind == BATCH_REQ:
        return 4 + DIGEST_SIZE * len(payload[0])
    if kind == CLIENT_TX:
        return len(payload[0])
    if kind == BLOCK_RESP:
        return 8 + len(payload[1])
    raise ValueError(f"unknown kind {kind}")


def frame_size(env):
    """On-wire frame size in bytes, computed without encoding."""
    return HEADER_SIZE + payload_size(env.kind, env.payload)


def encode_frame(env):
    body = _encode_payload(env.kind, env.payload)
    return HEADER.pack(len(body) + 11, env.kind, env.epoch, env.sender) + body


def encode_block(batches):
    """Committed-epoch block: u32 batch count, then u32 length + batch bytes
    per batch, in digest order. Byte-identical on every correct replica."""
    parts = [_U32.pack(len(batches))]
    for b in batches:
        enc = b.encode()
        parts.append(_U32.pack(len(enc)))
        parts.append(enc)
    return b"".join(parts)


def decode_block(data):
    (count,) = _U32.unpack_from(data, 0)
    off = 4
    batches = []
    for _ in range(count):
        (ln,) = _U32.unpack_from(data, off)
        off += 4
        batches.append(Batch.decode(data[off : off + ln]))
        off += ln
    if off != len(data):
        raise ValueError("trailing bytes after block")
    return tuple(batches)


def decode_frame(buf):
    """Decode one frame from the head of buf; returns (Envelope, bytes consumed).

    Raises ValueError on malformed frames and IndexError-like short reads via
    struct errors; callers treat both as connection-fatal.
    """
    length, kind, epoch, sender = HEADER.unpack_from(buf, 0)
    end = 4 + length
    if len(buf) < end:
        raise ValueError("short frame")
    payload = _decode_payload(kind, bytes(buf[HEADER_SIZE:end]))
    return Envelope(kind, epoch, sender, payload), end
