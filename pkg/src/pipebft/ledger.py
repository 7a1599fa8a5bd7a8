"""Cryptocurrency application layer: fixed-size signed transfer transactions,
an account-balance state machine, and block retrieval by f+1 matching copies.

Transfers are 400 bytes on the wire: a canonical preimage (sender and
recipient compressed secp256k1 points, amount, nonce), the DER signature
length and bytes, then zero padding. Every replica verifies signatures before
applying; invalid, replayed, or overdrawing transfers are skipped outcomes,
never faults.
"""

import csv
import hashlib
import struct

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    PublicFormat,
)

TX_SIZE = 400
PUBKEY_SIZE = 33  # compressed point
_PREIMAGE = struct.Struct(f">{PUBKEY_SIZE}s{PUBKEY_SIZE}sQQ")
_SIGLEN = struct.Struct(">H")
_CURVE = ec.SECP256K1()
_ECDSA = ec.ECDSA(hashes.SHA256())

VALID = "valid"
BAD_SIGNATURE = "bad_signature"
MALFORMED = "malformed"
BAD_NONCE = "bad_nonce"
OVERDRAFT = "overdraft"
APPLIED = "applied"


class NoQuorum(Exception):
    """fetch_block could not find f+1 matching copies."""


def keypair_from_seed(seed_bytes):
    """Deterministic keypair for tests and load generation."""
    secret = int.from_bytes(hashlib.sha256(seed_bytes).digest(), "big")
    order = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
    priv = ec.derive_private_key(secret % (order - 1) + 1, _CURVE)
    return priv, pubkey_bytes(priv.public_key())


def pubkey_bytes(pub):
    return pub.public_bytes(Encoding.X962, PublicFormat.CompressedPoint)


class TransferTx:
    __slots__ = ("from_pub", "to_pub", "amount", "nonce", "signature")

    def __init__(self, from_pub, to_pub, amount, nonce, signature):
        self.from_pub = from_pub
        self.to_pub = to_pub
        self.amount = amount
        self.nonce = nonce
        self.signature = signature

    def preimage(self):
        return _PREIMAGE.pack(self.from_pub, self.to_pub, self.amount, self.nonce)


def sign_transfer(priv, to_pub, amount, nonce):
    """Build one 400-byte signed transfer from `priv`'s account."""
    from_pub = pubkey_bytes(priv.public_key())
    pre = _PREIMAGE.pack(from_pub, to_pub, amount, nonce)
    sig = priv.sign(pre, _ECDSA)
    body = pre + _SIGLEN.pack(len(sig)) + sig
    if len(body) > TX_SIZE:
        raise ValueError("signature too large for fixed-size transfer")
    return body + bytes(TX_SIZE - len(body))


def parse_transfer(data):
    if len(data) != TX_SIZE:
        raise ValueError("transfer must be exactly 400 bytes")
    from_pub, to_pub, amount, nonce = _PREIMAGE.unpack_from(data, 0)
    off = _PREIMAGE.size
    (siglen,) = _SIGLEN.unpack_from(data, off)
    off += 2
    if off + siglen > TX_SIZE:
        raise ValueError("signature overruns the transfer")
    return TransferTx(from_pub, to_pub, amount, nonce, data[off : off + siglen])


def verify_tx(data):
    """(VALID, TransferTx) or (BAD_SIGNATURE | MALFORMED, maybe tx)."""
    try:
        tx = parse_transfer(data)
        pub = ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, tx.from_pub)
    except (ValueError, TypeError):
        return MALFORMED, None
    try:
        pub.verify(tx.signature, tx.preimage(), _ECDSA)
    except InvalidSignature:
        return BAD_SIGNATURE, tx
    return VALID, tx


class LedgerState:
    """Account balances plus per-account nonces; total supply is invariant."""

    def __init__(self, genesis):
        self.balances = dict(genesis)
        self.nonces = {}
        self.genesis_total = sum(genesis.values())

    def total(self):
        return sum(self.balances.values())

    def apply_block(self, txs, verified=None):
        """Apply committed transfers in order; returns one outcome per tx.

        `verified` maps tx bytes already checked to their parsed TransferTx,
        letting callers verify on worker threads and apply on the event loop.
        """
        outcomes = []
        for data in txs:
            pre = verified.get(data) if verified is not None else None
            if pre is not None:
                status, tx = VALID, pre
            else:
                status, tx = verify_tx(data)
            if status != VALID:
                outcomes.append(status)
                continue
            if tx.nonce != self.nonces.get(tx.from_pub, 0) + 1:
                outcomes.append(BAD_NONCE)
                continue
            if self.balances.get(tx.from_pub, 0) < tx.amount:
                outcomes.append(OVERDRAFT)
                continue
            self.balances[tx.from_pub] -= tx.amount
            self.balances[tx.to_pub] = self.balances.get(tx.to_pub, 0) + tx.amount
            self.nonces[tx.from_pub] = tx.nonce
            outcomes.append(APPLIED)
        return outcomes

    def state_hash(self):
        h = hashlib.sha256()
        for pub in sorted(self.balances):
            h.update(pub)
            h.update(self.balances[pub].to_bytes(8, "big"))
            h.update(self.nonces.get(pub, 0).to_bytes(8, "big"))
        return h.hexdigest()

    def dump_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pubkey", "balance"])
            for pub in sorted(self.balances):
                w.writerow([pub.hex(), self.balances[pub]])


def load_genesis(path):
    """Genesis allocation as `hex_pubkey = amount` lines."""
    genesis = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            genesis[bytes.fromhex(key.strip())] = int(value.strip())
    return genesis


def save_genesis(path, genesis):
    with open(path, "w") as fh:
        for pub in sorted(genesis):
            fh.write(f"{pub.hex()} = {genesis[pub]}\n")


def fetch_block(epoch, request, peers, f):
    """Ask 2f+1 replicas for epoch's block; return the copy seen f+1 times.

    `request(peer, epoch)` returns the block bytes a peer claims, or None.
    Raises NoQuorum when no copy is duplicated f+1 times (retry with another
    peer subset).
    """
    quorum = 2 * f + 1
    if len(peers) < quorum:
        raise ValueError(f"need at least {quorum} peers")
    counts = {}
    for peer in peers[:quorum]:
        blob = request(peer, epoch)
        if blob is None:
            continue
        counts[blob] = counts.get(blob, 0) + 1
        if counts[blob] >= f + 1:
            return blob
    raise NoQuorum(f"no block copy for epoch {epoch} matched {f + 1} times")


class LedgerApp:
    """Commit-stream consumer: verifies (with memoization) then applies.

    Verification is CPU-bound; `verified_cache` lets the node verify batches
    on worker threads ahead of time, so apply stays on the event loop.
    """

    def __init__(self, genesis, verify=True):
        self.state = LedgerState(genesis)
        self.verify = verify
        self.verified_cache = {}
        self.outcomes = []
        self.commits = 0

    def prevalidate(self, data):
        """Verify one tx (worker-thread safe); memoizes the parse."""
        status, tx = verify_tx(data)
        if status == VALID:
            self.verified_cache[data] = tx
        return status

    def on_commit(self, epoch, batches, now):
        self.commits += 1
        for batch in batches:
            if self.verify:
                outcomes = self.state.apply_block(batch.txs, self.verified_cache)
                for tx in batch.txs:
                    self.verified_cache.pop(tx, None)
            else:
                outcomes = self.state.apply_block(batch.txs, _TRUSTING)
            self.outcomes.extend(outcomes)


class _Trusting(dict):
    """Sentinel cache that treats every tx as pre-verified (verification
    disabled); parses but never checks signatures."""

    def get(self, data, default=None):
        try:
            return parse_transfer(data)
        except ValueError:
            return None


_TRUSTING = _Trusting()
