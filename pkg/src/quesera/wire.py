"""Byte encodings for step messages, receive sets, and history payloads.

Everything here is canonical: set entries are sorted, integers are big-endian,
and decoding verifies the per-entry payload digests, so equal logical values
always produce identical bytes and corrupted frames fail loudly.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Iterable, Optional

from .chain import DIGEST_SIZE, ChainError, History, Proposal, decode_proposal

Entry = tuple[int, bytes]  # (sender id, payload bytes)
EntrySet = frozenset[Entry]

# Message kinds.  PLAIN carries a step payload; REQ/ACK/WIT are the
# request/acknowledge/witnessed announcement kinds of the witnessing layer.
PLAIN = "p"
REQ = "q"
ACK = "a"
WIT = "w"
_KINDS = (PLAIN, REQ, ACK, WIT)


class WireError(Exception):
    """Undecodable or integrity-violating frame."""


def _pack_bytes(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


def _unpack_bytes(data: bytes, off: int) -> tuple[bytes, int]:
    if off + 4 > len(data):
        raise WireError("truncated length prefix")
    (n,) = struct.unpack_from(">I", data, off)
    off += 4
    if off + n > len(data):
        raise WireError("truncated byte field")
    return data[off : off + n], off + n


def encode_entry_set(entries: Iterable[Entry]) -> bytes:
    """Receive-set encoding: count, then (sender u32, payload digest, payload)
    triples sorted by (sender, payload)."""
    items = sorted(set(entries))
    parts = [struct.pack(">I", len(items))]
    for sender, payload in items:
        parts.append(struct.pack(">I", sender))
        parts.append(hashlib.sha256(payload).digest())
        parts.append(_pack_bytes(payload))
    return b"".join(parts)


def decode_entry_set(data: bytes, off: int = 0) -> tuple[EntrySet, int]:
    if off + 4 > len(data):
        raise WireError("truncated set count")
    (count,) = struct.unpack_from(">I", data, off)
    off += 4
    out = []
    for _ in range(count):
        if off + 4 + DIGEST_SIZE > len(data):
            raise WireError("truncated set entry")
        (sender,) = struct.unpack_from(">I", data, off)
        off += 4
        digest = data[off : off + DIGEST_SIZE]
        off += DIGEST_SIZE
        payload, off = _unpack_bytes(data, off)
        if hashlib.sha256(payload).digest() != digest:
            raise WireError("set entry digest mismatch")
        out.append((sender, payload))
    return frozenset(out), off


def entry_set_bytes(data: bytes) -> EntrySet:
    entries, off = decode_entry_set(data)
    if off != len(data):
        raise WireError("trailing bytes after set")
    return entries


@dataclass(frozen=True, slots=True)
class StepMessage:
    """One frame of a threshold-clock layer.

    ``layer`` is a single-character lane tag so stacked layers can share the
    node's FIFO channels without confusing each other's steps.  ``prior_r``
    and ``prior_b`` piggyback the sender's just-completed receive/broadcast
    sets for viral catch-up; layers that do not need them send None.
    """

    layer: str
    kind: str
    sender: int
    step: int
    payload: bytes
    prior_r: Optional[EntrySet] = None
    prior_b: Optional[EntrySet] = None


def encode_step_message(msg: StepMessage) -> bytes:
    if len(msg.layer) != 1 or msg.kind not in _KINDS:
        raise WireError(f"bad layer/kind {msg.layer!r}/{msg.kind!r}")
    flags = (1 if msg.prior_r is not None else 0) | (2 if msg.prior_b is not None else 0)
    parts = [
        msg.layer.encode("ascii"),
        msg.kind.encode("ascii"),
        struct.pack(">BII", flags, msg.sender, msg.step),
        _pack_bytes(msg.payload),
    ]
    if msg.prior_r is not None:
        parts.append(encode_entry_set(msg.prior_r))
    if msg.prior_b is not None:
        parts.append(encode_entry_set(msg.prior_b))
    return b"".join(parts)


def decode_step_message(data: bytes) -> StepMessage:
    if len(data) < 11:
        raise WireError("frame too short")
    layer = data[0:1].decode("ascii")
    kind = data[1:2].decode("ascii")
    if kind not in _KINDS:
        raise WireError(f"unknown kind {kind!r}")
    flags, sender, step = struct.unpack_from(">BII", data, 2)
    payload, off = _unpack_bytes(data, 11)
    prior_r = prior_b = None
    if flags & 1:
        prior_r, off = decode_entry_set(data, off)
    if flags & 2:
        prior_b, off = decode_entry_set(data, off)
    if off != len(data):
        raise WireError("trailing bytes after frame")
    return StepMessage(layer, kind, sender, step, payload, prior_r, prior_b)


def encode_history(history: History) -> bytes:
    """History payload: u32 chain length, then the head proposal (absent for
    the empty history)."""
    if history.head is None:
        return struct.pack(">I", 0)
    return struct.pack(">I", history.length) + history.head.encode()


def decode_history(data: bytes, off: int = 0) -> tuple[History, int]:
    if off + 4 > len(data):
        raise WireError("truncated history length")
    (length,) = struct.unpack_from(">I", data, off)
    off += 4
    if length == 0:
        return History(head=None, length=0), off
    if off + DIGEST_SIZE + 16 > len(data):
        raise WireError("truncated history head")
    (mlen,) = struct.unpack_from(">I", data, off + DIGEST_SIZE + 12)
    end = off + DIGEST_SIZE + 16 + mlen
    if end > len(data):
        raise WireError("truncated history message")
    try:
        head = decode_proposal(data[off:end])
    except ChainError as exc:
        raise WireError(str(exc)) from exc
    return History(head=head, length=length), end


def history_bytes(data: bytes) -> History:
    history, off = decode_history(data)
    if off != len(data):
        raise WireError("trailing bytes after history")
    return history


def histories_of(entries: Iterable[Entry]) -> list[History]:
    """Decode each entry payload of a receive set as a history."""
    return [history_bytes(payload) for _, payload in entries]
