"""Replica peers: operation logs, watermarked sync, and log pruning.

Each peer owns a set plus a log of the effectful operations it has applied,
every entry tagged with the operation's origin peer and a per-origin sequence
number.  Peers exchange asymmetric sync messages: the receiver rewrites the
incoming operations against its own unseen suffix, applies the survivors, and
keeps the original origin tags so the operations propagate onward.

Wire contract: a message carries a payload (origin-tagged operations) and an
acknowledgment map (highest origin_seq per origin the sender has applied).
For every origin o and seq s covered by the ack map, the receiver either
already holds o:s, or this message's payload carries it, or its effect
cancels against another operation covered by the same message (a pairing
the sender only forms between operations never previously offered to this
receiver, so the receiver cannot hold half of the pair), or it duplicates
an operation the receiver already holds.  The receiver may therefore treat
everything under the ack map as delivered, which is what lets mutually
canceling pairs vanish from the wire without stalling pruning.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import core
from .core import (
    CcssError,
    Element,
    Op,
    OpKind,
    OpSeq,
    make_delete,
    make_insert,
    normalize,
    parse_op,
    render_op,
    transform_remote,
)

PeerId = str

_PEER_ID_RE = re.compile(r"[A-Za-z0-9_.-]+")


class DuplicateNeighbor(CcssError):
    """A peer was configured with itself or a repeated peer as neighbor."""


class UnknownNeighbor(CcssError):
    """Sync was attempted with a peer that is not a configured neighbor."""


@dataclass(frozen=True)
class LogEntry:
    """One applied effectful operation, tagged with where it came from."""

    op: Op
    origin: PeerId
    origin_seq: int
    local_rev: int


@dataclass
class NeighborState:
    """What a peer knows about one neighbor's progress.

    sent_watermark: highest local_rev of our log the neighbor has
    acknowledged; received_watermark: highest origin_seq per origin the
    neighbor is known to have applied.  Both only ever grow.

    known_entries holds log entries the neighbor provably holds the intent
    of even though its acknowledgments do not cover them yet: when an
    incoming op is struck out as a duplicate of a local entry, the two are
    the same intent, so sending the local entry back would double-apply it.

    offered_entries records entries actually placed in a payload for this
    neighbor and not yet acknowledged.  Entries never offered can be
    summarized per element (the neighbor cannot hold any of them), while an
    offered entry may already sit applied at the neighbor, so any element
    tail containing one is repeated verbatim until acknowledged.
    """

    neighbor: PeerId
    sent_watermark: int = 0
    received_watermark: dict[PeerId, int] = field(default_factory=dict)
    known_entries: set[tuple[PeerId, int]] = field(default_factory=set)
    offered_entries: set[tuple[PeerId, int]] = field(default_factory=set)


@dataclass(frozen=True)
class TaggedOp:
    op: Op
    origin: PeerId
    origin_seq: int


@dataclass(frozen=True)
class SyncMessage:
    """One sync payload.  Treat as immutable once constructed.

    base_watermark declares the sender's revision at prepare time, so the
    receiver observes progress even when the payload normalizes to nothing.
    """

    sender: PeerId
    receiver: PeerId
    base_watermark: int
    payload: tuple[TaggedOp, ...]
    ack: dict[PeerId, int]


@dataclass
class PeerState:
    """A replica: its set, revision counter, log, and per-neighbor progress.

    rev counts every effectful operation ever applied here, local or remote.
    applied_seqs is the peer's own coverage map (highest origin_seq handled
    per origin, itself included); it makes redelivery idempotent.
    """

    id: PeerId
    data: set
    rev: int
    log: list[LogEntry]
    neighbors: dict[PeerId, NeighborState]
    applied_seqs: dict[PeerId, int]


def init_peer(
    peer_id: PeerId, initial: frozenset, neighbors: tuple[PeerId, ...]
) -> PeerState:
    if not _PEER_ID_RE.fullmatch(peer_id):
        raise ValueError(f"bad peer id: {peer_id!r}")
    seen: dict[PeerId, NeighborState] = {}
    for n in neighbors:
        if n == peer_id or n in seen:
            raise DuplicateNeighbor(f"{peer_id}: duplicate neighbor {n}")
        seen[n] = NeighborState(n)
    return PeerState(
        id=peer_id,
        data=set(initial),
        rev=0,
        log=[],
        neighbors=seen,
        applied_seqs={},
    )


def local_update(peer: PeerState, intent: str, x: Element) -> Op | None:
    """Perform an insert/delete intent locally.

    Returns the applied operation, or None when the intent had no effect
    (inserting a present element, deleting an absent one).  No-effect intents
    leave no trace: nothing is logged and nothing propagates.
    """
    if intent == "insert":
        op = make_insert(peer.data, x)
    elif intent == "delete":
        op = make_delete(peer.data, x)
    else:
        raise ValueError(f"unknown intent: {intent!r}")
    if op.is_nop:
        return None
    peer.data = set(core.apply_op(peer.data, op))
    peer.rev += 1
    seq = peer.applied_seqs.get(peer.id, 0) + 1
    peer.applied_seqs[peer.id] = seq
    peer.log.append(LogEntry(op, peer.id, seq, peer.rev))
    return op


def _element_tails(log, knows) -> dict[Element, list[LogEntry]]:
    """Per element, the run of log entries after the last one `knows` covers.

    Everything up to and including a covered entry is settled knowledge on
    that element, so only the trailing unknown run carries news.  Within a
    run the ops alternate (the log is a valid sequence), so an even run nets
    to nothing and an odd run nets to its final op.
    """
    tails: dict[Element, list[LogEntry]] = {}
    for e in log:
        if knows(e):
            tails[e.op.element] = []
        else:
            tails.setdefault(e.op.element, []).append(e)
    return tails


def prepare_sync(peer: PeerState, neighbor: PeerId) -> SyncMessage:
    """Build the message bringing `neighbor` up to date with this peer.

    Acknowledged progress is recorded only when acks come back, so a lost
    message is repaired by simply preparing again: everything still
    unacknowledged is resent and the receiver deduplicates.  Per element,
    the unknown tail of the log is summarized: an even tail is mutually
    canceling and avoids the wire entirely (the ack map still covers it,
    see the wire contract above) and an odd tail is represented by its
    final op alone.  Summarizing is only sound while the receiver cannot
    hold any piece of the tail, so a tail containing a previously offered
    entry is repeated verbatim instead and the receiver sorts it out.
    """
    state = peer.neighbors.get(neighbor)
    if state is None:
        raise UnknownNeighbor(f"{peer.id}: unknown neighbor {neighbor}")

    def knows(e: LogEntry) -> bool:
        return (
            e.origin == neighbor
            or e.local_rev <= state.sent_watermark
            or e.origin_seq <= state.received_watermark.get(e.origin, 0)
            or (e.origin, e.origin_seq) in state.known_entries
        )

    picked: list[LogEntry] = []
    for tail in _element_tails(peer.log, knows).values():
        if not tail:
            continue
        if any((e.origin, e.origin_seq) in state.offered_entries for e in tail):
            picked.extend(tail)
        elif len(tail) % 2 == 1:
            picked.append(tail[-1])
    picked.sort(key=lambda e: e.local_rev)
    state.offered_entries |= {(e.origin, e.origin_seq) for e in picked}
    return SyncMessage(
        sender=peer.id,
        receiver=neighbor,
        base_watermark=peer.rev,
        payload=tuple(TaggedOp(e.op, e.origin, e.origin_seq) for e in picked),
        ack=dict(peer.applied_seqs),
    )


def _acked_through(peer: PeerState, acks: dict[PeerId, int]) -> int:
    """Highest local_rev such that every retained entry below it is covered."""
    for entry in peer.log:
        if entry.origin_seq > acks.get(entry.origin, 0):
            return entry.local_rev - 1
    return peer.rev


def handle_sync(peer: PeerState, msg: SyncMessage) -> OpSeq:
    """Apply one sync message; returns the operations actually applied.

    Payload entries already covered by this peer's own coverage map are
    skipped, so redelivery is harmless.  What remains is normalized first:
    a surviving delete/reinsert pair nets to nothing here and must not be
    matched against local operations.  The survivors are then rewritten
    against the per-element net of local log entries the sender had not
    seen, and the non-Nop results are applied and logged under their
    original origin tags, ready to propagate onward.  Stale or empty
    messages are normal and return an empty tuple.
    """
    if msg.receiver != peer.id:
        raise ValueError(f"message for {msg.receiver} handled by {peer.id}")
    state = peer.neighbors.get(msg.sender)
    if state is None:
        raise UnknownNeighbor(f"{peer.id}: unknown neighbor {msg.sender}")

    pending = [
        t for t in msg.payload if t.origin_seq > peer.applied_seqs.get(t.origin, 0)
    ]

    # The rewrite baseline: per element, the net news among local entries
    # whose intent the sender has not seen.  Twin-matched entries count as
    # seen; the sender holds the same intent under its own tag, so its
    # later ops are not concurrent with them.
    def sender_knows(e: LogEntry) -> bool:
        return (
            e.origin == msg.sender
            or e.origin_seq <= msg.ack.get(e.origin, 0)
            or (e.origin, e.origin_seq) in state.known_entries
        )

    survivors: dict[Element, LogEntry] = {}
    for element, tail in _element_tails(peer.log, sender_knows).items():
        if len(tail) % 2 == 1:
            survivors[element] = tail[-1]
    unseen_by_sender = tuple(
        e.op for e in sorted(survivors.values(), key=lambda e: e.local_rev)
    )
    pending_ops = normalize(tuple(t.op for t in pending))
    rewritten = transform_remote(unseen_by_sender, pending_ops)

    applied: list[Op] = []
    for tagged, norm_op, op in zip(pending, pending_ops, rewritten):
        if not op.is_nop:
            peer.data = set(core.apply_op(peer.data, op))
            peer.rev += 1
            peer.log.append(LogEntry(op, tagged.origin, tagged.origin_seq, peer.rev))
            applied.append(op)
        elif not norm_op.is_nop:
            # Struck out as a duplicate: the sender owns the same intent, so
            # the matching local entry must never be sent back to it.
            twin = survivors[norm_op.element]
            state.known_entries.add((twin.origin, twin.origin_seq))
        if tagged.origin_seq > peer.applied_seqs.get(tagged.origin, 0):
            peer.applied_seqs[tagged.origin] = tagged.origin_seq

    # Everything under the ack map is now covered here: delivered just now,
    # known before, or canceled inside this very message.
    for origin, seq in msg.ack.items():
        if seq > peer.applied_seqs.get(origin, 0):
            peer.applied_seqs[origin] = seq
        if seq > state.received_watermark.get(origin, 0):
            state.received_watermark[origin] = seq
    state.sent_watermark = max(state.sent_watermark, _acked_through(peer, msg.ack))
    # Acknowledged entries leave the candidate pool by the watermark filter,
    # so the per-entry exception sets can forget them.
    for marks in (state.known_entries, state.offered_entries):
        stale = {
            k for k in marks if k[1] <= state.received_watermark.get(k[0], 0)
        }
        marks -= stale
    return tuple(applied)


def prune_log(peer: PeerState) -> int:
    """Drop log entries every neighbor has acknowledged; returns the count.

    An entry is prunable when its local_rev is at or below every neighbor's
    sent_watermark and its (origin, origin_seq) is covered by every
    neighbor's received_watermark.  A peer with no neighbors answers to
    nobody and prunes everything.
    """
    if not peer.log:
        return 0
    if peer.neighbors:
        floor = min(s.sent_watermark for s in peer.neighbors.values())
        keep = [
            e
            for e in peer.log
            if e.local_rev > floor
            or any(
                e.origin_seq > s.received_watermark.get(e.origin, 0)
                for s in peer.neighbors.values()
            )
        ]
    else:
        keep = []
    pruned = len(peer.log) - len(keep)
    peer.log[:] = keep
    return pruned


def split_message(msg: SyncMessage, parts: int) -> list[SyncMessage]:
    """Split a message into consecutive segments that deliver the same state.

    Each segment keeps the wire contract honest: its ack map only covers
    origin sequence numbers whose content is carried by this or an earlier
    segment (or was already covered by the original ack).  Handling the
    segments in order, even interleaved with other traffic, is equivalent to
    handling the original message.

    Ops touching the same element always ride in the same segment.  The
    receiver cancels and rewrites ops per element within one message, so
    tearing such a group apart would apply ops that the whole message nets
    away.  When grouping leaves fewer cut points than requested, fewer
    segments come back.
    """
    if parts <= 1 or len(msg.payload) <= 1:
        return [msg]
    last_use: dict[Element, int] = {}
    for i, t in enumerate(msg.payload):
        last_use[t.op.element] = i
    blocks: list[tuple[TaggedOp, ...]] = []
    start = 0
    horizon = 0
    for i, t in enumerate(msg.payload):
        horizon = max(horizon, last_use[t.op.element])
        if i == horizon:
            blocks.append(msg.payload[start : i + 1])
            start = i + 1
    parts = min(parts, len(blocks))
    if parts == 1:
        return [msg]
    size, extra = divmod(len(blocks), parts)
    chunks: list[tuple[TaggedOp, ...]] = []
    at = 0
    for i in range(parts):
        end = at + size + (1 if i < extra else 0)
        chunks.append(tuple(t for block in blocks[at:end] for t in block))
        at = end

    out: list[SyncMessage] = []
    for i, chunk in enumerate(chunks):
        first_later: dict[PeerId, int] = {}
        for later in chunks[i + 1 :]:
            for t in later:
                if t.origin not in first_later:
                    first_later[t.origin] = t.origin_seq
        ack: dict[PeerId, int] = {}
        for origin, seq in msg.ack.items():
            capped = min(seq, first_later.get(origin, seq + 1) - 1)
            if capped > 0:
                ack[origin] = capped
        out.append(
            SyncMessage(msg.sender, msg.receiver, msg.base_watermark, chunk, ack)
        )
    return out


# ---------------------------------------------------------------------------
# Wire encoding


def encode_sync_message(msg: SyncMessage) -> str:
    ack = ",".join(f"{o}:{s}" for o, s in sorted(msg.ack.items()))
    ops = ",".join(
        f"{render_op(t.op)}@{t.origin}:{t.origin_seq}" for t in msg.payload
    )
    return (
        f"MSG from={msg.sender} to={msg.receiver} "
        f"wm={msg.base_watermark} ack={ack} ops=[{ops}]"
    )


def parse_sync_message(line: str) -> SyncMessage:
    tokens = line.strip().split(" ")
    keys = ("from", "to", "wm", "ack", "ops")
    if len(tokens) != 6 or tokens[0] != "MSG":
        raise ValueError(f"malformed message: {line!r}")
    values: dict[str, str] = {}
    for token, expected in zip(tokens[1:], keys):
        key, eq, value = token.partition("=")
        if not eq or key != expected:
            raise ValueError(f"malformed message field: {token!r}")
        values[key] = value

    ack: dict[PeerId, int] = {}
    if values["ack"]:
        for item in values["ack"].split(","):
            origin, _, seq = item.rpartition(":")
            if not origin or not seq.isdigit():
                raise ValueError(f"malformed ack item: {item!r}")
            ack[origin] = int(seq)

    ops_text = values["ops"]
    if not (ops_text.startswith("[") and ops_text.endswith("]")):
        raise ValueError(f"malformed ops list: {ops_text!r}")
    payload: list[TaggedOp] = []
    inner = ops_text[1:-1]
    if inner:
        for item in core._split_top(inner):
            body, at, tag = item.rpartition("@")
            origin, _, seq = tag.rpartition(":")
            if not at or not origin or not seq.isdigit():
                raise ValueError(f"malformed payload item: {item!r}")
            payload.append(TaggedOp(parse_op(body), origin, int(seq)))

    if not values["wm"].isdigit():
        raise ValueError(f"malformed watermark: {values['wm']!r}")
    return SyncMessage(
        sender=values["from"],
        receiver=values["to"],
        base_watermark=int(values["wm"]),
        payload=tuple(payload),
        ack=ack,
    )
