"""Peer state machine: logs, sync exchange, pruning, segmentation, wire."""

import pytest

from ccss.core import NOP, Op
from ccss.peer import (
    DuplicateNeighbor,
    SyncMessage,
    TaggedOp,
    UnknownNeighbor,
    encode_sync_message,
    handle_sync,
    init_peer,
    local_update,
    parse_sync_message,
    prepare_sync,
    prune_log,
    split_message,
)


def make_pair(initial=frozenset({1, 2})):
    p = init_peer("P", initial, ("Q",))
    q = init_peer("Q", initial, ("P",))
    return p, q


def exchange(src, dst):
    return handle_sync(dst, prepare_sync(src, dst.id))


# ---------------------------------------------------------------------------
# init_peer / local_update


def test_init_peer_fields():
    p = init_peer("P", frozenset({1, 2}), ("Q",))
    assert p.data == {1, 2}
    assert p.rev == 0
    assert p.log == []
    assert set(p.neighbors) == {"Q"}
    assert p.neighbors["Q"].sent_watermark == 0
    assert p.applied_seqs == {}


def test_init_peer_rejects_self_and_duplicates():
    with pytest.raises(DuplicateNeighbor):
        init_peer("P", frozenset({1}), ("P",))
    with pytest.raises(DuplicateNeighbor):
        init_peer("P", frozenset(), ("Q", "Q"))
    with pytest.raises(ValueError):
        init_peer("P Q", frozenset(), ())


def test_isolated_peer():
    p = init_peer("P", frozenset(), ())
    assert p.neighbors == {}
    assert local_update(p, "insert", 1) == Op.insert(1)
    assert p.data == {1}


def test_local_update_applies_and_logs():
    p = init_peer("P", frozenset({1, 2}), ("Q",))
    assert local_update(p, "insert", 3) == Op.insert(3)
    assert local_update(p, "delete", 3) == Op.delete(3)
    assert p.data == {1, 2}
    assert p.rev == 2
    assert [(e.op, e.origin, e.origin_seq, e.local_rev) for e in p.log] == [
        (Op.insert(3), "P", 1, 1),
        (Op.delete(3), "P", 2, 2),
    ]


def test_local_update_no_effect_leaves_no_trace():
    p = init_peer("P", frozenset({1, 2}), ("Q",))
    assert local_update(p, "insert", 2) is None
    assert local_update(p, "delete", 9) is None
    assert p.rev == 0
    assert p.log == []
    assert p.applied_seqs == {}


def test_local_update_rejects_unknown_intent():
    p = init_peer("P", frozenset(), ())
    with pytest.raises(ValueError):
        local_update(p, "upsert", 1)


# ---------------------------------------------------------------------------
# prepare_sync


def test_prepare_cancelled_pair_sends_nothing_but_acks():
    p, _ = make_pair()
    local_update(p, "insert", 3)
    local_update(p, "delete", 3)
    msg = prepare_sync(p, "Q")
    assert msg.payload == ()
    assert msg.base_watermark == 2
    # The coverage map still accounts for the pair, so the receiver can
    # treat both ops as delivered.
    assert msg.ack == {"P": 2}


def test_prepare_sends_net_effect_in_log_order():
    _, q = make_pair()
    local_update(q, "delete", 2)
    local_update(q, "insert", 3)
    msg = prepare_sync(q, "P")
    assert [t.op for t in msg.payload] == [Op.delete(2), Op.insert(3)]
    assert [(t.origin, t.origin_seq) for t in msg.payload] == [("Q", 1), ("Q", 2)]


def test_prepare_empty_log():
    p, _ = make_pair()
    msg = prepare_sync(p, "Q")
    assert msg.payload == ()
    assert msg.ack == {}
    assert msg.base_watermark == 0


def test_prepare_unknown_neighbor():
    p, _ = make_pair()
    with pytest.raises(UnknownNeighbor):
        prepare_sync(p, "R")


def test_prepare_resends_offered_tail_verbatim_after_loss():
    p, q = make_pair(frozenset())
    local_update(p, "insert", 1)
    lost = prepare_sync(p, "Q")
    assert [t.op for t in lost.payload] == [Op.insert(1)]
    # The message never arrives.  A later delete makes the element's pending
    # run even, but the receiver may already hold the offered insert, so the
    # whole run is repeated instead of summarized away.
    local_update(p, "delete", 1)
    retry = prepare_sync(p, "Q")
    assert [t.op for t in retry.payload] == [Op.insert(1), Op.delete(1)]
    handle_sync(q, retry)
    assert q.data == set()
    assert q.applied_seqs == {"P": 2}


def test_prepare_summarizes_virgin_run_to_final_op():
    p, _ = make_pair(frozenset())
    local_update(p, "insert", 1)
    local_update(p, "delete", 1)
    local_update(p, "insert", 1)
    msg = prepare_sync(p, "Q")
    # Odd run on one element, never offered before: only the net op goes out.
    assert [(t.op, t.origin_seq) for t in msg.payload] == [(Op.insert(1), 3)]


# ---------------------------------------------------------------------------
# handle_sync


def test_two_peer_reconciliation():
    p, q = make_pair()
    local_update(p, "insert", 3)
    local_update(p, "delete", 3)
    local_update(q, "delete", 2)
    local_update(q, "insert", 3)

    assert exchange(p, q) == ()  # the pair cancels on the wire
    assert q.data == {1, 3}
    applied = exchange(q, p)
    assert applied == (Op.delete(2), Op.insert(3))
    assert p.data == {1, 3}
    assert p.rev == 4


def test_handle_empty_payload_still_advances_watermarks():
    p, q = make_pair()
    local_update(p, "insert", 3)
    local_update(p, "delete", 3)
    msg = prepare_sync(p, "Q")
    assert msg.payload == ()
    assert handle_sync(q, msg) == ()
    assert q.applied_seqs == {"P": 2}
    assert q.neighbors["P"].received_watermark == {"P": 2}


def test_handle_redelivery_is_idempotent():
    p, q = make_pair()
    local_update(p, "insert", 3)
    msg = prepare_sync(p, "Q")
    assert handle_sync(q, msg) == (Op.insert(3),)
    before = (set(q.data), q.rev, list(q.log))
    assert handle_sync(q, msg) == ()
    assert (set(q.data), q.rev, list(q.log)) == before


def test_handle_concurrent_same_op_strikes_duplicate():
    p, q = make_pair()
    local_update(p, "insert", 3)
    local_update(q, "insert", 3)
    assert exchange(p, q) == ()  # duplicate intent, applied nowhere twice
    assert q.data == {1, 2, 3}
    assert exchange(q, p) == ()
    assert p.data == {1, 2, 3}
    # Neither peer ever echoes the shared intent back again.
    assert prepare_sync(p, "Q").payload == ()
    assert prepare_sync(q, "P").payload == ()


def test_handle_wrong_receiver_and_unknown_sender():
    p, q = make_pair()
    msg = prepare_sync(p, "Q")
    with pytest.raises(ValueError):
        handle_sync(p, msg)
    stray = SyncMessage("R", "Q", 0, (), {})
    with pytest.raises(UnknownNeighbor):
        handle_sync(q, stray)


def test_echo_freedom():
    p, q = make_pair()
    local_update(p, "insert", 3)
    exchange(p, q)
    back = prepare_sync(q, "P")
    assert all(t.origin != "P" for t in back.payload)
    assert handle_sync(p, back) == ()
    assert p.data == {1, 2, 3}


def test_relay_keeps_origin_tags():
    p = init_peer("P", frozenset({1}), ("Q",))
    q = init_peer("Q", frozenset({1}), ("P", "R"))
    r = init_peer("R", frozenset({1}), ("Q",))
    local_update(p, "insert", 5)
    exchange(p, q)
    entry = q.log[-1]
    assert (entry.origin, entry.origin_seq, entry.op) == ("P", 1, Op.insert(5))
    exchange(q, r)
    assert r.data == {1, 5}
    assert r.log[-1].origin == "P"
    # R's acknowledgment of P's op travels back through Q.
    exchange(r, q)
    assert q.neighbors["R"].received_watermark.get("P") == 1


# ---------------------------------------------------------------------------
# prune_log


def test_prune_requires_full_acknowledgment():
    p, q = make_pair()
    local_update(p, "insert", 3)
    assert prune_log(p) == 0  # Q acked nothing yet
    exchange(p, q)
    assert prune_log(p) == 0  # still nothing: acks come back, not forward
    exchange(q, p)
    assert prune_log(p) == 1
    assert p.log == []


def test_prune_after_full_sync_empties_both_logs():
    p, q = make_pair()
    local_update(p, "insert", 3)
    local_update(p, "delete", 3)
    local_update(q, "delete", 2)
    local_update(q, "insert", 3)
    exchange(p, q)
    exchange(q, p)
    exchange(p, q)
    assert p.data == q.data == {1, 3}
    assert prune_log(p) == 4  # own pair plus the two relayed entries
    assert prune_log(q) == 2
    assert p.log == [] and q.log == []
    # Pruned peers still sync cleanly afterwards.
    local_update(p, "insert", 9)
    exchange(p, q)
    assert q.data == {1, 3, 9}


def test_prune_isolated_peer_drops_everything():
    p = init_peer("P", frozenset(), ())
    local_update(p, "insert", 1)
    local_update(p, "insert", 2)
    assert prune_log(p) == 2
    assert p.log == []
    assert prune_log(p) == 0


# ---------------------------------------------------------------------------
# split_message


def test_split_structural_properties():
    p, _ = make_pair(frozenset())
    local_update(p, "insert", 1)
    prepare_sync(p, "Q")  # offered, then lost
    local_update(p, "insert", 2)
    local_update(p, "delete", 1)
    local_update(p, "insert", 3)
    msg = prepare_sync(p, "Q")
    assert [t.op for t in msg.payload] == [
        Op.insert(1),
        Op.insert(2),
        Op.delete(1),
        Op.insert(3),
    ]
    parts = split_message(msg, 3)
    assert len(parts) >= 2
    joined = tuple(t for seg in parts for t in seg.payload)
    assert joined == msg.payload
    # Ops on one element never straddle segments.
    for element in {t.op.element for t in msg.payload}:
        hits = [i for i, seg in enumerate(parts)
                if any(t.op.element == element for t in seg.payload)]
        assert len(set(hits)) == 1
    # A segment's ack never covers an op that rides a later segment.
    for i, seg in enumerate(parts):
        for later in parts[i + 1:]:
            for t in later.payload:
                assert seg.ack.get(t.origin, 0) < t.origin_seq
    assert parts[-1].ack == msg.ack


def test_split_handling_matches_whole_message():
    def build():
        p = init_peer("P", frozenset(), ("Q",))
        q = init_peer("Q", frozenset(), ("P",))
        local_update(p, "insert", 1)
        local_update(p, "insert", 2)
        prepare_sync(p, "Q")  # offered, then lost
        local_update(p, "delete", 1)
        local_update(p, "insert", 3)
        return p, q

    p1, whole = build()
    msg = prepare_sync(p1, "Q")
    handle_sync(whole, msg)

    p2, pieces = build()
    msg2 = prepare_sync(p2, "Q")
    assert msg2 == msg
    for segment in split_message(msg2, 2):
        handle_sync(pieces, segment)

    assert whole.data == pieces.data
    assert whole.rev == pieces.rev
    assert whole.applied_seqs == pieces.applied_seqs
    assert whole.log == pieces.log


def test_split_degenerate_cases():
    msg = SyncMessage("P", "Q", 3, (TaggedOp(Op.insert(1), "P", 1),), {"P": 1})
    assert split_message(msg, 3) == [msg]
    assert split_message(msg, 1) == [msg]
    # Entangled payload: the first element spans everything, so no cut exists.
    tangled = SyncMessage(
        "P",
        "Q",
        3,
        (
            TaggedOp(Op.insert(1), "P", 1),
            TaggedOp(Op.insert(2), "P", 2),
            TaggedOp(Op.delete(1), "P", 3),
        ),
        {"P": 3},
    )
    assert split_message(tangled, 2) == [tangled]


# ---------------------------------------------------------------------------
# Wire encoding


def test_wire_round_trip():
    msg = SyncMessage(
        sender="P",
        receiver="Q",
        base_watermark=4,
        payload=(
            TaggedOp(Op.delete(2), "Q", 1),
            TaggedOp(Op.insert(3), "Q", 2),
        ),
        ack={"P": 2, "Q": 2},
    )
    line = encode_sync_message(msg)
    assert line == "MSG from=P to=Q wm=4 ack=P:2,Q:2 ops=[-2@Q:1,+3@Q:2]"
    assert parse_sync_message(line) == msg


def test_wire_round_trip_empty_fields():
    msg = SyncMessage("P", "Q", 0, (), {})
    line = encode_sync_message(msg)
    assert line == "MSG from=P to=Q wm=0 ack= ops=[]"
    assert parse_sync_message(line) == msg


def test_wire_round_trip_structured_elements():
    from ccss.core import Triple

    msg = SyncMessage(
        "P",
        "Q",
        2,
        (
            TaggedOp(Op.insert(Triple("a", 7, 1)), "P", 1),
            TaggedOp(Op.insert("token"), "P", 2),
        ),
        {"P": 2},
    )
    assert parse_sync_message(encode_sync_message(msg)) == msg


def test_wire_rejects_malformed_lines():
    good = "MSG from=P to=Q wm=0 ack= ops=[]"
    assert parse_sync_message(good).sender == "P"
    for bad in (
        "MSG from=P to=Q wm=0 ack=",
        "MSG from=P to=Q wm=x ack= ops=[]",
        "MSG from=P to=Q wm=0 ack=P ops=[]",
        "MSG from=P to=Q wm=0 ack= ops=[+3]",
        "MSG from=P to=Q wm=0 ops= ack=[]",
        "PKT from=P to=Q wm=0 ack= ops=[]",
    ):
        with pytest.raises(ValueError):
            parse_sync_message(bad)
