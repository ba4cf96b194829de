"""Replicated sets that support both insertion and deletion and still merge
without conflict.

Replicas record effectful operations (inserts of absent elements, deletes of
present ones).  On sync, each side strikes out the operations the other
already performed and applies the rest, so all replicas converge on the same
set without tombstones and with deletions honored.
"""

from .baselines import (
    GSet,
    TwoPhaseSet,
    gset_insert,
    gset_merge,
    twopset_apply,
    twopset_merge,
    twopset_value,
)
from .conformance import (
    ConfluenceReport,
    Universe,
    check_confluence,
    enumerate_valid_seqs,
    oracle_merge,
)
from .core import (
    NOP,
    CcssError,
    DivergenceError,
    Element,
    ElementSet,
    InvalidDelete,
    InvalidInsert,
    Op,
    OpKind,
    OpSeq,
    Triple,
    apply_op,
    apply_seq,
    is_valid,
    make_delete,
    make_insert,
    normalize,
    transform_local,
    transform_remote,
    validate_seq,
)
from .peer import (
    DuplicateNeighbor,
    LogEntry,
    NeighborState,
    PeerState,
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
from .resolution import lww_insert, lww_resolve
from .sim import (
    RunReport,
    Scenario,
    ScenarioError,
    parse_scenario,
    random_workload,
    reference_run,
    render_report,
    render_scenario,
    run_scenario,
)

__all__ = [
    "CcssError",
    "ConfluenceReport",
    "DivergenceError",
    "DuplicateNeighbor",
    "Element",
    "ElementSet",
    "GSet",
    "InvalidDelete",
    "InvalidInsert",
    "LogEntry",
    "NOP",
    "NeighborState",
    "Op",
    "OpKind",
    "OpSeq",
    "PeerState",
    "RunReport",
    "Scenario",
    "ScenarioError",
    "SyncMessage",
    "TaggedOp",
    "Triple",
    "TwoPhaseSet",
    "Universe",
    "UnknownNeighbor",
    "apply_op",
    "apply_seq",
    "check_confluence",
    "encode_sync_message",
    "enumerate_valid_seqs",
    "gset_insert",
    "gset_merge",
    "handle_sync",
    "init_peer",
    "is_valid",
    "local_update",
    "lww_insert",
    "lww_resolve",
    "make_delete",
    "make_insert",
    "normalize",
    "oracle_merge",
    "parse_scenario",
    "parse_sync_message",
    "prepare_sync",
    "prune_log",
    "random_workload",
    "reference_run",
    "render_report",
    "render_scenario",
    "run_scenario",
    "split_message",
    "transform_local",
    "transform_remote",
    "twopset_apply",
    "twopset_merge",
    "twopset_value",
    "validate_seq",
]
