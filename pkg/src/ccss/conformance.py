"""Independent oracle and exhaustive small-instance confluence checking.

The oracle computes a merge outcome purely with set arithmetic, without the
transform machinery, so agreement between the two is meaningful evidence.
The checker enumerates every valid operation sequence up to a length bound
and verifies that all reconciliation routes agree with each other and with
the oracle.  Failures are collected as data, never raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import core
from .core import (
    DivergenceError,
    Element,
    ElementSet,
    Op,
    OpKind,
    OpSeq,
    apply_seq,
    normalize,
    render_element_set,
    render_op_seq,
)


@dataclass(frozen=True)
class Universe:
    """A finite element domain plus the base set both histories grow from."""

    elements: tuple
    base: frozenset

    def __post_init__(self) -> None:
        if len(set(self.elements)) != len(self.elements):
            raise ValueError("universe elements must be distinct")
        if not self.base <= frozenset(self.elements):
            raise ValueError("base must be a subset of the universe")


def oracle_merge(
    members: Iterable[Element], local_ops: Sequence[Op], remote_ops: Sequence[Op]
) -> ElementSet:
    """Merge outcome by set arithmetic alone: drop all deletes, add all inserts.

    Requires both sequences to be normalized and valid against `members`.
    An element inserted on one side and deleted on the other is contradictory
    for such sequences and raises DivergenceError.
    """
    inserts = set()
    deletes = set()
    for op in tuple(local_ops) + tuple(remote_ops):
        if op.kind is OpKind.INSERT:
            inserts.add(op.element)
        elif op.kind is OpKind.DELETE:
            deletes.add(op.element)
    clash = inserts & deletes
    if clash:
        k = sorted(clash, key=core.element_sort_key)[0]
        raise DivergenceError(
            f"histories disagree on {core.render_element(k)}: insert vs delete"
        )
    return (frozenset(members) - deletes) | inserts


def enumerate_valid_seqs(universe: Universe, max_len: int) -> list[OpSeq]:
    """All valid effectful sequences up to max_len, in deterministic order.

    Ordered by length, then lexicographically by (kind, element position):
    at each step inserts come before deletes and elements follow their
    universe order.
    """
    order = {x: i for i, x in enumerate(universe.elements)}

    def step_ops(members: frozenset) -> list[Op]:
        inserts = [Op.insert(x) for x in universe.elements if x not in members]
        deletes = [Op.delete(x) for x in universe.elements if x in members]
        return inserts + deletes

    out: list[OpSeq] = [()]
    frontier: list[tuple[OpSeq, frozenset]] = [((), universe.base)]
    for _ in range(max_len):
        nxt: list[tuple[OpSeq, frozenset]] = []
        for seq, members in frontier:
            for op in step_ops(members):
                nxt.append((seq + (op,), core.apply_op(members, op)))
        out.extend(seq for seq, _ in nxt)
        frontier = nxt
    return out


@dataclass(frozen=True)
class ConfluenceFailure:
    base: frozenset
    local_ops: OpSeq
    remote_ops: OpSeq
    detail: str

    def __str__(self) -> str:
        return (
            f"base={render_element_set(self.base)} "
            f"ps={render_op_seq(self.local_ops)} "
            f"qs={render_op_seq(self.remote_ops)}: {self.detail}"
        )


@dataclass
class ConfluenceReport:
    checked: int = 0
    failures: list[ConfluenceFailure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def check_confluence(universe: Universe, max_len: int) -> ConfluenceReport:
    """Exhaustively verify that both merge routes agree with the oracle.

    For every ordered pair of valid sequences from the universe's base, the
    local-then-transformed-remote route, its mirror image, and the
    transformed-local route must all equal the oracle merge.
    """
    seqs = enumerate_valid_seqs(universe, max_len)
    cached = []
    for seq in seqs:
        cached.append((seq, normalize(seq), apply_seq(universe.base, seq)))

    report = ConfluenceReport()
    base = universe.base
    for ps, nps, after_ps in cached:
        for qs, nqs, after_qs in cached:
            report.checked += 1
            try:
                merged_at_p = apply_seq(after_ps, core.transform_remote(nps, nqs))
                merged_at_q = apply_seq(after_qs, core.transform_remote(nqs, nps))
                rewritten_local = apply_seq(
                    base, core.transform_local(nps, nqs) + nqs
                )
                expected = oracle_merge(base, nps, nqs)
            except core.CcssError as exc:
                report.failures.append(
                    ConfluenceFailure(base, ps, qs, f"{type(exc).__name__}: {exc}")
                )
                continue
            if not (merged_at_p == merged_at_q == rewritten_local == expected):
                report.failures.append(
                    ConfluenceFailure(
                        base,
                        ps,
                        qs,
                        f"routes {render_element_set(merged_at_p)} / "
                        f"{render_element_set(merged_at_q)} / "
                        f"{render_element_set(rewritten_local)} "
                        f"vs oracle {render_element_set(expected)}",
                    )
                )
    return report
