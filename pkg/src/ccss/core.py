"""Effectful set operations: validity, application, normalization, transforms.

An insert or delete is *effectful* when it changes the set it is applied to:
inserting requires the element to be absent, deleting requires it to be
present.  Histories of effectful operations can be normalized (mutually
canceling pairs on the same element replaced by the identity operation) and
two concurrent histories taken from the same base set can be reconciled by
suppressing the operations they share.  Deletions are first-class: the merge
of two replicas is not a blind union.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

Element = Hashable
ElementSet = frozenset


class CcssError(Exception):
    """Base class for errors raised by this package."""


class InvalidInsert(CcssError):
    """Insertion of an element that is already present."""

    index: int | None = None


class InvalidDelete(CcssError):
    """Deletion of an element that is not present."""

    index: int | None = None


class DivergenceError(CcssError):
    """Two histories carry operations of opposite kind on a shared element.

    This cannot happen for valid normalized histories taken from equal base
    sets, so it signals lost or reordered state rather than a mergeable
    conflict.  It is raised loudly instead of guessing a winner.
    """


class OpKind(enum.Enum):
    INSERT = "+"
    DELETE = "-"
    NOP = "!"


@dataclass(frozen=True)
class Op:
    """One set operation.  Immutable; Nop carries no element."""

    kind: OpKind
    element: Element = None

    def __post_init__(self) -> None:
        if self.kind is OpKind.NOP:
            if self.element is not None:
                raise ValueError("Nop carries no element")
        elif self.element is None:
            raise ValueError(f"{self.kind.name} requires an element")

    @staticmethod
    def insert(element: Element) -> "Op":
        return Op(OpKind.INSERT, element)

    @staticmethod
    def delete(element: Element) -> "Op":
        return Op(OpKind.DELETE, element)

    @property
    def is_nop(self) -> bool:
        return self.kind is OpKind.NOP

    def __str__(self) -> str:
        return render_op(self)


NOP = Op(OpKind.NOP)

OpSeq = tuple[Op, ...]


@dataclass(frozen=True)
class Triple:
    """A value tagged with a grouping key and a logical timestamp.

    Element payload for last-write-wins sets; replicas keep many triples per
    key until a resolution pass picks the newest one (see `resolution`).
    """

    value: Hashable
    key: Hashable
    stamp: int

    def __str__(self) -> str:
        return render_element(self)


# ---------------------------------------------------------------------------
# Validity and application


def is_valid(members: Iterable[Element], op: Op) -> bool:
    """True when `op` applied to `members` would be effectful (or is Nop)."""
    members = frozenset(members)
    if op.kind is OpKind.NOP:
        return True
    if op.kind is OpKind.INSERT:
        return op.element not in members
    return op.element in members


def apply_op(members: Iterable[Element], op: Op) -> ElementSet:
    """Apply one operation, insisting on effectfulness."""
    members = frozenset(members)
    if op.kind is OpKind.NOP:
        return members
    if op.kind is OpKind.INSERT:
        if op.element in members:
            raise InvalidInsert(f"{render_element(op.element)} already present")
        return members | {op.element}
    if op.element not in members:
        raise InvalidDelete(f"{render_element(op.element)} not present")
    return members - {op.element}


def make_insert(members: Iterable[Element], x: Element) -> Op:
    """Insert intent filtered by the current set: Nop when already present."""
    return Op.insert(x) if x not in frozenset(members) else NOP


def make_delete(members: Iterable[Element], x: Element) -> Op:
    """Delete intent filtered by the current set: Nop when absent."""
    return Op.delete(x) if x in frozenset(members) else NOP


def validate_seq(members: Iterable[Element], seq: Sequence[Op]) -> bool:
    """True when every op in `seq` is effectful against the running state."""
    current = frozenset(members)
    for op in seq:
        if not is_valid(current, op):
            return False
        current = apply_op(current, op)
    return True


def apply_seq(members: Iterable[Element], seq: Sequence[Op]) -> ElementSet:
    """Fold a sequence over a set; failures carry the offending index."""
    current = frozenset(members)
    for i, op in enumerate(seq):
        try:
            current = apply_op(current, op)
        except (InvalidInsert, InvalidDelete) as exc:
            err = type(exc)(f"op {i}: {exc}")
            err.index = i
            raise err from exc
    return current


# ---------------------------------------------------------------------------
# Normalization and transforms


def normalize(seq: Sequence[Op]) -> OpSeq:
    """Replace mutually canceling operations with Nop, preserving length.

    A valid sequence touches each element with strictly alternating kinds, so
    an even number of operations on one element has no net effect (all become
    Nop) and an odd number nets out to a single operation.  The survivor is
    placed at the last position that touched the element; for alternating
    kinds it equals the first operation, and every other element's membership
    is unaffected by the move.  The result touches each element at most once.
    """
    ops = list(seq)
    positions: dict[Element, list[int]] = {}
    for i, op in enumerate(ops):
        if not op.is_nop:
            positions.setdefault(op.element, []).append(i)
    for occurrences in positions.values():
        cut = len(occurrences) if len(occurrences) % 2 == 0 else len(occurrences) - 1
        for i in occurrences[:cut]:
            ops[i] = NOP
    return tuple(ops)


def _suppress_shared(seq: Sequence[Op], against: Sequence[Op]) -> OpSeq:
    """Nop out ops of `seq` whose element also appears (non-Nop) in `against`.

    A shared element with differing kinds is contradictory for histories that
    grew from the same base, so it raises DivergenceError.
    """
    kinds: dict[Element, OpKind] = {
        op.element: op.kind for op in against if not op.is_nop
    }
    out: list[Op] = []
    for op in seq:
        if op.is_nop or op.element not in kinds:
            out.append(op)
        elif kinds[op.element] is op.kind:
            out.append(NOP)
        else:
            raise DivergenceError(
                f"histories disagree on {render_element(op.element)}: "
                f"{kinds[op.element].name.lower()} vs {op.kind.name.lower()}"
            )
    return tuple(out)


def transform_remote(local_ops: Sequence[Op], remote_ops: Sequence[Op]) -> OpSeq:
    """Rewrite remote operations so they apply after `local_ops`.

    Both inputs must be normalized and valid against the same base set.  A
    remote op duplicating a local op (same element, same kind) becomes Nop;
    everything else passes through unchanged.
    """
    return _suppress_shared(remote_ops, local_ops)


def transform_local(local_ops: Sequence[Op], remote_ops: Sequence[Op]) -> OpSeq:
    """Rewrite local operations so the remote sequence can be applied as-is."""
    return _suppress_shared(local_ops, remote_ops)


# ---------------------------------------------------------------------------
# Canonical text

_INT_RE = re.compile(r"-?\d+")


def _split_top(text: str, sep: str = ",") -> list[str]:
    """Split on `sep` occurrences outside any (), [], {} nesting."""
    parts: list[str] = []
    depth = 0
    start = 0
    for i, ch in enumerate(text):
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        elif ch == sep and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    return parts


def render_element(x: Element) -> str:
    if isinstance(x, Triple):
        return f"({render_element(x.value)},{render_element(x.key)},{x.stamp})"
    return str(x)


def parse_element(text: str) -> Element:
    """Inverse of render_element for integers, plain tokens, and triples."""
    text = text.strip()
    if not text:
        raise ValueError("empty element")
    if _INT_RE.fullmatch(text):
        return int(text)
    if text.startswith("(") and text.endswith(")"):
        parts = _split_top(text[1:-1])
        if len(parts) != 3:
            raise ValueError(f"malformed triple: {text!r}")
        value, key, stamp = (p.strip() for p in parts)
        if not _INT_RE.fullmatch(stamp):
            raise ValueError(f"triple timestamp must be an integer: {text!r}")
        return Triple(parse_element(value), parse_element(key), int(stamp))
    return text


def element_sort_key(x: Element) -> tuple:
    """Total order used only for deterministic rendering and enumeration."""
    if isinstance(x, bool):
        return (3, 0, str(x))
    if isinstance(x, int):
        return (0, x, "")
    if isinstance(x, str):
        return (1, 0, x)
    if isinstance(x, Triple):
        return (2, x.stamp, render_element(x))
    return (3, 0, repr(x))


def render_op(op: Op) -> str:
    if op.kind is OpKind.NOP:
        return "!"
    return op.kind.value + render_element(op.element)


def parse_op(text: str) -> Op:
    text = text.strip()
    if text == "!":
        return NOP
    if len(text) > 1 and text[0] in "+-":
        return Op(OpKind(text[0]), parse_element(text[1:]))
    raise ValueError(f"malformed op: {text!r}")


def render_op_seq(seq: Sequence[Op]) -> str:
    return "[" + ",".join(render_op(op) for op in seq) + "]"


def parse_op_seq(text: str) -> OpSeq:
    text = text.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise ValueError(f"malformed op sequence: {text!r}")
    inner = text[1:-1].strip()
    if not inner:
        return ()
    return tuple(parse_op(part) for part in _split_top(inner))


def render_element_set(members: Iterable[Element]) -> str:
    ordered = sorted(frozenset(members), key=element_sort_key)
    return "{" + ",".join(render_element(x) for x in ordered) + "}"


def parse_element_set(text: str) -> ElementSet:
    text = text.strip()
    if not (text.startswith("{") and text.endswith("}")):
        raise ValueError(f"malformed set: {text!r}")
    inner = text[1:-1].strip()
    if not inner:
        return frozenset()
    return frozenset(parse_element(part) for part in _split_top(inner))
