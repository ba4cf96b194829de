"""Deterministic scenario simulator for networks of replicated-set peers.

A scenario declares peers, undirected links, and an event list (local ops,
directed syncs, partitions, heals, resolution passes, prunes, and state
checks).  Running a scenario is pure: identical scenario text and seed give
identical reports.  Messages travel through per-direction FIFO channels; a
sync attempted across a partitioned link is recorded as a drop, not an
error, and the watermark scheme makes a later sync resend what was lost.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field

from . import core, peer as peermod, resolution
from .core import (
    CcssError,
    DivergenceError,
    Element,
    Op,
    Triple,
    parse_element,
    parse_element_set,
    render_element,
    render_element_set,
)
from .peer import PeerState, SyncMessage

# ---------------------------------------------------------------------------
# Scenario model


class ScenarioError(CcssError):
    """Malformed scenario text or event list; carries a line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class OpEvent:
    peer: str
    intent: str
    element: Element


@dataclass(frozen=True)
class SyncEvent:
    src: str
    dst: str


@dataclass(frozen=True)
class PartitionEvent:
    a: str
    b: str


@dataclass(frozen=True)
class HealEvent:
    a: str
    b: str


@dataclass(frozen=True)
class ResolveEvent:
    peer: str


@dataclass(frozen=True)
class PruneEvent:
    peer: str


@dataclass(frozen=True)
class CheckEvent:
    peer: str
    expected: frozenset


Event = (
    OpEvent
    | SyncEvent
    | PartitionEvent
    | HealEvent
    | ResolveEvent
    | PruneEvent
    | CheckEvent
)


@dataclass(frozen=True)
class Scenario:
    peers: tuple[tuple[str, frozenset], ...]
    links: tuple[tuple[str, str], ...]
    events: tuple[Event, ...]


def _link_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def parse_scenario(text: str) -> Scenario:
    """Parse scenario text; raises ScenarioError with the offending line."""
    peers: list[tuple[str, frozenset]] = []
    links: list[tuple[str, str]] = []
    events: list[Event] = []
    declared: set[str] = set()
    link_keys: set[tuple[str, str]] = set()

    def need_peer(name: str, lineno: int) -> None:
        if name not in declared:
            raise ScenarioError(f"undeclared peer {name}", lineno)

    def need_link(a: str, b: str, lineno: int) -> None:
        if _link_key(a, b) not in link_keys:
            raise ScenarioError(f"no link between {a} and {b}", lineno)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        word = fields[0]
        try:
            if word == "PEER":
                if len(fields) != 3:
                    raise ScenarioError("expected: PEER <id> <set>", lineno)
                name = fields[1]
                if name in declared:
                    raise ScenarioError(f"duplicate peer {name}", lineno)
                peers.append((name, parse_element_set(fields[2])))
                declared.add(name)
            elif word == "LINK":
                if len(fields) != 3:
                    raise ScenarioError("expected: LINK <a> <b>", lineno)
                a, b = fields[1], fields[2]
                need_peer(a, lineno)
                need_peer(b, lineno)
                if a == b:
                    raise ScenarioError(f"link from {a} to itself", lineno)
                if _link_key(a, b) in link_keys:
                    raise ScenarioError(f"duplicate link {a} {b}", lineno)
                links.append((a, b))
                link_keys.add(_link_key(a, b))
            elif word == "OP":
                if len(fields) != 4 or fields[2] not in ("insert", "delete"):
                    raise ScenarioError(
                        "expected: OP <peer> insert|delete <element>", lineno
                    )
                need_peer(fields[1], lineno)
                events.append(OpEvent(fields[1], fields[2], parse_element(fields[3])))
            elif word in ("SYNC", "PARTITION", "HEAL"):
                if len(fields) != 3:
                    raise ScenarioError(f"expected: {word} <a> <b>", lineno)
                a, b = fields[1], fields[2]
                need_peer(a, lineno)
                need_peer(b, lineno)
                need_link(a, b, lineno)
                cls = {"SYNC": SyncEvent, "PARTITION": PartitionEvent, "HEAL": HealEvent}
                events.append(cls[word](a, b))
            elif word in ("RESOLVE", "PRUNE"):
                if len(fields) != 2:
                    raise ScenarioError(f"expected: {word} <peer>", lineno)
                need_peer(fields[1], lineno)
                cls = {"RESOLVE": ResolveEvent, "PRUNE": PruneEvent}
                events.append(cls[word](fields[1]))
            elif word == "CHECK":
                if len(fields) != 3:
                    raise ScenarioError("expected: CHECK <peer> <set>", lineno)
                need_peer(fields[1], lineno)
                events.append(CheckEvent(fields[1], parse_element_set(fields[2])))
            else:
                raise ScenarioError(f"unknown directive {word}", lineno)
        except ValueError as exc:
            raise ScenarioError(str(exc), lineno) from exc

    if not peers:
        raise ScenarioError("scenario declares no peers", line=1)
    return Scenario(tuple(peers), tuple(links), tuple(events))


def render_event(event: Event) -> str:
    if isinstance(event, OpEvent):
        return f"OP {event.peer} {event.intent} {render_element(event.element)}"
    if isinstance(event, SyncEvent):
        return f"SYNC {event.src} {event.dst}"
    if isinstance(event, PartitionEvent):
        return f"PARTITION {event.a} {event.b}"
    if isinstance(event, HealEvent):
        return f"HEAL {event.a} {event.b}"
    if isinstance(event, ResolveEvent):
        return f"RESOLVE {event.peer}"
    if isinstance(event, PruneEvent):
        return f"PRUNE {event.peer}"
    return f"CHECK {event.peer} {render_element_set(event.expected)}"


def render_scenario(scenario: Scenario) -> str:
    lines = [
        f"PEER {name} {render_element_set(initial)}"
        for name, initial in scenario.peers
    ]
    lines.extend(f"LINK {a} {b}" for a, b in scenario.links)
    lines.extend(render_event(e) for e in scenario.events)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Execution


@dataclass
class ChannelState:
    """One undirected link: liveness plus a FIFO queue per direction."""

    link: tuple[str, str]
    up: bool = True
    in_flight: dict[tuple[str, str], deque] = field(default_factory=dict)

    def queue(self, src: str, dst: str) -> deque:
        return self.in_flight.setdefault((src, dst), deque())


@dataclass(frozen=True)
class CheckOutcome:
    event_index: int
    peer: str
    expected: frozenset
    actual: frozenset
    passed: bool


@dataclass
class RunReport:
    seed: int
    final_states: dict[str, frozenset]
    convergence: bool
    checks: tuple[CheckOutcome, ...]
    ops_applied: int
    ops_no_effect: int
    messages_sent: int
    messages_delivered: int
    messages_dropped: int
    cycle_warning: bool

    @property
    def checks_passed(self) -> bool:
        return all(c.passed for c in self.checks)


def render_report(report: RunReport) -> str:
    lines = [
        f"FINAL {name} {render_element_set(members)}"
        for name, members in sorted(report.final_states.items())
    ]
    lines.append(f"CONVERGED {'true' if report.convergence else 'false'}")
    return "\n".join(lines) + "\n"


def _components(scenario: Scenario) -> list[set[str]]:
    adjacency: dict[str, set[str]] = {name: set() for name, _ in scenario.peers}
    for a, b in scenario.links:
        adjacency[a].add(b)
        adjacency[b].add(a)
    seen: set[str] = set()
    components: list[set[str]] = []
    for name, _ in scenario.peers:
        if name in seen:
            continue
        group = {name}
        frontier = [name]
        while frontier:
            for other in adjacency[frontier.pop()]:
                if other not in group:
                    group.add(other)
                    frontier.append(other)
        seen |= group
        components.append(group)
    return components


def _has_cycle(scenario: Scenario) -> bool:
    for group in _components(scenario):
        edges = sum(1 for a, b in scenario.links if a in group and b in group)
        if edges >= len(group):
            return True
    return False


def _validate(scenario: Scenario) -> None:
    declared = {name for name, _ in scenario.peers}
    if len(declared) != len(scenario.peers):
        raise ScenarioError("duplicate peer declaration")
    keys = set()
    for a, b in scenario.links:
        if a not in declared or b not in declared or a == b:
            raise ScenarioError(f"bad link {a} {b}")
        if _link_key(a, b) in keys:
            raise ScenarioError(f"duplicate link {a} {b}")
        keys.add(_link_key(a, b))
    for event in scenario.events:
        if isinstance(event, (SyncEvent, PartitionEvent, HealEvent)):
            pair = (
                (event.src, event.dst)
                if isinstance(event, SyncEvent)
                else (event.a, event.b)
            )
            if _link_key(*pair) not in keys:
                raise ScenarioError(f"event uses missing link {pair[0]} {pair[1]}")
        else:
            name = event.peer
            if name not in declared:
                raise ScenarioError(f"event uses undeclared peer {name}")


def run_scenario(scenario: Scenario, seed: int, max_segments: int = 1) -> RunReport:
    """Execute the event list; pure function of (scenario, seed, segments).

    max_segments > 1 delivers each sync payload as that many consecutive
    wire segments at most (sizes drawn from the seeded generator), which
    must not change any outcome.
    """
    _validate(scenario)
    rng = random.Random(seed)

    neighbors: dict[str, list[str]] = {name: [] for name, _ in scenario.peers}
    for a, b in scenario.links:
        neighbors[a].append(b)
        neighbors[b].append(a)
    peers = {
        name: peermod.init_peer(name, initial, tuple(neighbors[name]))
        for name, initial in scenario.peers
    }
    channels = {
        _link_key(a, b): ChannelState(_link_key(a, b)) for a, b in scenario.links
    }

    ops_applied = 0
    ops_no_effect = 0
    messages_sent = 0
    messages_delivered = 0
    messages_dropped = 0
    checks: list[CheckOutcome] = []

    for index, event in enumerate(scenario.events):
        try:
            if isinstance(event, OpEvent):
                applied = peermod.local_update(
                    peers[event.peer], event.intent, event.element
                )
                if applied is not None:
                    ops_applied += 1
                else:
                    ops_no_effect += 1
            elif isinstance(event, SyncEvent):
                channel = channels[_link_key(event.src, event.dst)]
                message = peermod.prepare_sync(peers[event.src], event.dst)
                messages_sent += 1
                if not channel.up:
                    messages_dropped += 1
                    continue
                queue = channel.queue(event.src, event.dst)
                queue.append(message)
                while queue:
                    msg = queue.popleft()
                    segments = [msg]
                    if max_segments > 1 and len(msg.payload) > 1:
                        segments = peermod.split_message(
                            msg, rng.randint(2, max_segments)
                        )
                    for segment in segments:
                        peermod.handle_sync(peers[event.dst], segment)
                    messages_delivered += 1
            elif isinstance(event, PartitionEvent):
                channel = channels[_link_key(event.a, event.b)]
                channel.up = False
                for queue in channel.in_flight.values():
                    messages_dropped += len(queue)
                    queue.clear()
            elif isinstance(event, HealEvent):
                channels[_link_key(event.a, event.b)].up = True
            elif isinstance(event, ResolveEvent):
                ops_applied += len(resolution.lww_resolve(peers[event.peer]))
            elif isinstance(event, PruneEvent):
                peermod.prune_log(peers[event.peer])
            elif isinstance(event, CheckEvent):
                actual = frozenset(peers[event.peer].data)
                checks.append(
                    CheckOutcome(
                        index,
                        event.peer,
                        event.expected,
                        actual,
                        actual == event.expected,
                    )
                )
        except DivergenceError as exc:
            raise DivergenceError(
                f"event {index} ({render_event(event)}): {exc}"
            ) from exc

    final_states = {name: frozenset(p.data) for name, p in peers.items()}
    convergence = all(
        len({final_states[name] for name in group}) == 1
        for group in _components(scenario)
    )
    return RunReport(
        seed=seed,
        final_states=final_states,
        convergence=convergence,
        checks=tuple(checks),
        ops_applied=ops_applied,
        ops_no_effect=ops_no_effect,
        messages_sent=messages_sent,
        messages_delivered=messages_delivered,
        messages_dropped=messages_dropped,
        cycle_warning=_has_cycle(scenario),
    )


# ---------------------------------------------------------------------------
# Workload generation


def random_workload(
    peers: int,
    universe_size: int,
    ops_per_peer: int,
    sync_density: float,
    seed: int,
) -> Scenario:
    """Seeded random scenario: a tree of peers, mixed intents, trailing syncs.

    All peers share one starting set.  Sync events are sprinkled between ops
    at the given density, and enough full link rounds are appended at the end
    for every operation to reach every peer.
    """
    if peers < 1:
        raise ValueError("need at least one peer")
    rng = random.Random(seed)
    names = [f"P{i}" for i in range(1, peers + 1)]
    links = [
        (names[rng.randrange(i)], names[i]) for i in range(1, peers)
    ]
    initial = frozenset(
        x for x in range(1, universe_size + 1) if rng.random() < 0.5
    )

    slots = [name for name in names for _ in range(ops_per_peer)]
    rng.shuffle(slots)
    events: list[Event] = []
    for name in slots:
        events.append(
            OpEvent(
                name,
                rng.choice(("insert", "delete")),
                rng.randint(1, universe_size),
            )
        )
        if links and rng.random() < sync_density:
            a, b = rng.choice(links)
            if rng.random() < 0.5:
                a, b = b, a
            events.append(SyncEvent(a, b))
    for _ in range(peers):
        for a, b in links:
            events.append(SyncEvent(a, b))
            events.append(SyncEvent(b, a))
    return Scenario(
        peers=tuple((name, initial) for name in names),
        links=tuple(links),
        events=tuple(events),
    )


# ---------------------------------------------------------------------------
# Independent replay


@dataclass
class _MirrorPeer:
    data: set
    history: list[tuple[Op, str, int]] = field(default_factory=list)
    known: set[tuple[str, int]] = field(default_factory=set)
    issued: int = 0


class _IntentClasses:
    """Union-find over tagged operation ids; duplicate intents share a class.

    When two concurrently issued operations turn out to be the same intent
    (same element, same kind, neither side had seen the other), they are one
    operation for counting purposes: a mirror that holds either id holds the
    intent, and it must be delivered and applied at most once per mirror.
    """

    def __init__(self) -> None:
        self._parent: dict[tuple[str, int], tuple[str, int]] = {}
        self._members: dict[tuple[str, int], list[tuple[str, int]]] = {}

    def find(self, key: tuple[str, int]) -> tuple[str, int]:
        self._parent.setdefault(key, key)
        self._members.setdefault(key, [key])
        root = key
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[key] != root:
            self._parent[key], key = root, self._parent[key]
        return root

    def union(self, a: tuple[str, int], b: tuple[str, int]) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self._parent[rb] = ra
            self._members[ra].extend(self._members.pop(rb))

    def known_to(self, key: tuple[str, int], known: set[tuple[str, int]]) -> bool:
        return any(member in known for member in self._members[self.find(key)])

    def dedupe(self, tagged: list) -> list:
        """Keep the first instance of each class, preserving order."""
        seen: set[tuple[str, int]] = set()
        out = []
        for t in tagged:
            root = self.find((t[1], t[2]))
            if root not in seen:
                seen.add(root)
                out.append(t)
        return out


def reference_run(scenario: Scenario) -> dict[str, frozenset]:
    """Replay a scenario on set-semantics mirrors; returns final states.

    This is a from-scratch second execution model used to validate the peer
    machinery: no operation transforms, no watermarks, no logs.  Every mirror
    remembers which tagged operations it has witnessed; a sync hands over the
    complete unseen history, mutually canceling operations are struck out,
    concurrent same-intent pairs are identified and counted once, and the
    remainder is merged by plain set arithmetic.
    """
    _validate(scenario)
    mirrors = {name: _MirrorPeer(set(initial)) for name, initial in scenario.peers}
    link_up = {_link_key(a, b): True for a, b in scenario.links}
    classes = _IntentClasses()

    def issue(mirror: _MirrorPeer, name: str, op: Op) -> None:
        mirror.issued += 1
        tagged = (op, name, mirror.issued)
        mirror.data = set(core.apply_op(mirror.data, op))
        mirror.history.append(tagged)
        mirror.known.add((name, mirror.issued))

    for event in scenario.events:
        if isinstance(event, OpEvent):
            mirror = mirrors[event.peer]
            op = (
                core.make_insert(mirror.data, event.element)
                if event.intent == "insert"
                else core.make_delete(mirror.data, event.element)
            )
            if not op.is_nop:
                issue(mirror, event.peer, op)
        elif isinstance(event, SyncEvent):
            if not link_up[_link_key(event.src, event.dst)]:
                continue
            src, dst = mirrors[event.src], mirrors[event.dst]
            incoming = classes.dedupe(
                [t for t in src.history if not classes.known_to((t[1], t[2]), dst.known)]
            )
            local = classes.dedupe(
                [t for t in dst.history if not classes.known_to((t[1], t[2]), src.known)]
            )
            incoming_ops = core.normalize(tuple(t[0] for t in incoming))
            local_ops = core.normalize(tuple(t[0] for t in local))
            local_by_elem = {
                op.element: (op, t)
                for op, t in zip(local_ops, local)
                if not op.is_nop
            }
            inserts: set = set()
            deletes: set = set()
            for op, t in zip(incoming_ops, incoming):
                if op.is_nop:
                    continue
                twin = local_by_elem.get(op.element)
                if twin is not None:
                    twin_op, twin_tag = twin
                    if twin_op.kind is not op.kind:
                        raise DivergenceError(
                            f"histories disagree on "
                            f"{core.render_element(op.element)}: "
                            f"{op.kind.name.lower()} vs {twin_op.kind.name.lower()}"
                        )
                    # Concurrent duplicates are one intent; count it once.
                    classes.union((t[1], t[2]), (twin_tag[1], twin_tag[2]))
                    continue
                if op.kind is core.OpKind.INSERT:
                    inserts.add(op.element)
                else:
                    deletes.add(op.element)
                # Only applied instances join the relay record; canceled
                # pairs and duplicate twins are covered by the known marks.
                dst.history.append(t)
            dst.data = (dst.data - deletes) | inserts
            for t in incoming:
                dst.known.add((t[1], t[2]))
        elif isinstance(event, PartitionEvent):
            link_up[_link_key(event.a, event.b)] = False
        elif isinstance(event, HealEvent):
            link_up[_link_key(event.a, event.b)] = True
        elif isinstance(event, ResolveEvent):
            mirror = mirrors[event.peer]
            by_key: dict = {}
            for member in mirror.data:
                if isinstance(member, Triple):
                    by_key.setdefault(member.key, []).append(member)
            for triples in by_key.values():
                if len(triples) < 2:
                    continue
                triples.sort(key=lambda t: (t.stamp, render_element(t.value)))
                for loser in triples[:-1]:
                    issue(mirror, event.peer, Op.delete(loser))
        # Prune and Check events do not touch mirror state.

    return {name: frozenset(m.data) for name, m in mirrors.items()}
