"""Property tests for the algebraic laws behind sequence reconciliation."""

import hypothesis.strategies as st
from hypothesis import given, settings

from ccss.conformance import oracle_merge
from ccss.core import (
    Op,
    OpKind,
    apply_op,
    apply_seq,
    normalize,
    transform_local,
    transform_remote,
    validate_seq,
)
from ccss.sim import (
    OpEvent,
    Scenario,
    SyncEvent,
    random_workload,
    reference_run,
    run_scenario,
)

ELEMENTS = tuple(range(1, 6))

bases = st.frozensets(st.sampled_from(ELEMENTS))


@st.composite
def valid_history(draw, base, max_len=6):
    length = draw(st.integers(0, max_len))
    current = set(base)
    ops = []
    for _ in range(length):
        candidates = [Op.insert(x) for x in ELEMENTS if x not in current]
        candidates += [Op.delete(x) for x in sorted(current)]
        op = draw(st.sampled_from(candidates))
        ops.append(op)
        current = set(apply_op(current, op))
    return tuple(ops)


@st.composite
def base_and_history(draw, max_len=6):
    base = draw(bases)
    return base, draw(valid_history(base, max_len))


@st.composite
def concurrent_histories(draw, max_len=5):
    base = draw(bases)
    ps = draw(valid_history(base, max_len))
    qs = draw(valid_history(base, max_len))
    return base, ps, qs


@settings(deadline=None)
@given(bases, st.sampled_from(ELEMENTS))
def test_cancellation(base, x):
    if x in base:
        assert apply_seq(base, (Op.delete(x), Op.insert(x))) == base
    else:
        assert apply_seq(base, (Op.insert(x), Op.delete(x))) == base


@settings(deadline=None)
@given(base_and_history(), st.data())
def test_adjacent_ops_on_distinct_elements_commute(pair, data):
    base, seq = pair
    if len(seq) < 2:
        return
    i = data.draw(st.integers(0, len(seq) - 2))
    if seq[i].element == seq[i + 1].element:
        return
    swapped = seq[:i] + (seq[i + 1], seq[i]) + seq[i + 2 :]
    assert validate_seq(base, swapped)
    assert apply_seq(base, swapped) == apply_seq(base, seq)


@settings(deadline=None)
@given(base_and_history())
def test_normalize_is_sound(pair):
    base, seq = pair
    assert apply_seq(base, normalize(seq)) == apply_seq(base, seq)


@settings(deadline=None)
@given(base_and_history())
def test_normalize_is_idempotent(pair):
    _, seq = pair
    assert normalize(normalize(seq)) == normalize(seq)


@settings(deadline=None)
@given(base_and_history())
def test_normalize_leaves_each_element_at_most_once(pair):
    base, seq = pair
    normal = normalize(seq)
    assert len(normal) == len(seq)
    touched = [op.element for op in normal if not op.is_nop]
    assert len(touched) == len(set(touched))
    # The surviving kind is forced by the base: present elements can only
    # net out to a delete, absent ones to an insert.
    for op in normal:
        if not op.is_nop:
            expected = OpKind.DELETE if op.element in base else OpKind.INSERT
            assert op.kind is expected


@settings(deadline=None)
@given(concurrent_histories())
def test_same_element_implies_same_kind(triple):
    base, ps, qs = triple
    kinds_p = {op.element: op.kind for op in normalize(ps) if not op.is_nop}
    kinds_q = {op.element: op.kind for op in normalize(qs) if not op.is_nop}
    for element in kinds_p.keys() & kinds_q.keys():
        assert kinds_p[element] is kinds_q[element]


@settings(deadline=None)
@given(concurrent_histories())
def test_confluence_matches_oracle(triple):
    base, ps, qs = triple
    nps, nqs = normalize(ps), normalize(qs)
    expected = oracle_merge(base, nps, nqs)
    at_p = apply_seq(apply_seq(base, ps), transform_remote(nps, nqs))
    at_q = apply_seq(apply_seq(base, qs), transform_remote(nqs, nps))
    via_local = apply_seq(base, transform_local(nps, nqs) + nqs)
    assert at_p == at_q == via_local == expected


@settings(deadline=None)
@given(concurrent_histories(), st.data())
def test_rewritten_ops_commute_into_any_interleaving(triple, data):
    base, ps, qs = triple
    nps, nqs = normalize(ps), normalize(qs)
    rewritten = transform_remote(nps, nqs)
    canonical = apply_seq(base, nps + rewritten)

    merged = []
    i = j = 0
    while i < len(nps) or j < len(rewritten):
        take_local = (
            i < len(nps)
            and (j >= len(rewritten) or data.draw(st.booleans()))
        )
        if take_local:
            merged.append(nps[i])
            i += 1
        else:
            merged.append(rewritten[j])
            j += 1
    assert validate_seq(base, merged)
    assert apply_seq(base, merged) == canonical


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_seeded_workloads_converge_and_match_replay(seed, peers):
    scenario = random_workload(
        peers=peers,
        universe_size=5,
        ops_per_peer=6,
        sync_density=0.3,
        seed=seed,
    )
    report = run_scenario(scenario, seed=seed)
    assert report.convergence
    assert reference_run(scenario) == report.final_states


@settings(deadline=None, max_examples=40)
@given(concurrent_histories(max_len=4))
def test_two_peer_exchange_matches_oracle(triple):
    base, ps, qs = triple
    events = [
        OpEvent("P", "insert" if op.kind is OpKind.INSERT else "delete", op.element)
        for op in ps
    ]
    events += [
        OpEvent("Q", "insert" if op.kind is OpKind.INSERT else "delete", op.element)
        for op in qs
    ]
    events += [SyncEvent("P", "Q"), SyncEvent("Q", "P"), SyncEvent("P", "Q")]
    scenario = Scenario(
        peers=(("P", base), ("Q", base)),
        links=(("P", "Q"),),
        events=tuple(events),
    )
    report = run_scenario(scenario, seed=0)
    assert report.convergence
    expected = oracle_merge(base, normalize(ps), normalize(qs))
    assert report.final_states["P"] == expected
