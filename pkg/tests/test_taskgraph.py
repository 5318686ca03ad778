"""Task graph tests: speculation rules, commit barrier, cancellation cascade."""

import random

import pytest

from specagent.protocol import Arg, Pause, Ref, ToolCall
from specagent.taskgraph import (
    CancelledIdError,
    ConsumedObservationError,
    CycleError,
    PostCommitEditError,
    Safety,
    Status,
    TaskGraph,
    UnknownIdError,
    UnknownRefError,
)


def call(cid, name="t", *values):
    return ToolCall(cid, name, tuple(Arg(v) for v in values))


def call_ref(cid, name, *ref_ids):
    return ToolCall(cid, name, tuple(Arg(Ref(r)) for r in ref_ids))


def test_first_insertion_issued():
    g = TaskGraph()
    rec = g.issue(call(1, "get_contact", "Alice"), Safety.SAFE)
    assert rec.status == Status.ISSUED
    assert rec.deps == frozenset()
    assert g.max_issued_id == 1


def test_unsafe_insertion_held():
    g = TaskGraph()
    g.issue(call(1, "get_contact", "Alice"), Safety.SAFE)
    rec = g.issue(call_ref(2, "send_message", 1), Safety.UNSAFE)
    assert rec.status == Status.HELD
    assert rec.deps == frozenset({1})


def test_modify_executing_flags_discard():
    g = TaskGraph()
    g.issue(call(1, "get_contact", "Alice"), Safety.SAFE)
    g.mark_executing(1)
    rec = g.issue(call(1, "get_contact", "Alicia"), Safety.SAFE)
    assert rec.generation == 2
    assert (1, 1) in g.pending_discards
    res = g.complete(1, 1, "stale")
    assert not res.deliver and not res.emit_cancel


def test_refs_validated():
    g = TaskGraph()
    with pytest.raises(UnknownRefError):
        g.issue(call_ref(1, "f", 5), Safety.SAFE)
    g.issue(call(1), Safety.SAFE)
    with pytest.raises(CycleError):
        g.issue(call_ref(2, "f", 2), Safety.SAFE)


def test_modification_cycle_detection():
    g = TaskGraph()
    g.issue(call(1), Safety.SAFE)
    g.issue(call_ref(2, "f", 1), Safety.SAFE)
    g.issue(call_ref(3, "f", 2), Safety.SAFE)
    with pytest.raises(CycleError):
        g.issue(call_ref(1, "f", 3), Safety.SAFE)  # 3 depends on 1 transitively


def test_remove_cascades_topologically():
    g = TaskGraph()
    g.issue(call(1), Safety.SAFE)
    g.issue(call_ref(2, "f", 1), Safety.SAFE)
    g.issue(call_ref(3, "f", 2), Safety.SAFE)
    cancelled = g.remove(1)
    assert cancelled == [1, 2, 3]
    assert all(g.records[i].status == Status.CANCELLED for i in (1, 2, 3))


def test_remove_independent_untouched():
    g = TaskGraph()
    g.issue(call(1), Safety.SAFE)
    g.issue(call(2), Safety.SAFE)
    assert g.remove(2) == [2]
    assert g.records[1].status == Status.ISSUED


def test_remove_unknown_id():
    g = TaskGraph()
    g.issue(call(1), Safety.SAFE)
    with pytest.raises(UnknownIdError):
        g.remove(9)


def test_remove_cancelled_rejected():
    g = TaskGraph()
    g.issue(call(1), Safety.SAFE)
    g.remove(1)
    with pytest.raises(CancelledIdError):
        g.remove(1)
    with pytest.raises(CancelledIdError):
        g.issue(call(1), Safety.SAFE)


def test_reference_to_cancelled_rejected():
    # a dependency that will never complete would strand the new call
    g = TaskGraph()
    g.issue(call(1), Safety.SAFE)
    g.remove(1)
    with pytest.raises(CancelledIdError):
        g.issue(call_ref(2, "f", 1), Safety.SAFE)


def test_ready_set_rules():
    g = TaskGraph()
    g.issue(call(1), Safety.SAFE)
    g.mark_executing(1)
    g.complete(1, 1, "ok")
    g.issue(call_ref(2, "f", 1), Safety.SAFE)
    assert g.ready_set() == [2]

    g2 = TaskGraph()
    g2.issue(call(1), Safety.SAFE)
    g2.mark_executing(1)
    g2.complete(1, 1, "ok")
    g2.issue(call_ref(2, "f", 1), Safety.UNSAFE)
    assert g2.ready_set() == []  # unsafe blocked before commit
    g2.final_query_received = True
    g2.latch_commit()
    assert g2.ready_set() == [2]


def test_ready_set_ascending_and_deterministic():
    g = TaskGraph()
    for cid in (3, 1, 2):
        g.issue(call(cid), Safety.SAFE)
    assert g.ready_set() == [1, 2, 3] == g.ready_set()


def test_commit_rules():
    g = TaskGraph()
    g.issue(call(1), Safety.SAFE)
    assert g.maybe_commit(Pause()) is False  # final not received
    g.note_final_query()
    g.issue(call(2), Safety.SAFE)
    g.issue(call(3), Safety.SAFE)
    assert g.would_commit(call(2)) is False  # modification of existing id
    assert g.maybe_commit(call(2)) is False
    assert g.maybe_commit(Pause()) is True
    assert g.committed
    # latched: never reverts, never re-commits
    assert g.maybe_commit(Pause()) is False
    assert g.committed


def test_commit_on_fresh_id_only():
    g = TaskGraph()
    g.note_final_query()
    g.issue(call(3), Safety.SAFE)
    assert g.would_commit(call(4)) is True
    assert g.would_commit(call(2)) is False


def test_complete_generations():
    g = TaskGraph()
    g.issue(call(1), Safety.SAFE)
    g.mark_executing(1)
    res = g.complete(1, 1, "obs")
    assert res.deliver
    assert g.records[1].observation == "obs"
    # duplicate completion never delivers twice
    res2 = g.complete(1, 1, "obs")
    assert not res2.deliver


def test_complete_cancelled_emits_cancel_once():
    g = TaskGraph()
    g.issue(call(1), Safety.SAFE)
    g.mark_executing(1)
    g.records[1].status = Status.CANCELLED  # cancelled without notification
    g.records[1].cancel_notified = False
    res = g.complete(1, 1, "obs")
    assert not res.deliver and res.emit_cancel
    res2 = g.complete(1, 1, "obs")
    assert not res2.deliver and not res2.emit_cancel


def test_complete_unknown_generation():
    g = TaskGraph()
    g.issue(call(1), Safety.SAFE)
    with pytest.raises(Exception):
        g.complete(1, 1, "obs")  # never dispatched


def test_modify_completed_rejected():
    g = TaskGraph()
    g.issue(call(1), Safety.SAFE)
    g.mark_executing(1)
    g.complete(1, 1, "obs")
    with pytest.raises(ConsumedObservationError):
        g.issue(call(1, "t", "new"), Safety.SAFE)
    with pytest.raises(ConsumedObservationError):
        g.remove(1)


def test_post_commit_unsafe_edit_rules():
    g = TaskGraph()
    g.note_final_query()
    g.issue(call(1, "send"), Safety.UNSAFE)
    g.latch_commit()
    # held (not yet executing): edits still allowed post-commit
    rec = g.issue(call(1, "send", "fixed"), Safety.UNSAFE)
    assert rec.generation == 2
    g.mark_executing(1)
    with pytest.raises(PostCommitEditError):
        g.issue(call(1, "send", "again"), Safety.UNSAFE)
    with pytest.raises(PostCommitEditError):
        g.remove(1)


def test_unsafe_never_executes_before_commit():
    g = TaskGraph()
    g.issue(call(1, "send"), Safety.UNSAFE)
    with pytest.raises(PostCommitEditError):
        g.mark_executing(1)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def brute_force_dependents(records: dict[int, frozenset[int]], root: int) -> set[int]:
    out = set()
    changed = True
    while changed:
        changed = False
        for cid, deps in records.items():
            if cid in out or cid == root:
                continue
            if root in deps or deps & out:
                out.add(cid)
                changed = True
    return out


def random_dag(rng, max_nodes=20):
    g = TaskGraph()
    n = rng.randint(1, max_nodes)
    for cid in range(1, n + 1):
        refs = [r for r in range(1, cid) if rng.random() < 0.3]
        g.issue(call_ref(cid, "f", *refs), Safety.SAFE)
    return g


def test_cancellation_closure_matches_brute_force():
    rng = random.Random(99)
    for _ in range(300):
        g = random_dag(rng)
        deps = {cid: rec.deps for cid, rec in g.records.items()}
        root = rng.randint(1, len(g.records))
        expected = brute_force_dependents(deps, root) | {root}
        cancelled = set(g.remove(root))
        assert cancelled == expected


def test_cancellation_order_is_topological():
    rng = random.Random(101)
    for _ in range(100):
        g = random_dag(rng)
        deps = {cid: rec.deps for cid, rec in g.records.items()}
        root = rng.randint(1, len(g.records))
        order = g.remove(root)
        seen = set()
        for cid in order:
            assert not (deps[cid] & (set(order) - seen)), "dependency after dependent"
            seen.add(cid)


def random_schedule_exploration(seed, steps=40):
    """Random interleaving of issue/modify/remove/dispatch/complete/commit."""
    rng = random.Random(seed)
    g = TaskGraph()
    next_id = 1
    in_flight = []
    unsafe_dispatches_pre_commit = 0
    for _ in range(steps):
        op = rng.randint(0, 5)
        try:
            if op == 0:
                refs = [r for r in g.records if rng.random() < 0.2]
                safety = rng.choice([Safety.SAFE, Safety.UNSAFE])
                g.issue(call_ref(next_id, "f", *refs), safety)
                next_id += 1
            elif op == 1 and g.records:
                target = rng.choice(list(g.records))
                safety = rng.choice([Safety.SAFE, Safety.UNSAFE])
                g.issue(call(target, "f", rng.random()), safety)
            elif op == 2 and g.records:
                g.remove(rng.choice(list(g.records)))
            elif op == 3:
                for cid in g.ready_set():
                    rec = g.mark_executing(cid)
                    if rec.safety == Safety.UNSAFE and not g.committed:
                        unsafe_dispatches_pre_commit += 1
                    in_flight.append((cid, rec.generation))
            elif op == 4 and in_flight:
                cid, gen = in_flight.pop(rng.randrange(len(in_flight)))
                g.complete(cid, gen, "obs")
            else:
                if not g.final_query_received and rng.random() < 0.3:
                    g.note_final_query()
                g.maybe_commit(Pause() if rng.random() < 0.5 else call(next_id))
        except Exception:
            continue
    return g, unsafe_dispatches_pre_commit


def test_unsafe_never_dispatched_before_commit_random_schedules():
    for seed in range(500):
        g, bad = random_schedule_exploration(seed)
        assert bad == 0
        # commit latched implies final received
        if g.committed:
            assert g.final_query_received


def test_acyclicity_preserved_by_random_schedules():
    for seed in range(100):
        g, _ = random_schedule_exploration(seed)
        # Kahn's algorithm must consume every record.
        remaining = {cid: set(rec.deps) for cid, rec in g.records.items()}
        while remaining:
            free = [cid for cid, deps in remaining.items() if not deps]
            assert free, "cycle detected"
            for cid in free:
                del remaining[cid]
            for deps in remaining.values():
                deps.difference_update(free)


def test_exactly_once_delivery_random_schedules():
    # deliver=True happens at most once per id after its last edit
    for seed in range(300):
        rng = random.Random(10_000 + seed)
        g = TaskGraph()
        next_id = 1
        in_flight = []
        delivered: list[tuple[int, int]] = []
        for _ in range(30):
            op = rng.randint(0, 4)
            try:
                if op == 0:
                    g.issue(call(next_id), rng.choice([Safety.SAFE, Safety.UNSAFE]))
                    next_id += 1
                elif op == 1 and g.records:
                    g.issue(call(rng.choice(list(g.records)), "f", rng.random()), Safety.SAFE)
                elif op == 2:
                    if not g.final_query_received:
                        g.note_final_query()
                    g.maybe_commit(Pause())
                elif op == 3:
                    for cid in g.ready_set():
                        rec = g.mark_executing(cid)
                        in_flight.append((cid, rec.generation))
                        if rng.random() < 0.3:  # duplicate completion attempt
                            in_flight.append((cid, rec.generation))
                elif in_flight:
                    cid, gen = in_flight.pop(rng.randrange(len(in_flight)))
                    if g.complete(cid, gen, "obs").deliver:
                        delivered.append((cid, gen))
            except Exception:
                continue
        assert len(delivered) == len(set(delivered))
        for cid, gen in delivered:
            assert g.records[cid].generation == gen  # only the final generation


def test_ready_set_monotone_under_complete():
    rng = random.Random(17)
    for _ in range(100):
        g = random_dag(rng, max_nodes=10)
        for cid in g.ready_set():
            g.mark_executing(cid)
        executing = [c for c, r in g.records.items() if r.status == Status.EXECUTING]
        if not executing:
            continue
        before = set(g.ready_set())
        target = rng.choice(executing)
        g.complete(target, g.records[target].generation, "obs")
        after = set(g.ready_set())
        assert before <= after
