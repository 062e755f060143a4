from __future__ import annotations

import pytest

from reglock.interp import initial_config, run_seeded
from reglock.meta import (
    Harness,
    check_not_stuck,
    check_store_consistency,
    check_store_typing,
    check_thread_typing,
)
from reglock.interp import BlockedOn, Stuck, Thread
from reglock.parser import parse_expr, parse_program
from reglock.store import Counts, RegionNode, Store, initial_store
from reglock.syntax import (
    BOTTOM,
    EMPTY_EFFECT,
    HEAP,
    INT,
    Capability,
    Const,
    Effect,
    FnType,
    RegionLit,
)
from reglock.typecheck import check_program
from conftest import RUNNABLE, corpus_text

A = RegionLit("a")


def typed(name: str):
    result = check_program(parse_program(corpus_text(name)))
    assert result.ok
    return result.typed


def node(rid, threads, heap=(), children=()):
    return RegionNode(rid, tuple(sorted(threads.items())), tuple(heap), tuple(children))


def heap_effect(rg=1, lk=0, pure=True) -> Effect:
    return Effect.of((HEAP, Capability(rg, lk, pure), BOTTOM))


class TestThreadTyping:
    def test_initial_configuration_is_well_typed(self):
        t = typed("basic_region.rgn")
        config = initial_config(t.linked_main())
        harness = Harness(t)
        harness.observe_init(config)  # raises on violation

    def test_effect_naming_missing_region_is_flagged(self):
        store = initial_store(HEAP, 1)
        delta = {1: Effect([(HEAP, Capability(1, 0), BOTTOM),
                            (A, Capability(1, 0, pure=False), HEAP)])}
        violations = check_store_consistency(store, delta)
        assert any("absent from the store" in v.message for v in violations)

    def test_empty_thread_list_is_fine(self):
        assert check_thread_typing(frozenset({HEAP}), {}, [], {}, {}) == []

    def test_non_unit_thread_is_flagged(self):
        threads = [Thread(1, Const(5))]
        out = check_thread_typing(frozenset({HEAP}), {}, threads,
                                  {1: EMPTY_EFFECT}, {1: EMPTY_EFFECT})
        assert any("not unit" in v.message for v in out)


class TestStoreConsistency:
    def test_static_lock_without_dynamic_lock(self):
        store = Store(node(HEAP, {1: Counts(1, 0)}))
        delta = {1: heap_effect(1, 1)}  # claims a lock the store denies
        out = check_store_consistency(store, delta)
        assert any("dynamically has" in v.message for v in out)

    def test_two_static_lock_holders(self):
        store = Store(node(HEAP, {1: Counts(1, 1), 2: Counts(1, 1)}))
        delta = {1: heap_effect(1, 1), 2: heap_effect(1, 1)}
        out = check_store_consistency(store, delta)
        assert any("both hold a static lock" in v.message for v in out)

    def test_lock_inside_held_subtree(self):
        child = node(A, {2: Counts(1, 1)})
        store = Store(node(HEAP, {1: Counts(1, 1)}, children=(child,)))
        delta = {1: heap_effect(1, 1),
                 2: Effect.of((A, Capability(1, 1, pure=False), HEAP))}
        out = check_store_consistency(store, delta)
        assert any("subtree" in v.message for v in out)

    def test_example_sharing_accounting_is_consistent(self):
        # Two threads each statically hold half of a shared region.
        shared = node(A, {1: Counts(1, 0), 2: Counts(1, 0)})
        store = Store(node(HEAP, {1: Counts(1, 0)}, children=(shared,)))
        delta = {
            1: Effect([(HEAP, Capability(1, 0), BOTTOM),
                       (A, Capability(1, 0, pure=False), HEAP)]),
            2: Effect.of((A, Capability(1, 0, pure=False), HEAP)),
        }
        # thread 2's effect references A rooted at HEAP without holding the
        # heap itself: region consistency only needs the names to exist.
        assert check_store_consistency(store, delta) == []


class TestStoreTyping:
    def test_location_missing_from_m(self):
        store, loc = initial_store(HEAP, 1).alloc(HEAP, 1, Const(3))
        out = check_store_typing(frozenset({HEAP}), {}, store)
        assert any("differ from the domain of M" in v.message for v in out)

    def test_region_set_mismatch(self):
        store = initial_store(HEAP, 1)
        out = check_store_typing(frozenset({HEAP, A}), {}, store)
        assert any("differ from R" in v.message for v in out)

    def test_int_cell_ok(self):
        store, loc = initial_store(HEAP, 1).alloc(HEAP, 1, Const(3))
        out = check_store_typing(frozenset({HEAP}), {loc: INT}, store)
        assert out == []

    def test_stored_pure_function_value(self):
        # A closed lambda with empty declared effects types in the store;
        # the oracle is the checker itself.
        lam = parse_expr("\\x: int @ [{} -> {}]. x + 1")
        store, loc = initial_store(HEAP, 1).alloc(HEAP, 1, lam)
        want = FnType(INT, EMPTY_EFFECT, EMPTY_EFFECT, INT)
        assert check_store_typing(frozenset({HEAP}), {loc: want}, store) == []

    def test_wrong_cell_type_flagged(self):
        store, loc = initial_store(HEAP, 1).alloc(HEAP, 1, Const(True))
        out = check_store_typing(frozenset({HEAP}), {loc: INT}, store)
        assert any("has type bool" in v.message for v in out)


class TestNotStuck:
    def test_all_good(self):
        outcomes = {1: BlockedOn(1, A, frozenset({2}))}
        assert check_not_stuck(outcomes, active=frozenset({1, 2})) == []

    def test_stuck_thread_flagged(self):
        outcomes = {1: Stuck(1, "Inaccessible", "no lock")}
        out = check_not_stuck(outcomes, active=frozenset({1}))
        assert any("stuck" in v.message for v in out)

    def test_wait_on_terminated_holder_flagged(self):
        outcomes = {1: BlockedOn(1, A, frozenset({9}))}
        out = check_not_stuck(outcomes, active=frozenset({1}))
        assert any("terminated" in v.message for v in out)


class TestPreservationOverRuns:
    @pytest.mark.parametrize("name", RUNNABLE)
    def test_runs_report_zero_violations(self, name):
        t = typed(name)
        main = t.linked_main()
        for seed in (0, 1, 2):
            harness = Harness(t)
            trace = run_seeded(main, seed=seed, harness=harness)
            assert trace.terminal.kind in ("all_done", "deadlock"), \
                f"{name} seed {seed}: {trace.terminal}"
            assert harness.violations_seen == 0

    def test_fault_injection_is_caught_mid_run(self):
        # Drop a dynamic lock count behind the harness's back: static-dynamic
        # consistency must flag it on the next step.
        t = typed("basic_region.rgn")
        main = t.linked_main()
        harness = Harness(t)
        from reglock import interp as interp_mod
        from dataclasses import replace as dc_replace

        config = initial_config(main)
        harness.observe_init(config)
        tampered = False
        violations_found = None
        for index in range(200):
            if not config.threads:
                break
            outcomes = {th.tid: interp_mod.step_thread(config, th.tid)
                        for th in config.threads}
            tid = min(t_ for t_, o in outcomes.items()
                      if not isinstance(o, (BlockedOn, Stuck)))
            before = config
            config, rule = interp_mod._apply_outcome(config, outcomes[tid])
            if rule == "E-NG" and not tampered:
                # zero out the creating thread's lock count on the new region
                new_rid = outcomes[tid].info[1]
                store = config.store._rebuild(
                    new_rid, lambda n: n.with_counts(1, Counts(1, 0)))
                config = dc_replace(config, store=store)
                tampered = True
            violations = harness.after_step(index, before, tid, outcomes[tid],
                                            config, outcomes)
            if violations:
                violations_found = violations
                break
        assert tampered and violations_found
        assert any(v.check == "store-consistency" for v in violations_found)
