"""Executable well-typedness checks, run between interpreter steps.

The harness maintains the metatheoretic contexts alongside execution: the
region set R, the location typing M, and a per-thread effect assignment
delta.  After every step it re-derives the contexts from the step rule
(fresh regions extend R, fresh locations extend M, capability operations
and spawns update delta constructively) and re-validates:

  * thread typing  - every thread's expression types at unit under delta,
    with an output effect matching the thread's standing obligation;
  * store consistency - delta's regions exist, dynamic counts dominate
    static counts, and lock ownership is exclusive down each subtree;
  * store typing   - the store's regions equal R, its locations equal M's
    domain, and every stored value is closed and types at M's entry under
    empty effects;
  * not-stuck      - every thread can step, finish, spawn, or is waiting
    for a lock that a live thread actually holds.

Effect comparisons here ignore purity flags: beta reduction inlines call
frames, and it is exactly those frames that restore purity on return.
Counts and parents, which the store-level invariants depend on, are
checked exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import effects as fx
from .interp import BlockedOn, Config, Done, Spawned, Stepped, StepOutcome, Stuck
from .store import Store
from .syntax import (
    EMPTY_EFFECT,
    HEAP,
    Capability,
    Effect,
    Expr,
    FnType,
    Location,
    RegionLit,
    RegionPolyType,
    Type,
    UnitType,
    free_term_vars,
    subst_region_effect,
)
from .typecheck import CheckFailure, Checker, TypedProgram, _Env, type_eq


@dataclass(frozen=True)
class Violation:
    check: str    # "thread-typing" | "store-consistency" | "store-typing" | "not-stuck"
    message: str
    thread: Optional[int] = None

    def to_json(self) -> dict:
        return {"check": self.check, "message": self.message, "thread": self.thread}


def _retype(regions: frozenset[RegionLit], locations: dict[Location, Type],
            expr: Expr, eff: Effect) -> tuple[Type, Effect]:
    checker = Checker(regions=regions, locations=dict(locations), lenient=True)
    return checker.check(expr, _Env({}, frozenset()), eff)


def check_thread_typing(regions: frozenset[RegionLit],
                        locations: dict[Location, Type],
                        threads, delta: dict[int, Effect],
                        obligations: dict[int, Effect],
                        only: Optional[set[int]] = None) -> list[Violation]:
    out: list[Violation] = []
    for thread in threads:
        if only is not None and thread.tid not in only:
            continue
        eff = delta.get(thread.tid)
        if eff is None:
            out.append(Violation("thread-typing",
                                 f"thread {thread.tid} has no effect assignment",
                                 thread.tid))
            continue
        try:
            t, final = _retype(regions, locations, thread.expr, eff)
        except CheckFailure as exc:
            out.append(Violation("thread-typing",
                                 f"thread {thread.tid} fails to type: "
                                 f"{exc.diagnostic.render()}", thread.tid))
            continue
        if not isinstance(t, UnitType):
            out.append(Violation("thread-typing",
                                 f"thread {thread.tid} types at {t}, not unit",
                                 thread.tid))
        obligation = obligations.get(thread.tid, EMPTY_EFFECT)
        if not final.same_counts(obligation):
            out.append(Violation("thread-typing",
                                 f"thread {thread.tid} ends with effect "
                                 f"{final.pretty()}, obligation is "
                                 f"{obligation.pretty()}", thread.tid))
    return out


def check_store_consistency(store: Store, delta: dict[int, Effect]) -> list[Violation]:
    out: list[Violation] = []
    store_regions = store.region_ids()

    # Region consistency: every region named by delta exists in the store.
    for tid, eff in delta.items():
        for r, _, parent in eff.items():
            named = [r] + ([parent] if isinstance(parent, RegionLit) else [])
            for x in named:
                if isinstance(x, RegionLit) and x not in store_regions:
                    out.append(Violation(
                        "store-consistency",
                        f"thread {tid}'s effect names region {x}, absent from the store",
                        tid))

    # Static-dynamic count consistency: dynamic counts dominate static ones.
    for tid, eff in delta.items():
        for r, cap, _ in eff.items():
            node = store.find(r) if isinstance(r, RegionLit) else None
            if node is None:
                continue  # reported above
            dyn = node.counts_for(tid)
            if dyn.rg < cap.rg or dyn.lk < cap.lk:
                out.append(Violation(
                    "store-consistency",
                    f"thread {tid} statically holds {cap} of {r} but dynamically "
                    f"has {dyn}", tid))

    # Mutual exclusion over the static assignment, subtree included.
    holders: dict[RegionLit, int] = {}
    for tid, eff in delta.items():
        for r, cap, _ in eff.items():
            if cap.lk > 0 and isinstance(r, RegionLit):
                if r in holders and holders[r] != tid:
                    out.append(Violation(
                        "store-consistency",
                        f"threads {holders[r]} and {tid} both hold a static lock "
                        f"on {r}", tid))
                holders[r] = tid
    for r, tid in holders.items():
        for sub in store.subtree_ids(r):
            if sub != r and sub in holders and holders[sub] != tid:
                out.append(Violation(
                    "store-consistency",
                    f"thread {holders[sub]} holds a lock inside {r}'s subtree, "
                    f"which thread {tid} has locked", holders[sub]))
    return out


def check_store_typing(regions: frozenset[RegionLit],
                       locations: dict[Location, Type],
                       store: Store,
                       dirty: Optional[set[Location]] = None) -> list[Violation]:
    out: list[Violation] = []
    store_regions = store.region_ids()
    if store_regions != regions:
        out.append(Violation("store-typing",
                             f"store regions {sorted(map(str, store_regions))} differ "
                             f"from R {sorted(map(str, regions))}"))
    stored = store.locations()
    if set(stored) != set(locations):
        out.append(Violation("store-typing",
                             "locations in the store differ from the domain of M"))
    for loc, value in stored.items():
        if dirty is not None and loc not in dirty:
            continue
        want = locations.get(loc)
        if want is None:
            continue  # reported above
        if free_term_vars(value):
            out.append(Violation("store-typing",
                                 f"stored value at {loc} is not closed"))
            continue
        try:
            t, final = _retype(regions, locations, value, EMPTY_EFFECT)
        except CheckFailure as exc:
            out.append(Violation("store-typing",
                                 f"stored value at {loc} fails to type: "
                                 f"{exc.diagnostic.render()}"))
            continue
        if not type_eq(t, want, lenient=True):
            out.append(Violation("store-typing",
                                 f"stored value at {loc} has type {t}, M says {want}"))
        if not final.is_empty():
            out.append(Violation("store-typing",
                                 f"stored value at {loc} has non-empty effect"))
    return out


def check_not_stuck(outcomes: dict[int, StepOutcome],
                    active: frozenset[int]) -> list[Violation]:
    out: list[Violation] = []
    for tid, outcome in outcomes.items():
        if isinstance(outcome, Stuck):
            out.append(Violation("not-stuck",
                                 f"thread {tid} is stuck: {outcome.code}: "
                                 f"{outcome.detail}", tid))
        elif isinstance(outcome, BlockedOn):
            if not (outcome.holders & active):
                out.append(Violation("not-stuck",
                                     f"thread {tid} waits on {outcome.region} whose "
                                     f"lock holder has terminated", tid))
    return out


class Harness:
    """Tracks (R, M, delta) across a run and validates every step."""

    def __init__(self, typed: TypedProgram):
        main_t = typed.def_types["main"]
        assert isinstance(main_t, RegionPolyType) and isinstance(main_t.body, FnType)
        self.main_in = subst_region_effect(main_t.body.effect_in, main_t.var, HEAP)
        self.main_out = subst_region_effect(main_t.body.effect_out, main_t.var, HEAP)
        self.regions: frozenset[RegionLit] = frozenset()
        self.locations: dict[Location, Type] = {}
        self.delta: dict[int, Effect] = {}
        self.obligations: dict[int, Effect] = {}
        self.violations_seen = 0
        # tid -> (expr object, effect object) last validated; compared by
        # identity, so any change to either forces a re-check.
        self._typed_cache: dict[int, tuple[Expr, Optional[Effect]]] = {}

    # -- lifecycle ---------------------------------------------------------------

    def observe_init(self, config: Config) -> None:
        self.regions = frozenset({HEAP})
        self.locations = {}
        self.delta = {1: self.main_in}
        self.obligations = {1: self.main_out}
        violations = self._full_check(config, dirty=None)
        if violations:
            self._raise(0, violations)

    def after_step(self, index: int, before: Config, tid: int,
                   outcome: StepOutcome, after: Config,
                   outcomes: dict[int, StepOutcome]) -> list[Violation]:
        violations: list[Violation] = []
        prev_regions = self.regions
        prev_locations = set(self.locations)
        dirty: set[Location] = set()
        recheck_all = False
        retype: set[int] = {tid}

        if isinstance(outcome, Stepped):
            if outcome.rule == "E-NG":
                parent, new = outcome.info
                self.regions = self.regions | {new}
                self.delta[tid] = self.delta[tid].with_entry(
                    new, Capability(1, 1, pure=True), parent)
            elif outcome.rule == "E-NR":
                loc, value = outcome.info
                try:
                    t, _ = _retype(self.regions, self.locations, value, EMPTY_EFFECT)
                    self.locations[loc] = t
                except CheckFailure as exc:
                    violations.append(Violation(
                        "store-typing",
                        f"allocated value fails to type: {exc.diagnostic.render()}", tid))
                dirty.add(loc)
            elif outcome.rule == "E-AS":
                loc, _ = outcome.info
                dirty.add(loc)
            elif outcome.rule == "E-C":
                op, region = outcome.info
                try:
                    self.delta[tid] = fx.apply_cap_op(self.delta[tid], region, op)
                except fx.CapError as exc:
                    violations.append(Violation(
                        "thread-typing",
                        f"capability step not reflected statically: {exc.message}", tid))
                removed = prev_regions - after.store.region_ids()
                if removed:
                    self.regions = self.regions - removed
                    self.locations = {l: t for l, t in self.locations.items()
                                      if l.region not in removed}
                    recheck_all = True
        elif isinstance(outcome, Spawned):
            try:
                self.delta[outcome.parent] = fx.effect_minus_counts(
                    self.delta[outcome.parent], outcome.transferred)
            except fx.CapError as exc:
                violations.append(Violation(
                    "thread-typing",
                    f"spawn transfer not covered statically: {exc.message}",
                    outcome.parent))
            self.delta[outcome.child] = outcome.transferred
            self.obligations[outcome.child] = EMPTY_EFFECT
            retype.add(outcome.child)
        elif isinstance(outcome, Done):
            final = self.delta.pop(tid, EMPTY_EFFECT)
            obligation = self.obligations.pop(tid, EMPTY_EFFECT)
            if not final.same_counts(obligation):
                violations.append(Violation(
                    "thread-typing",
                    f"thread {tid} finished with effect {final.pretty()}, "
                    f"obligation was {obligation.pretty()}", tid))
            retype.discard(tid)
            self._typed_cache.pop(tid, None)

        # Context monotonicity: R and M only shrink across deallocation steps.
        deallocating = (isinstance(outcome, Stepped) and outcome.rule == "E-C")
        if not deallocating:
            if not (prev_regions <= self.regions):
                violations.append(Violation(
                    "store-typing", "R shrank on a non-deallocating step"))
            if not (prev_locations <= set(self.locations)):
                violations.append(Violation(
                    "store-typing", "M shrank on a non-deallocating step"))

        # Not-stuck is evaluated on the pre-step configuration, whose
        # outcomes the scheduler already computed.
        active = frozenset(t.tid for t in before.threads)
        violations += check_not_stuck(outcomes, active)

        violations += self._full_check(
            after, dirty=None if recheck_all else dirty,
            only=None if recheck_all else retype)
        if violations:
            self.violations_seen += len(violations)
        return violations

    # -- internals ----------------------------------------------------------------

    def _full_check(self, config: Config, dirty: Optional[set[Location]],
                    only: Optional[set[int]] = None) -> list[Violation]:
        out: list[Violation] = []
        todo = set()
        for t in config.threads:
            if only is None or t.tid in only:
                todo.add(t.tid)
                continue
            cached = self._typed_cache.get(t.tid)
            if cached is None or cached[0] is not t.expr \
                    or cached[1] is not self.delta.get(t.tid):
                todo.add(t.tid)
        out += check_thread_typing(self.regions, self.locations, config.threads,
                                   self.delta, self.obligations, only=todo)
        for t in config.threads:
            if t.tid in todo and not any(v.thread == t.tid for v in out):
                self._typed_cache[t.tid] = (t.expr, self.delta.get(t.tid))
        out += check_store_consistency(config.store, self.delta)
        out += check_store_typing(self.regions, self.locations, config.store,
                                  dirty=dirty)
        return out

    def _raise(self, step: int, violations: list[Violation]) -> None:
        from .interp import SoundnessViolation

        raise SoundnessViolation({
            "step": step,
            "violations": [v.to_json() for v in violations],
        })
