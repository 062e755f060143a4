"""The runtime store: a tree of regions.

Each region holds a per-thread count map (region count, lock count), a heap
mapping locations to values, and its child regions.  All operations are
functional: they return a new store and never mutate the old one, so
configurations can be branched cheaply during exhaustive exploration.

Operations are partial.  Failures split into two kinds: `Blocked` means a
lock operation must wait for another thread (the scheduler retries), while
`StoreFault` signals a soundness violation that well-typed programs never
reach.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterator, Optional

from .syntax import CapOp, Effect, Expr, Location, RegionLit


@dataclass(frozen=True)
class Counts:
    rg: int = 0
    lk: int = 0

    def __str__(self) -> str:
        return f"({self.rg},{self.lk})"


ZERO = Counts(0, 0)


class StoreFault(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


@dataclass(frozen=True)
class Blocked:
    """A lock operation must wait; `holders` are the threads in the way."""

    region: RegionLit
    holders: frozenset[int]


@dataclass(frozen=True)
class RegionNode:
    rid: RegionLit
    threads: tuple[tuple[int, Counts], ...]  # sorted by thread id
    heap: tuple[tuple[Location, Expr], ...]  # sorted by location index
    children: tuple["RegionNode", ...]

    def counts_for(self, tid: int) -> Counts:
        for t, c in self.threads:
            if t == tid:
                return c
        return ZERO

    def total_rg(self) -> int:
        return sum(c.rg for _, c in self.threads)

    def lock_holders(self) -> frozenset[int]:
        return frozenset(t for t, c in self.threads if c.lk > 0)

    def with_counts(self, tid: int, counts: Counts) -> "RegionNode":
        table = {t: c for t, c in self.threads}
        if counts == ZERO:
            table.pop(tid, None)
        else:
            table[tid] = counts
        return replace(self, threads=tuple(sorted(table.items())))

    def heap_get(self, loc: Location) -> Optional[Expr]:
        for l, v in self.heap:
            if l == loc:
                return v
        return None

    def heap_set(self, loc: Location, value: Expr) -> "RegionNode":
        table = {l: v for l, v in self.heap}
        table[loc] = value
        return replace(self, heap=tuple(sorted(table.items(), key=lambda kv: kv[0].idx)))


@dataclass(frozen=True)
class Store:
    root: Optional[RegionNode]

    # -- traversal ---------------------------------------------------------------

    def path_to(self, rid: RegionLit) -> Optional[tuple[RegionNode, ...]]:
        """Root-to-node path, or None when the region does not exist."""
        def walk(node: RegionNode, trail: tuple[RegionNode, ...]):
            trail = trail + (node,)
            if node.rid == rid:
                return trail
            for child in node.children:
                found = walk(child, trail)
                if found is not None:
                    return found
            return None

        if self.root is None:
            return None
        return walk(self.root, ())

    def find(self, rid: RegionLit) -> Optional[RegionNode]:
        path = self.path_to(rid)
        return path[-1] if path else None

    def regions(self) -> Iterator[RegionNode]:
        def walk(node: RegionNode) -> Iterator[RegionNode]:
            yield node
            for child in node.children:
                yield from walk(child)

        if self.root is not None:
            yield from walk(self.root)

    def region_ids(self) -> frozenset[RegionLit]:
        return frozenset(n.rid for n in self.regions())

    def parent_of(self, rid: RegionLit) -> Optional[RegionLit]:
        path = self.path_to(rid)
        if path is None or len(path) < 2:
            return None
        return path[-2].rid

    def locations(self) -> dict[Location, Expr]:
        out: dict[Location, Expr] = {}
        for node in self.regions():
            for loc, v in node.heap:
                out[loc] = v
        return out

    def region_of_location(self, loc: Location) -> Optional[RegionLit]:
        for node in self.regions():
            if node.heap_get(loc) is not None:
                return node.rid
        return None

    def subtree_ids(self, rid: RegionLit) -> frozenset[RegionLit]:
        node = self.find(rid)
        if node is None:
            return frozenset()
        return Store(node).region_ids()

    def _rebuild(self, rid: RegionLit, fn: Callable[[RegionNode], Optional[RegionNode]]) -> "Store":
        """Apply fn to the named node; returning None deletes its subtree."""
        def walk(node: RegionNode) -> Optional[RegionNode]:
            if node.rid == rid:
                return fn(node)
            kids = []
            hit = False
            for child in node.children:
                res = walk(child)
                if res is not child:
                    hit = True
                if res is not None:
                    kids.append(res)
            if not hit:
                return node
            return replace(node, children=tuple(kids))

        assert self.root is not None
        return Store(walk(self.root))

    # -- liveness and accessibility -----------------------------------------------

    def is_live(self, rid: RegionLit) -> bool:
        """Positive total region count, and all ancestors live too."""
        path = self.path_to(rid)
        if path is None:
            return False
        return all(node.total_rg() > 0 for node in path)

    def is_accessible(self, rid: RegionLit, tid: int) -> bool:
        """Live, and this thread holds a lock on the region or an ancestor."""
        path = self.path_to(rid)
        if path is None or not all(n.total_rg() > 0 for n in path):
            return False
        return any(n.counts_for(tid).lk > 0 for n in path)

    # -- the five partial functions plus transfer ----------------------------------

    def alloc(self, rid: RegionLit, loc_idx: int, value: Expr) -> tuple["Store", Location]:
        if not self.is_live(rid):
            raise StoreFault("NotLive", f"allocation into dead region {rid}")
        loc = Location(loc_idx, rid)
        return self._rebuild(rid, lambda n: n.heap_set(loc, value)), loc

    def lookup(self, loc: Location, tid: int) -> Expr:
        rid = self.region_of_location(loc)
        if rid is None:
            raise StoreFault("UnknownLocation", f"location {loc} does not exist")
        if not self.is_accessible(rid, tid):
            raise StoreFault("Inaccessible",
                             f"thread {tid} reads {loc} without holding a lock on "
                             f"{rid} or an ancestor")
        node = self.find(rid)
        assert node is not None
        value = node.heap_get(loc)
        assert value is not None
        return value

    def update(self, loc: Location, value: Expr, tid: int) -> "Store":
        rid = self.region_of_location(loc)
        if rid is None:
            raise StoreFault("UnknownLocation", f"location {loc} does not exist")
        if not self.is_accessible(rid, tid):
            raise StoreFault("Inaccessible",
                             f"thread {tid} writes {loc} without holding a lock on "
                             f"{rid} or an ancestor")
        return self._rebuild(rid, lambda n: n.heap_set(loc, value))

    def newrgn(self, parent: RegionLit, tid: int, name: str) -> tuple["Store", RegionLit]:
        if not self.is_live(parent):
            raise StoreFault("NotLive", f"new region under dead region {parent}")
        rid = RegionLit(name)
        child = RegionNode(rid, ((tid, Counts(1, 1)),), (), ())
        return self._rebuild(parent, lambda n: replace(n, children=n.children + (child,))), rid

    def updcap(self, op: CapOp, rid: RegionLit, tid: int):
        """Returns a new Store, or Blocked when a lock must be waited for."""
        path = self.path_to(rid)
        if path is None or not all(n.total_rg() > 0 for n in path):
            raise StoreFault("NotLive", f"capability update on dead region {rid}")
        node = path[-1]
        mine = node.counts_for(tid)
        if op is CapOp.RG_PLUS:
            if mine.rg < 1:
                raise StoreFault("CountUnderflow",
                                 f"thread {tid} shares {rid} without holding a region count")
            return self._rebuild(rid, lambda n: n.with_counts(tid, Counts(mine.rg + 1, mine.lk)))
        if op is CapOp.RG_MINUS:
            if mine.rg < 1:
                raise StoreFault("CountUnderflow",
                                 f"thread {tid} frees {rid} without holding a region count")
            new_counts = Counts(mine.rg - 1, mine.lk)
            updated = self._rebuild(rid, lambda n: n.with_counts(tid, new_counts))
            survivor = updated.find(rid)
            assert survivor is not None
            if survivor.total_rg() == 0:
                # Bulk deallocation: the whole subtree goes at once.
                return updated._rebuild(rid, lambda n: None)
            return updated
        if op is CapOp.LK_PLUS:
            blockers = self._lock_blockers(rid, tid)
            if blockers:
                return Blocked(rid, blockers)
            return self._rebuild(rid, lambda n: n.with_counts(tid, Counts(mine.rg, mine.lk + 1)))
        if op is CapOp.LK_MINUS:
            if mine.lk < 1:
                raise StoreFault("CountUnderflow",
                                 f"thread {tid} unlocks {rid} without holding its lock")
            return self._rebuild(rid, lambda n: n.with_counts(tid, Counts(mine.rg, mine.lk - 1)))
        raise TypeError(f"unknown capability operator {op!r}")

    def _lock_blockers(self, rid: RegionLit, tid: int) -> frozenset[int]:
        """Threads preventing `tid` from locking `rid`.

        A lock on a region atomically covers its subtree, so acquisition must
        wait while any other thread holds a lock on the region itself, on an
        ancestor, or anywhere inside its subtree.
        """
        path = self.path_to(rid)
        assert path is not None
        holders: set[int] = set()
        for node in path:  # region itself and its ancestors
            holders |= node.lock_holders()
        for node in Store(path[-1]).regions():  # its subtree
            holders |= node.lock_holders()
        holders.discard(tid)
        return frozenset(holders)

    def transfer(self, giver: int, taker: int, eff: Effect) -> "Store":
        """Move the capability counts named by eff from giver to taker."""
        out = self
        for r, cap, _ in eff.items():
            assert isinstance(r, RegionLit), f"transfer of non-literal region {r}"
            node = out.find(r)
            if node is None:
                raise StoreFault("InsufficientDynamicCounts",
                                 f"transfer names missing region {r}")
            have = node.counts_for(giver)
            if have.rg < cap.rg or have.lk < cap.lk:
                raise StoreFault("InsufficientDynamicCounts",
                                 f"thread {giver} holds {have} of {r}, cannot "
                                 f"transfer ({cap.rg},{cap.lk})")
            if giver == taker:
                continue

            def move(n: RegionNode, c=cap) -> RegionNode:
                h = n.counts_for(giver)
                n = n.with_counts(giver, Counts(h.rg - c.rg, h.lk - c.lk))
                t = n.counts_for(taker)
                return n.with_counts(taker, Counts(t.rg + c.rg, t.lk + c.lk))

            out = out._rebuild(r, move)
        return out

    # -- invariants and serialization ----------------------------------------------

    def mutual_exclusion_ok(self) -> bool:
        """At most one lock holder per region, and no foreign locks inside
        any held subtree."""
        for node in self.regions():
            holders = node.lock_holders()
            if len(holders) > 1:
                return False
            if holders:
                holder = next(iter(holders))
                for sub in Store(node).regions():
                    if sub is node:
                        continue
                    if any(t != holder for t in sub.lock_holders()):
                        return False
        return True

    def to_json(self, value_str: Callable[[Expr], str]) -> Optional[dict]:
        def conv(node: RegionNode) -> dict:
            return {
                "region": str(node.rid),
                "threads": {str(t): [c.rg, c.lk] for t, c in node.threads},
                "heap": {str(l): value_str(v) for l, v in node.heap},
                "children": [conv(c) for c in sorted(node.children, key=lambda n: n.rid.name)],
            }

        return conv(self.root) if self.root is not None else None


def initial_store(heap: RegionLit, tid: int) -> Store:
    """The heap region alone, with the first thread holding (1,0)."""
    return Store(RegionNode(heap, ((tid, Counts(1, 0)),), (), ()))
