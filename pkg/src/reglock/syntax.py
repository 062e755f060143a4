"""Core syntax: region names, capabilities, effects, types and expressions.

Everything here is an immutable value.  Expressions carry an optional source
location that is ignored by structural equality, so a pretty-printed and
re-parsed term compares equal to the original.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional, Union


# ---------------------------------------------------------------------------
# Source locations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Loc:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


# ---------------------------------------------------------------------------
# Region names and parents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegionVar:
    """Static region variable bound by a region lambda or `newrgn`."""

    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class RegionLit:
    """Dynamic region literal; only the runtime mints these."""

    name: str

    def __str__(self) -> str:
        return "#" + self.name


RegionName = Union[RegionVar, RegionLit]

#: The distinguished literal for the global heap region.
HEAP = RegionLit("H")


class _Bottom:
    """Parent of the physical root region."""

    _instance: Optional["_Bottom"] = None

    def __new__(cls) -> "_Bottom":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "_"


class _Unknown:
    """Abstracted parent: the region is treated as a logical root."""

    _instance: Optional["_Unknown"] = None

    def __new__(cls) -> "_Unknown":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "?"


BOTTOM = _Bottom()
UNKNOWN = _Unknown()

Parent = Union[RegionVar, RegionLit, _Bottom, _Unknown]


def parent_str(p: Parent) -> str:
    if p is BOTTOM:
        return "_"
    if p is UNKNOWN:
        return "?"
    return str(p)


# ---------------------------------------------------------------------------
# Capabilities and effects
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Capability:
    """A (region count, lock count) pair with a purity flag.

    A pure capability is whole knowledge of a region's counts; an impure one
    is a fragment obtained by splitting.
    """

    rg: int
    lk: int
    pure: bool = True

    def __post_init__(self) -> None:
        if self.rg < 0 or self.lk < 0:
            raise ValueError(f"negative capability counts ({self.rg},{self.lk})")

    def __str__(self) -> str:
        bar = "" if self.pure else "~"
        return f"{bar}({self.rg},{self.lk})"


class Effect:
    """Ordered map from region names to (capability, parent) entries.

    Well-formedness: domain entries have region count >= 1 and every parent
    that is a region name is itself in the domain (chains terminate at `_`
    or `?` roots).  Equality is domain-wise and order-insensitive.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: Iterable[tuple[RegionName, Capability, Parent]] = ()):
        table: dict[RegionName, tuple[Capability, Parent]] = {}
        for r, cap, parent in entries:
            if r in table:
                raise ValueError(f"duplicate region {r} in effect")
            table[r] = (cap, parent)
        object.__setattr__(self, "_entries", table)

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def of(*entries: tuple[RegionName, Capability, Parent]) -> "Effect":
        return Effect(entries)

    def with_entry(self, r: RegionName, cap: Capability, parent: Parent) -> "Effect":
        items = dict(self._entries)
        items[r] = (cap, parent)
        return Effect((k, c, p) for k, (c, p) in items.items())

    def without(self, *regions: RegionName) -> "Effect":
        gone = set(regions)
        return Effect((k, c, p) for k, (c, p) in self._entries.items() if k not in gone)

    # -- queries ---------------------------------------------------------------

    def __contains__(self, r: RegionName) -> bool:
        return r in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def is_empty(self) -> bool:
        return not self._entries

    def domain(self) -> tuple[RegionName, ...]:
        return tuple(self._entries)

    def items(self) -> Iterator[tuple[RegionName, Capability, Parent]]:
        for r, (cap, parent) in self._entries.items():
            yield r, cap, parent

    def cap(self, r: RegionName) -> Capability:
        return self._entries[r][0]

    def parent(self, r: RegionName) -> Parent:
        return self._entries[r][1]

    def get(self, r: RegionName) -> Optional[tuple[Capability, Parent]]:
        return self._entries.get(r)

    def ancestors(self, r: RegionName) -> Iterator[RegionName]:
        """Walk parent links that stay inside the effect, nearest first."""
        seen = {r}
        cur = self._entries[r][1]
        while isinstance(cur, (RegionVar, RegionLit)) and cur in self._entries:
            if cur in seen:
                raise ValueError(f"parent cycle through {cur} in effect")
            seen.add(cur)
            yield cur
            cur = self._entries[cur][1]

    def descendants_of(self, r: RegionName) -> set[RegionName]:
        """Regions whose in-effect parent chain reaches `r` (excluding r)."""
        out: set[RegionName] = set()
        changed = True
        while changed:
            changed = False
            for k, (_, parent) in self._entries.items():
                if k in out or k == r:
                    continue
                if parent == r or (isinstance(parent, (RegionVar, RegionLit)) and parent in out):
                    out.add(k)
                    changed = True
        return out

    def well_formed(self) -> Optional[str]:
        """Return a reason string if ill-formed, else None."""
        for r, (cap, parent) in self._entries.items():
            if cap.rg < 1:
                return f"region {r} has region count {cap.rg}"
            if isinstance(parent, (RegionVar, RegionLit)):
                if parent == r:
                    return f"region {r} is its own parent"
                if parent not in self._entries:
                    return f"parent {parent} of {r} is not in the effect"
        for r in self._entries:
            try:
                for _ in self.ancestors(r):
                    pass
            except ValueError as exc:
                return str(exc)
        return None

    # -- comparisons -----------------------------------------------------------

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Effect):
            return NotImplemented
        return self._entries == other._entries

    def __hash__(self) -> int:
        return hash(frozenset((r, c, p if not isinstance(p, (_Bottom, _Unknown)) else repr(p))
                              for r, (c, p) in self._entries.items()))

    def same_counts(self, other: "Effect") -> bool:
        """Equality that ignores purity flags (counts and parents only)."""
        if set(self._entries) != set(other._entries):
            return False
        for r, (cap, parent) in self._entries.items():
            ocap, oparent = other._entries[r]
            if (cap.rg, cap.lk) != (ocap.rg, ocap.lk) or parent != oparent:
                return False
        return True

    # -- display ---------------------------------------------------------------

    def pretty(self, omit_bottom: bool = False, show_purity: bool = True) -> str:
        """Render the effect.

        With omit_bottom, entries parented at the physical root (the ambient
        heap capability) are hidden, and with show_purity=False counts print
        without the impurity mark: together these give the display format
        used for per-line effect reporting.
        """
        parts = []
        for r, (cap, parent) in self._entries.items():
            if omit_bottom and parent is BOTTOM:
                continue
            shown = str(cap) if show_purity else f"({cap.rg},{cap.lk})"
            parts.append(f"{r}^{shown}@{parent_str(parent)}")
        return "{" + ", ".join(parts) + "}"

    def __str__(self) -> str:
        return self.pretty()

    def __repr__(self) -> str:
        return f"Effect{self.pretty()}"


EMPTY_EFFECT = Effect()


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaseType:
    name: str  # "int" or "bool"

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class UnitType:
    def __str__(self) -> str:
        return "unit"


@dataclass(frozen=True)
class FnType:
    param: "Type"
    effect_in: Effect
    effect_out: Effect
    result: "Type"

    def __str__(self) -> str:
        return f"fn({self.param}) @ [{self.effect_in} -> {self.effect_out}] -> {self.result}"


@dataclass(frozen=True)
class RegionPolyType:
    var: RegionVar
    body: "Type"

    def __str__(self) -> str:
        return f"forall {self.var}. {self.body}"


@dataclass(frozen=True)
class RefType:
    elem: "Type"
    region: RegionName

    def __str__(self) -> str:
        return f"ref({self.elem}, {self.region})"


@dataclass(frozen=True)
class HandleType:
    region: RegionName

    def __str__(self) -> str:
        return f"rgn({self.region})"


Type = Union[BaseType, UnitType, FnType, RegionPolyType, RefType, HandleType]

INT = BaseType("int")
BOOL = BaseType("bool")
UNIT = UnitType()


# ---------------------------------------------------------------------------
# Calling modes and capability operators
# ---------------------------------------------------------------------------


class _SeqMode:
    _instance: Optional["_SeqMode"] = None

    def __new__(cls) -> "_SeqMode":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "seq"


SEQ_MODE = _SeqMode()


@dataclass(frozen=True)
class ParMode:
    """Thread-spawning application; transfer is None until inferred."""

    transfer: Optional[Effect] = None

    def __repr__(self) -> str:
        return f"par[{self.transfer}]"


CallingMode = Union[_SeqMode, ParMode]


class CapOp(Enum):
    RG_PLUS = "rg+"
    RG_MINUS = "rg-"
    LK_PLUS = "lk+"
    LK_MINUS = "lk-"


#: Surface keyword for each capability operator.
CAP_KEYWORD = {
    CapOp.RG_PLUS: "share",
    CapOp.RG_MINUS: "free",
    CapOp.LK_PLUS: "lock",
    CapOp.LK_MINUS: "unlock",
}


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


class UnitVal:
    """The unit constant's payload (distinct from None/False/0)."""

    _instance: Optional["UnitVal"] = None

    def __new__(cls) -> "UnitVal":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "()"


UNIT_VALUE = UnitVal()


@dataclass(frozen=True)
class Location:
    """Runtime heap location, tagged with the region literal it lives in."""

    idx: int
    region: RegionLit

    def __str__(self) -> str:
        return f"loc{self.idx}@{self.region}"


def _loc_field():
    return field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Var:
    name: str
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class Const:
    value: Union[int, bool, UnitVal]
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class Lambda:
    """Term abstraction.  A parser-generated `let` binder carries no
    annotations (param_type/effects are None) and is applied transparently."""

    param: str
    param_type: Optional[Type]
    body: "Expr"
    effect_in: Optional[Effect]
    effect_out: Optional[Effect]
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class RegionLambda:
    var: RegionVar
    body: "Expr"
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class App:
    fn: "Expr"
    arg: "Expr"
    mode: CallingMode = SEQ_MODE
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class RegionApp:
    fn: "Expr"
    region: RegionName
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class NewRef:
    init: "Expr"
    handle: "Expr"
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class Deref:
    ref: "Expr"
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class Assign:
    target: "Expr"
    value: "Expr"
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class NewRgn:
    var: RegionVar
    handle_name: str
    parent_handle: "Expr"
    body: "Expr"
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class Cap:
    op: CapOp
    handle: "Expr"
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class RgnVal:
    """Runtime-only region handle value; never produced by the parser."""

    region: RegionLit
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class LocVal:
    """Runtime-only location value; never produced by the parser."""

    location: Location
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class If:
    cond: "Expr"
    then: "Expr"
    orelse: "Expr"
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class Seq:
    first: "Expr"
    second: "Expr"
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class While:
    cond: "Expr"
    body: "Expr"
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class Prim:
    """Primitive operator over base-type values."""

    op: str
    args: tuple["Expr", ...]
    loc: Optional[Loc] = _loc_field()


Expr = Union[Var, Const, Lambda, RegionLambda, App, RegionApp, NewRef, Deref,
             Assign, NewRgn, Cap, RgnVal, LocVal, If, Seq, While, Prim]

#: Binary primitive signatures: op -> (operand base type, result type).
PRIM_BINARY = {
    "+": (INT, INT),
    "-": (INT, INT),
    "*": (INT, INT),
    "<": (INT, BOOL),
    "<=": (INT, BOOL),
    "==": (INT, BOOL),
    "!=": (INT, BOOL),
    "&&": (BOOL, BOOL),
    "||": (BOOL, BOOL),
}
PRIM_UNARY = {"!": (BOOL, BOOL)}


def is_value(e: Expr) -> bool:
    return isinstance(e, (Const, Lambda, RegionLambda, RgnVal, LocVal))


def scan_runtime_forms(e: Expr) -> bool:
    """True if the term contains any runtime-only node (RgnVal/LocVal)."""
    if isinstance(e, (RgnVal, LocVal)):
        return True
    return any(scan_runtime_forms(c) for c in children(e))


def children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, (Var, Const, RgnVal, LocVal)):
        return ()
    if isinstance(e, Lambda):
        return (e.body,)
    if isinstance(e, RegionLambda):
        return (e.body,)
    if isinstance(e, App):
        return (e.fn, e.arg)
    if isinstance(e, RegionApp):
        return (e.fn,)
    if isinstance(e, NewRef):
        return (e.init, e.handle)
    if isinstance(e, Deref):
        return (e.ref,)
    if isinstance(e, Assign):
        return (e.target, e.value)
    if isinstance(e, NewRgn):
        return (e.parent_handle, e.body)
    if isinstance(e, Cap):
        return (e.handle,)
    if isinstance(e, If):
        return (e.cond, e.then, e.orelse)
    if isinstance(e, Seq):
        return (e.first, e.second)
    if isinstance(e, While):
        return (e.cond, e.body)
    if isinstance(e, Prim):
        return e.args
    raise TypeError(f"unknown expression {e!r}")


# ---------------------------------------------------------------------------
# Substitution
# ---------------------------------------------------------------------------

_fresh_counter = itertools.count(1)


def fresh_region_var(base: RegionVar) -> RegionVar:
    # '%' is not a lexable name character, so renamed variables cannot
    # collide with source names.
    return RegionVar(f"{base.name}%{next(_fresh_counter)}")


_fresh_region_var = fresh_region_var


def subst_region_parent(p: Parent, var: RegionVar, rep: RegionName) -> Parent:
    if p == var:
        return rep
    return p


def subst_region_effect(eff: Effect, var: RegionVar, rep: RegionName) -> Effect:
    """Substitute in both domain and parents; aliased entries merge.

    Merging sums the counts and the merged capability is impure, since it
    stands for several separately usable fragments.
    """
    table: dict[RegionName, tuple[Capability, Parent]] = {}
    for r, cap, parent in eff.items():
        nr = rep if r == var else r
        nparent = subst_region_parent(parent, var, rep)
        if nr in table:
            ocap, oparent = table[nr]
            merged = Capability(ocap.rg + cap.rg, ocap.lk + cap.lk, pure=False)
            if oparent is UNKNOWN:
                keep = nparent
            elif nparent is UNKNOWN or nparent == oparent:
                keep = oparent
            else:
                raise ValueError(
                    f"cannot merge effect entries for {nr} with parents "
                    f"{parent_str(oparent)} and {parent_str(nparent)}")
            table[nr] = (merged, keep)
        else:
            table[nr] = (cap, nparent)
    return Effect((r, c, p) for r, (c, p) in table.items())


def subst_region_type(t: Type, var: RegionVar, rep: RegionName) -> Type:
    if isinstance(t, (BaseType, UnitType)):
        return t
    if isinstance(t, FnType):
        return FnType(subst_region_type(t.param, var, rep),
                      subst_region_effect(t.effect_in, var, rep),
                      subst_region_effect(t.effect_out, var, rep),
                      subst_region_type(t.result, var, rep))
    if isinstance(t, RegionPolyType):
        if t.var == var:
            return t  # shadowed
        if t.var == rep:
            fresh = _fresh_region_var(t.var)
            body = subst_region_type(t.body, t.var, fresh)
            return RegionPolyType(fresh, subst_region_type(body, var, rep))
        return RegionPolyType(t.var, subst_region_type(t.body, var, rep))
    if isinstance(t, RefType):
        return RefType(subst_region_type(t.elem, var, rep),
                       rep if t.region == var else t.region)
    if isinstance(t, HandleType):
        return HandleType(rep if t.region == var else t.region)
    raise TypeError(f"unknown type {t!r}")


def subst_region_expr(e: Expr, var: RegionVar, rep: RegionName) -> Expr:
    def sub(x: Expr) -> Expr:
        return subst_region_expr(x, var, rep)

    if isinstance(e, (Var, Const, RgnVal, LocVal)):
        return e
    if isinstance(e, Lambda):
        return Lambda(e.param,
                      None if e.param_type is None else subst_region_type(e.param_type, var, rep),
                      sub(e.body),
                      None if e.effect_in is None else subst_region_effect(e.effect_in, var, rep),
                      None if e.effect_out is None else subst_region_effect(e.effect_out, var, rep),
                      e.loc)
    if isinstance(e, RegionLambda):
        if e.var == var:
            return e
        if e.var == rep:
            fresh = _fresh_region_var(e.var)
            body = subst_region_expr(e.body, e.var, fresh)
            return RegionLambda(fresh, subst_region_expr(body, var, rep), e.loc)
        return RegionLambda(e.var, sub(e.body), e.loc)
    if isinstance(e, App):
        mode = e.mode
        if isinstance(mode, ParMode) and mode.transfer is not None:
            mode = ParMode(subst_region_effect(mode.transfer, var, rep))
        return App(sub(e.fn), sub(e.arg), mode, e.loc)
    if isinstance(e, RegionApp):
        return RegionApp(sub(e.fn), rep if e.region == var else e.region, e.loc)
    if isinstance(e, NewRef):
        return NewRef(sub(e.init), sub(e.handle), e.loc)
    if isinstance(e, Deref):
        return Deref(sub(e.ref), e.loc)
    if isinstance(e, Assign):
        return Assign(sub(e.target), sub(e.value), e.loc)
    if isinstance(e, NewRgn):
        handle = sub(e.parent_handle)
        if e.var == var:
            return NewRgn(e.var, e.handle_name, handle, e.body, e.loc)
        if e.var == rep:
            fresh = _fresh_region_var(e.var)
            body = subst_region_expr(e.body, e.var, fresh)
            return NewRgn(fresh, e.handle_name, handle, subst_region_expr(body, var, rep), e.loc)
        return NewRgn(e.var, e.handle_name, handle, sub(e.body), e.loc)
    if isinstance(e, Cap):
        return Cap(e.op, sub(e.handle), e.loc)
    if isinstance(e, If):
        return If(sub(e.cond), sub(e.then), sub(e.orelse), e.loc)
    if isinstance(e, Seq):
        return Seq(sub(e.first), sub(e.second), e.loc)
    if isinstance(e, While):
        return While(sub(e.cond), sub(e.body), e.loc)
    if isinstance(e, Prim):
        return Prim(e.op, tuple(sub(a) for a in e.args), e.loc)
    raise TypeError(f"unknown expression {e!r}")


def subst_region(obj, var: RegionVar, rep: RegionName):
    """Capture-avoiding region substitution over types, effects or terms."""
    if isinstance(obj, Effect):
        return subst_region_effect(obj, var, rep)
    if isinstance(obj, (BaseType, UnitType, FnType, RegionPolyType, RefType, HandleType)):
        return subst_region_type(obj, var, rep)
    return subst_region_expr(obj, var, rep)


def subst_var(e: Expr, name: str, value: Expr) -> Expr:
    """Substitute a value for a term variable; binders shadow."""
    def sub(x: Expr) -> Expr:
        return subst_var(x, name, value)

    if isinstance(e, Var):
        return value if e.name == name else e
    if isinstance(e, (Const, RgnVal, LocVal)):
        return e
    if isinstance(e, Lambda):
        if e.param == name:
            return e
        return Lambda(e.param, e.param_type, sub(e.body), e.effect_in, e.effect_out, e.loc)
    if isinstance(e, RegionLambda):
        return RegionLambda(e.var, sub(e.body), e.loc)
    if isinstance(e, App):
        return App(sub(e.fn), sub(e.arg), e.mode, e.loc)
    if isinstance(e, RegionApp):
        return RegionApp(sub(e.fn), e.region, e.loc)
    if isinstance(e, NewRef):
        return NewRef(sub(e.init), sub(e.handle), e.loc)
    if isinstance(e, Deref):
        return Deref(sub(e.ref), e.loc)
    if isinstance(e, Assign):
        return Assign(sub(e.target), sub(e.value), e.loc)
    if isinstance(e, NewRgn):
        handle = sub(e.parent_handle)
        if e.handle_name == name:
            return NewRgn(e.var, e.handle_name, handle, e.body, e.loc)
        return NewRgn(e.var, e.handle_name, handle, sub(e.body), e.loc)
    if isinstance(e, Cap):
        return Cap(e.op, sub(e.handle), e.loc)
    if isinstance(e, If):
        return If(sub(e.cond), sub(e.then), sub(e.orelse), e.loc)
    if isinstance(e, Seq):
        return Seq(sub(e.first), sub(e.second), e.loc)
    if isinstance(e, While):
        return While(sub(e.cond), sub(e.body), e.loc)
    if isinstance(e, Prim):
        return Prim(e.op, tuple(sub(a) for a in e.args), e.loc)
    raise TypeError(f"unknown expression {e!r}")


def free_regions(obj) -> set[RegionName]:
    """Free region names of a type or effect (effect parents included)."""
    out: set[RegionName] = set()

    def go_effect(eff: Effect, bound: frozenset[RegionName]) -> None:
        for r, _, parent in eff.items():
            if r not in bound:
                out.add(r)
            if isinstance(parent, (RegionVar, RegionLit)) and parent not in bound:
                out.add(parent)

    def go_type(t: Type, bound: frozenset[RegionName]) -> None:
        if isinstance(t, (BaseType, UnitType)):
            return
        if isinstance(t, FnType):
            go_type(t.param, bound)
            go_effect(t.effect_in, bound)
            go_effect(t.effect_out, bound)
            go_type(t.result, bound)
            return
        if isinstance(t, RegionPolyType):
            go_type(t.body, bound | {t.var})
            return
        if isinstance(t, RefType):
            if t.region not in bound:
                out.add(t.region)
            go_type(t.elem, bound)
            return
        if isinstance(t, HandleType):
            if t.region not in bound:
                out.add(t.region)
            return
        raise TypeError(f"unknown type {t!r}")

    if isinstance(obj, Effect):
        go_effect(obj, frozenset())
    else:
        go_type(obj, frozenset())
    return out


def free_term_vars(e: Expr, defs: frozenset[str] = frozenset()) -> set[str]:
    """Free term variables of an expression, excluding the given def names."""
    out: set[str] = set()

    def go(x: Expr, bound: frozenset[str]) -> None:
        if isinstance(x, Var):
            if x.name not in bound and x.name not in defs:
                out.add(x.name)
            return
        if isinstance(x, Lambda):
            go(x.body, bound | {x.param})
            return
        if isinstance(x, NewRgn):
            go(x.parent_handle, bound)
            go(x.body, bound | {x.handle_name})
            return
        for c in children(x):
            go(c, bound)

    go(e, frozenset())
    return out
