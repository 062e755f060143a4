"""The type-and-effect checker.

Checking threads an effect through every expression: the judgement takes an
input effect and yields the expression's type together with an output effect.
Function application is where capabilities move: the callee's instantiated
input effect is split out of the caller's, and the callee's output effect is
joined back (for spawns nothing returns and the transferred effect must be
hierarchy-complete, lock-safe and fully consumed by the new thread).

Definitions are non-recursive and may only reference earlier definitions;
loops are expressed with `while`, which requires its body to preserve the
effect exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from . import effects as fx
from .parser import SourceProgram
from .syntax import (
    BOOL,
    BOTTOM,
    EMPTY_EFFECT,
    INT,
    PRIM_BINARY,
    PRIM_UNARY,
    SEQ_MODE,
    UNIT,
    App,
    Assign,
    BaseType,
    Cap,
    Capability,
    Const,
    Deref,
    Effect,
    Expr,
    FnType,
    HandleType,
    If,
    Lambda,
    Loc,
    LocVal,
    Location,
    NewRef,
    NewRgn,
    ParMode,
    Prim,
    RefType,
    RegionApp,
    RegionLambda,
    RegionLit,
    RegionName,
    RegionPolyType,
    RegionVar,
    RgnVal,
    Seq,
    Type,
    UnitType,
    UnitVal,
    Var,
    While,
    children,
    free_regions,
    free_term_vars,
    fresh_region_var,
    is_value,
    subst_region_expr,
    subst_region_type,
    subst_var,
)

#: Closed enumeration of diagnostic codes.
DIAG_CODES = frozenset({
    "TypeMismatch", "EffectMismatch", "UnboundVariable", "UnknownRegion",
    "RegionEscapes", "InaccessibleRegion", "NotLive", "CountUnderflow",
    "RegionNotLive", "InsufficientCapability", "PurityViolation",
    "ParentMismatch", "AbstractedParentDead", "DomainViolation",
    "ConsistencyViolation", "ImpureLockEscape", "HierarchyAbstractionInPar",
    "NonEmptyThreadOutput", "NonUnitThreadResult", "MalformedMain",
    "MalformedAnnotation", "SpawnAnnotationMismatch", "UnknownLocation",
    "RegionShadowing", "NotAValue", "UnsupportedForm", "DefinitionCycle",
})


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    loc: Optional[Loc] = None
    effect: Optional[Effect] = None

    def __post_init__(self) -> None:
        assert self.code in DIAG_CODES, f"unknown diagnostic code {self.code}"

    def render(self) -> str:
        where = f"{self.loc}: " if self.loc else ""
        eff = f"  [effect {self.effect.pretty()}]" if self.effect is not None else ""
        return f"{where}{self.code}: {self.message}{eff}"

    def to_json(self) -> dict:
        return {
            "code": self.code,
            "message": self.message,
            "loc": str(self.loc) if self.loc else None,
            "effect": self.effect.pretty() if self.effect is not None else None,
        }


class CheckFailure(Exception):
    def __init__(self, diagnostic: Diagnostic):
        super().__init__(diagnostic.render())
        self.diagnostic = diagnostic


@dataclass
class TypedProgram:
    """A successfully checked program with resolved spawn annotations."""

    program: SourceProgram
    def_types: dict[str, Type]
    def_bodies: dict[str, Expr]       # spawn annotations filled in
    effect_lines: dict[str, dict[int, Effect]]

    def linked_main(self) -> Expr:
        return link_bodies(self.program, self.def_bodies)


@dataclass
class CheckResult:
    ok: bool
    diagnostics: list[Diagnostic] = field(default_factory=list)
    typed: Optional[TypedProgram] = None


def type_eq(a: Type, b: Type, lenient: bool = False) -> bool:
    """Structural type equality; alpha-equivalence for region polymorphism.

    In lenient mode effect comparisons ignore purity flags (used when
    re-typing run-time terms, where beta reduction has erased the call
    frames that restore purity).
    """
    if isinstance(a, BaseType) and isinstance(b, BaseType):
        return a.name == b.name
    if isinstance(a, UnitType) and isinstance(b, UnitType):
        return True
    if isinstance(a, HandleType) and isinstance(b, HandleType):
        return a.region == b.region
    if isinstance(a, RefType) and isinstance(b, RefType):
        return a.region == b.region and type_eq(a.elem, b.elem, lenient)
    if isinstance(a, FnType) and isinstance(b, FnType):
        return (type_eq(a.param, b.param, lenient)
                and effect_eq(a.effect_in, b.effect_in, lenient)
                and effect_eq(a.effect_out, b.effect_out, lenient)
                and type_eq(a.result, b.result, lenient))
    if isinstance(a, RegionPolyType) and isinstance(b, RegionPolyType):
        if a.var == b.var:
            return type_eq(a.body, b.body, lenient)
        fresh = RegionVar(f"{a.var.name}%eq")
        return type_eq(subst_region_type(a.body, a.var, fresh),
                       subst_region_type(b.body, b.var, fresh), lenient)
    return False


def effect_eq(a: Effect, b: Effect, lenient: bool = False) -> bool:
    return a.same_counts(b) if lenient else a == b


@dataclass
class _Env:
    vars: dict[str, Type]
    region_vars: frozenset[RegionVar]

    def bind(self, name: str, t: Type) -> "_Env":
        table = dict(self.vars)
        table[name] = t
        return _Env(table, self.region_vars)

    def bind_region(self, r: RegionVar) -> "_Env":
        return _Env(self.vars, self.region_vars | {r})


class Checker:
    """Expression-level checker over a fixed (regions, locations) context."""

    def __init__(self,
                 regions: frozenset[RegionLit] = frozenset(),
                 locations: Optional[dict[Location, Type]] = None,
                 lenient: bool = False,
                 record: Optional[Callable[[int, Effect], None]] = None):
        self.regions = regions
        self.locations = locations or {}
        self.lenient = lenient
        self.record = record
        # Par applications get their computed transfer effect stashed here,
        # keyed by node identity, and are rewritten after the def checks out.
        self.spawn_transfers: dict[int, Effect] = {}

    # -- helpers ---------------------------------------------------------------

    def fail(self, code: str, message: str, loc: Optional[Loc],
             eff: Optional[Effect] = None) -> "CheckFailure":
        return CheckFailure(Diagnostic(code, message, loc, eff))

    def _note(self, e: Expr, eff: Effect) -> None:
        if self.record is not None and e.loc is not None:
            self.record(e.loc.line, eff)

    def _region_in_scope(self, r: RegionName, env: _Env) -> bool:
        if isinstance(r, RegionVar):
            return r in env.region_vars
        return r in self.regions

    def _validate_annotation(self, eff: Effect, env: _Env, loc: Optional[Loc]) -> None:
        reason = eff.well_formed()
        if reason is not None:
            raise self.fail("MalformedAnnotation", reason, loc, eff)
        for r, _, parent in eff.items():
            if not self._region_in_scope(r, env):
                raise self.fail("MalformedAnnotation",
                                f"region {r} in effect annotation is not in scope", loc, eff)
            if isinstance(parent, (RegionVar, RegionLit)) and not self._region_in_scope(parent, env):
                raise self.fail("MalformedAnnotation",
                                f"parent {parent} in effect annotation is not in scope", loc, eff)

    # -- the judgement -----------------------------------------------------------

    def check(self, e: Expr, env: _Env, eff: Effect) -> tuple[Type, Effect]:
        t, out = self._check(e, env, eff)
        # Every output effect must satisfy the liveness invariant: present
        # parents live, chains acyclic, no zero region counts.
        reason = out.well_formed()
        assert reason is None, f"checker produced an ill-formed effect: {reason}"
        # Sequencing plumbing spans lines and would overwrite the per-line
        # effects of the statements it contains; newrgn records its body's
        # entry effect instead (done in _check).
        is_let = (isinstance(e, App) and isinstance(e.fn, Lambda)
                  and e.fn.param_type is None)
        if not isinstance(e, (NewRgn, Seq)) and not is_let:
            self._note(e, out)
        return t, out

    def _check(self, e: Expr, env: _Env, eff: Effect) -> tuple[Type, Effect]:
        if isinstance(e, Var):
            t = env.vars.get(e.name)
            if t is None:
                raise self.fail("UnboundVariable", f"unbound variable {e.name!r}", e.loc, eff)
            return t, eff

        if isinstance(e, Const):
            if isinstance(e.value, UnitVal):
                return UNIT, eff
            if isinstance(e.value, bool):
                return BOOL, eff
            return INT, eff

        if isinstance(e, RgnVal):
            if e.region not in self.regions:
                raise self.fail("UnknownRegion", f"region {e.region} is not allocated", e.loc, eff)
            return HandleType(e.region), eff

        if isinstance(e, LocVal):
            t = self.locations.get(e.location)
            if t is None:
                raise self.fail("UnknownLocation",
                                f"location {e.location} is not allocated", e.loc, eff)
            return RefType(t, e.location.region), eff

        if isinstance(e, Lambda):
            if e.param_type is None:
                raise self.fail("UnsupportedForm",
                                "internal let binder outside application position", e.loc, eff)
            assert e.effect_in is not None and e.effect_out is not None
            self._validate_annotation(e.effect_in, env, e.loc)
            self._validate_annotation(e.effect_out, env, e.loc)
            body_env = env.bind(e.param, e.param_type)
            t_body, out = self.check(e.body, body_env, e.effect_in)
            if not effect_eq(out, e.effect_out, self.lenient):
                raise self.fail("EffectMismatch",
                                f"body produces effect {out.pretty()}, "
                                f"annotation says {e.effect_out.pretty()}", e.loc, out)
            return FnType(e.param_type, e.effect_in, e.effect_out, t_body), eff

        if isinstance(e, RegionLambda):
            var, body = e.var, e.body
            if var in env.region_vars:
                # Linked programs nest definitions, so alpha-rename rather
                # than reject the shadowing binder.
                fresh = fresh_region_var(var)
                body = subst_region_expr(body, var, fresh)
                var = fresh
            if not is_value(body):
                raise self.fail("NotAValue",
                                "the body of a region abstraction must be a value", e.loc, eff)
            t_body, _ = self.check(body, env.bind_region(var), EMPTY_EFFECT)
            return RegionPolyType(var, t_body), eff

        if isinstance(e, App):
            return self._check_app(e, env, eff)

        if isinstance(e, RegionApp):
            t_fn, out = self.check(e.fn, env, eff)
            if not isinstance(t_fn, RegionPolyType):
                raise self.fail("TypeMismatch",
                                f"region application of non-polymorphic type {t_fn}", e.loc, out)
            if not self._region_in_scope(e.region, env):
                raise self.fail("UnknownRegion",
                                f"region {e.region} is not in scope", e.loc, out)
            try:
                inst = subst_region_type(t_fn.body, t_fn.var, e.region)
            except ValueError as exc:
                raise self.fail("MalformedAnnotation", str(exc), e.loc, out)
            return inst, out

        if isinstance(e, NewRef):
            t_init, out = self.check(e.init, env, eff)
            t_handle, out = self.check(e.handle, env, out)
            if not isinstance(t_handle, HandleType):
                raise self.fail("TypeMismatch",
                                f"`new .. at` needs a region handle, got {t_handle}", e.loc, out)
            if not fx.is_live_static(out, t_handle.region):
                raise self.fail("NotLive",
                                f"region {t_handle.region} is not live", e.loc, out)
            return RefType(t_init, t_handle.region), out

        if isinstance(e, Deref):
            t_ref, out = self.check(e.ref, env, eff)
            if not isinstance(t_ref, RefType):
                raise self.fail("TypeMismatch", f"deref of non-reference {t_ref}", e.loc, out)
            if not fx.is_accessible_static(out, t_ref.region):
                raise self.fail("InaccessibleRegion",
                                f"region {t_ref.region} is not accessible (no lock held "
                                f"on it or an ancestor)", e.loc, out)
            return t_ref.elem, out

        if isinstance(e, Assign):
            t_ref, out = self.check(e.target, env, eff)
            if not isinstance(t_ref, RefType):
                raise self.fail("TypeMismatch", f"assignment to non-reference {t_ref}", e.loc, out)
            t_val, out = self.check(e.value, env, out)
            if not type_eq(t_val, t_ref.elem, self.lenient):
                raise self.fail("TypeMismatch",
                                f"cannot store {t_val} into a cell of {t_ref.elem}", e.loc, out)
            if not fx.is_accessible_static(out, t_ref.region):
                raise self.fail("InaccessibleRegion",
                                f"region {t_ref.region} is not accessible (no lock held "
                                f"on it or an ancestor)", e.loc, out)
            return UNIT, out

        if isinstance(e, NewRgn):
            t_handle, out = self.check(e.parent_handle, env, eff)
            if not isinstance(t_handle, HandleType):
                raise self.fail("TypeMismatch",
                                f"newrgn needs a parent region handle, got {t_handle}", e.loc, out)
            if not fx.is_live_static(out, t_handle.region):
                raise self.fail("NotLive",
                                f"parent region {t_handle.region} is not live", e.loc, out)
            var, body = e.var, e.body
            if var in env.region_vars:
                fresh = fresh_region_var(var)
                body = subst_region_expr(body, var, fresh)
                var = fresh
            inner = out.with_entry(var, Capability(1, 1, pure=True), t_handle.region)
            if e.loc is not None and self.record is not None:
                self.record(e.loc.line, inner)
            body_env = env.bind(e.handle_name, HandleType(var)).bind_region(var)
            t_body, body_out = self.check(body, body_env, inner)
            escaped = free_regions(t_body) | free_regions(body_out)
            if var in escaped:
                raise self.fail("RegionEscapes",
                                f"region {var} escapes its scope (it must be freed or "
                                f"transferred before the end of the newrgn body)",
                                e.loc, body_out)
            return t_body, body_out

        if isinstance(e, Cap):
            t_handle, out = self.check(e.handle, env, eff)
            if not isinstance(t_handle, HandleType):
                raise self.fail("TypeMismatch",
                                f"capability operator needs a region handle, got {t_handle}",
                                e.loc, out)
            try:
                out2 = fx.apply_cap_op(out, t_handle.region, e.op)
            except fx.CapError as exc:
                code = "NotLive" if exc.code == "RegionNotLive" else exc.code
                raise self.fail(code, exc.message, e.loc, out)
            return UNIT, out2

        if isinstance(e, If):
            t_cond, out = self.check(e.cond, env, eff)
            if not type_eq(t_cond, BOOL, self.lenient):
                raise self.fail("TypeMismatch", f"if condition has type {t_cond}", e.loc, out)
            t_then, out_then = self.check(e.then, env, out)
            t_else, out_else = self.check(e.orelse, env, out)
            if not type_eq(t_then, t_else, self.lenient):
                raise self.fail("TypeMismatch",
                                f"if branches disagree: {t_then} vs {t_else}", e.loc, out_then)
            if not effect_eq(out_then, out_else, self.lenient):
                raise self.fail("EffectMismatch",
                                f"if branches produce different effects: "
                                f"{out_then.pretty()} vs {out_else.pretty()}", e.loc, out_then)
            return t_then, out_then

        if isinstance(e, Seq):
            _, out = self.check(e.first, env, eff)
            return self.check(e.second, env, out)

        if isinstance(e, While):
            t_cond, out_cond = self.check(e.cond, env, eff)
            if not type_eq(t_cond, BOOL, self.lenient):
                raise self.fail("TypeMismatch", f"while condition has type {t_cond}", e.loc, eff)
            if not effect_eq(out_cond, eff, self.lenient):
                raise self.fail("EffectMismatch",
                                f"while condition must preserve the effect; got "
                                f"{out_cond.pretty()} from {eff.pretty()}", e.loc, out_cond)
            _, out_body = self.check(e.body, env, eff)
            if not effect_eq(out_body, eff, self.lenient):
                raise self.fail("EffectMismatch",
                                f"while body must preserve the effect; got "
                                f"{out_body.pretty()} from {eff.pretty()}", e.loc, out_body)
            return UNIT, eff

        if isinstance(e, Prim):
            if e.op in PRIM_UNARY:
                want, result = PRIM_UNARY[e.op]
                t0, out = self.check(e.args[0], env, eff)
                if not type_eq(t0, want, self.lenient):
                    raise self.fail("TypeMismatch", f"{e.op} applied to {t0}", e.loc, out)
                return result, out
            want, result = PRIM_BINARY[e.op]
            t0, out = self.check(e.args[0], env, eff)
            t1, out = self.check(e.args[1], env, out)
            if not type_eq(t0, want, self.lenient) or not type_eq(t1, want, self.lenient):
                raise self.fail("TypeMismatch",
                                f"{e.op} applied to {t0} and {t1}", e.loc, out)
            return result, out

        raise self.fail("UnsupportedForm", f"cannot type {type(e).__name__}", e.loc, eff)

    def _check_app(self, e: App, env: _Env, eff: Effect) -> tuple[Type, Effect]:
        # `let x = e1 in e2` is a transparent binder, not a capability split.
        if isinstance(e.fn, Lambda) and e.fn.param_type is None and e.mode is SEQ_MODE:
            t_arg, out = self.check(e.arg, env, eff)
            return self.check(e.fn.body, env.bind(e.fn.param, t_arg), out)

        t_fn, out = self.check(e.fn, env, eff)
        t_arg, out = self.check(e.arg, env, out)
        if not isinstance(t_fn, FnType):
            raise self.fail("TypeMismatch", f"application of non-function {t_fn}", e.loc, out)
        if not type_eq(t_arg, t_fn.param, self.lenient):
            raise self.fail("TypeMismatch",
                            f"argument type {t_arg} does not match parameter "
                            f"{t_fn.param}", e.loc, out)
        par = isinstance(e.mode, ParMode)
        try:
            split = fx.effect_subtract(out, t_fn.effect_in)
            if par:
                if not self.lenient:
                    fx.check_par_constraints(split.passed, t_fn.effect_out, t_fn.result)
                joined = split.retained
            else:
                joined = fx.effect_join(out, split.retained, t_fn.effect_out,
                                        split.abstracted, par=False)
        except fx.CapError as exc:
            raise self.fail(exc.code, exc.message, e.loc, out)
        if par:
            declared = e.mode.transfer
            if declared is not None and not effect_eq(declared, split.passed, self.lenient):
                raise self.fail("SpawnAnnotationMismatch",
                                f"spawn annotation {declared.pretty()} does not match the "
                                f"inferred transfer {split.passed.pretty()}", e.loc, out)
            self.spawn_transfers[id(e)] = split.passed
            return UNIT, joined
        return t_fn.result, joined


def infer_spawn_effect(callee: FnType, eff: Effect) -> Effect:
    """The effect a spawn at this call site would hand to the new thread."""
    return fx.effect_subtract(eff, callee.effect_in).passed


def _annotate_spawns(e: Expr, transfers: dict[int, Effect]) -> Expr:
    """Rebuild a term writing computed transfer effects into Par modes."""

    def go(x: Expr) -> Expr:
        if isinstance(x, App):
            fn, arg = go(x.fn), go(x.arg)
            mode = x.mode
            if isinstance(mode, ParMode) and id(x) in transfers:
                mode = ParMode(transfers[id(x)])
            if fn is x.fn and arg is x.arg and mode is x.mode:
                return x
            return App(fn, arg, mode, x.loc)
        kids = children(x)
        new_kids = tuple(go(k) for k in kids)
        if all(a is b for a, b in zip(kids, new_kids)):
            return x
        if isinstance(x, Lambda):
            return replace(x, body=new_kids[0])
        if isinstance(x, RegionLambda):
            return replace(x, body=new_kids[0])
        if isinstance(x, NewRef):
            return replace(x, init=new_kids[0], handle=new_kids[1])
        if isinstance(x, Deref):
            return replace(x, ref=new_kids[0])
        if isinstance(x, Assign):
            return replace(x, target=new_kids[0], value=new_kids[1])
        if isinstance(x, NewRgn):
            return replace(x, parent_handle=new_kids[0], body=new_kids[1])
        if isinstance(x, Cap):
            return replace(x, handle=new_kids[0])
        if isinstance(x, If):
            return replace(x, cond=new_kids[0], then=new_kids[1], orelse=new_kids[2])
        if isinstance(x, Seq):
            return replace(x, first=new_kids[0], second=new_kids[1])
        if isinstance(x, While):
            return replace(x, cond=new_kids[0], body=new_kids[1])
        if isinstance(x, Prim):
            return replace(x, args=new_kids)
        return x

    return go(e)


def main_input_effect(var: RegionVar) -> Effect:
    return Effect.of((var, Capability(1, 0, pure=True), BOTTOM))


def check_program(program: SourceProgram) -> CheckResult:
    """Check every definition in order; definitions see earlier ones only."""
    diagnostics: list[Diagnostic] = []
    def_types: dict[str, Type] = {}
    def_bodies: dict[str, Expr] = {}
    effect_lines: dict[str, dict[int, Effect]] = {}

    failed: set[str] = set()
    for d in program.defs:
        tainted = free_term_vars(d.body) & failed
        if tainted:
            # The root cause is already reported; do not pile on.
            failed.add(d.name)
            continue
        lines: dict[int, Effect] = {}
        checker = Checker(record=lambda line, eff: lines.__setitem__(line, eff))
        env = _Env(dict(def_types), frozenset())
        try:
            t, _ = checker.check(d.body, env, EMPTY_EFFECT)
            if not is_value(d.body):
                raise checker.fail("NotAValue",
                                   f"definition {d.name!r} must be a function value",
                                   d.loc, None)
        except CheckFailure as exc:
            diagnostics.append(exc.diagnostic)
            failed.add(d.name)
            continue
        def_types[d.name] = t
        def_bodies[d.name] = _annotate_spawns(d.body, checker.spawn_transfers)
        effect_lines[d.name] = lines

    if "main" in def_types:
        bad = _validate_main(def_types["main"])
        if bad is not None:
            main_loc = program.get("main").loc
            diagnostics.append(Diagnostic("MalformedMain", bad, main_loc))

    if diagnostics:
        return CheckResult(False, diagnostics)
    typed = TypedProgram(program, def_types, def_bodies, effect_lines)
    return CheckResult(True, [], typed)


def _validate_main(t: Type) -> Optional[str]:
    if not isinstance(t, RegionPolyType):
        return "main must be region-polymorphic over the heap region"
    body = t.body
    if not isinstance(body, FnType) or not isinstance(body.param, HandleType) \
            or body.param.region != t.var:
        return "main must take the heap region handle as its argument"
    expected_in = main_input_effect(t.var)
    if body.effect_in != expected_in:
        return (f"main's input effect must be {expected_in.pretty()}, "
                f"found {body.effect_in.pretty()}")
    if body.effect_out not in (expected_in, EMPTY_EFFECT):
        return (f"main's output effect must be {expected_in.pretty()} or {{}}, "
                f"found {body.effect_out.pretty()}")
    if not isinstance(body.result, UnitType):
        return f"main must return unit, found {body.result}"
    return None


def link_bodies(program: SourceProgram, bodies: Optional[dict[str, Expr]] = None) -> Expr:
    """Substitute definitions into `main`, producing one closed expression.

    Later definitions may reference earlier ones; cycles are impossible by
    construction.  Raises CheckFailure on references to missing or
    not-yet-defined names.
    """
    table = bodies if bodies is not None else {d.name: d.body for d in program.defs}
    linked: dict[str, Expr] = {}
    for d in program.defs:
        body = table[d.name]
        for name in sorted(free_term_vars(body)):
            if name in linked:
                body = subst_var(body, name, linked[name])
            elif any(other.name == name for other in program.defs):
                raise CheckFailure(Diagnostic(
                    "DefinitionCycle",
                    f"definition {d.name!r} references {name!r} before it is defined",
                    d.loc))
            else:
                raise CheckFailure(Diagnostic(
                    "UnboundVariable",
                    f"definition {d.name!r} references unknown name {name!r}", d.loc))
        linked[d.name] = body
    return linked["main"]
