"""Surface syntax for the region/lock language.

Programs are lists of `def name = expr` bindings, one of which must be
`main`.  The concrete syntax mirrors the construct keywords used throughout
the worked examples (`newrgn .. at .. in`, `new .. at ..`, `deref`, `:=`,
`share`/`lock`/`unlock`/`free`, `spawn`), so example programs read almost
verbatim.  Sugar handled here:

  let x = e1 in e2        an unannotated binder lambda applied to e1
  e1 ; e2                 sequencing
  while (e) do e          a core loop form
  share/lock/unlock/free  capability operators
  spawn f[r](a, b)        application in parallel calling mode
  \\(a: t, b: t) @ ...     curried lambdas; the effect annotation sits on the
                          innermost one, outer binders are effect-neutral
  f(a, b)                 curried application

The parser can never produce runtime-only forms (region or location values).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .syntax import (
    BOOL,
    BOTTOM,
    CAP_KEYWORD,
    EMPTY_EFFECT,
    INT,
    SEQ_MODE,
    UNIT,
    UNIT_VALUE,
    UNKNOWN,
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
    NewRef,
    NewRgn,
    Parent,
    ParMode,
    Prim,
    RefType,
    RegionApp,
    RegionLambda,
    RegionPolyType,
    RegionVar,
    RgnVal,
    Seq,
    Type,
    UnitType,
    UnitVal,
    Var,
    While,
)


class ParseError(Exception):
    def __init__(self, code: str, message: str, loc: Optional[Loc] = None):
        where = f" at {loc}" if loc else ""
        super().__init__(f"{code}{where}: {message}")
        self.code = code
        self.message = message
        self.loc = loc


@dataclass(frozen=True)
class Definition:
    name: str
    body: Expr
    loc: Loc


@dataclass(frozen=True)
class SourceProgram:
    defs: tuple[Definition, ...]

    def get(self, name: str) -> Definition:
        for d in self.defs:
            if d.name == name:
                return d
        raise KeyError(name)


KEYWORDS = {
    "def", "let", "in", "if", "then", "else", "while", "do",
    "newrgn", "new", "at", "deref", "share", "lock", "unlock", "free",
    "spawn", "true", "false", "int", "bool", "unit", "rgn", "ref", "fn",
}

_PUNCT = [
    "/\\", ":=", "->", "<=", "==", "!=", "&&", "||",
    "(", ")", "{", "}", "[", "]", ",", ".", ";", ":", "@", "^", "~", "?",
    "+", "-", "*", "<", "!", "\\", "=",
]


@dataclass(frozen=True)
class Token:
    kind: str  # "name", "int", "punct", "eof"
    text: str
    loc: Loc


def lex(source: str) -> list[Token]:
    tokens: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if source.startswith("//", i):
            while i < n and source[i] != "\n":
                i += 1
            continue
        loc = Loc(line, col)
        if ch.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            tokens.append(Token("int", source[i:j], loc))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(Token("name", source[i:j], loc))
            col += j - i
            i = j
            continue
        for p in _PUNCT:
            if source.startswith(p, i):
                tokens.append(Token("punct", p, loc))
                i += len(p)
                col += len(p)
                break
        else:
            raise ParseError("SyntaxError", f"unexpected character {ch!r}", loc)
    tokens.append(Token("eof", "", Loc(line, col)))
    return tokens


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    # -- token plumbing --------------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok.text == text and tok.kind in ("punct", "name")

    def eat(self, text: str) -> Token:
        tok = self.peek()
        if tok.text != text:
            raise ParseError("SyntaxError", f"expected {text!r}, found {tok.text!r}", tok.loc)
        return self.next()

    def eat_name(self, what: str = "identifier") -> Token:
        tok = self.peek()
        if tok.kind != "name" or tok.text in KEYWORDS:
            raise ParseError("SyntaxError", f"expected {what}, found {tok.text!r}", tok.loc)
        return self.next()

    # -- program ----------------------------------------------------------------

    def program(self) -> SourceProgram:
        defs: list[Definition] = []
        names: set[str] = set()
        while not self.at("eof") and self.peek().kind != "eof":
            loc = self.eat("def").loc
            name = self.eat_name("definition name").text
            if name in names:
                raise ParseError("DuplicateDefinition", f"definition {name!r} repeated", loc)
            names.add(name)
            self.eat("=")
            body = self.expr()
            defs.append(Definition(name, body, loc))
        if "main" not in names:
            raise ParseError("MissingMain", "program has no `main` definition")
        return SourceProgram(tuple(defs))

    # -- expressions ------------------------------------------------------------

    def expr(self) -> Expr:
        first = self.stmt()
        if self.at(";"):
            loc = self.eat(";").loc
            rest = self.expr()
            return Seq(first, rest, loc)
        return first

    def stmt(self) -> Expr:
        tok = self.peek()
        if tok.text == "let":
            return self.let_expr()
        if tok.text == "if":
            loc = self.next().loc
            cond = self.assign()
            self.eat("then")
            then = self.stmt()
            self.eat("else")
            orelse = self.stmt()
            return If(cond, then, orelse, loc)
        if tok.text == "while":
            loc = self.next().loc
            self.eat("(")
            cond = self.expr()
            self.eat(")")
            self.eat("do")
            body = self.stmt()
            return While(cond, body, loc)
        if tok.text == "newrgn":
            loc = self.next().loc
            rvar = RegionVar(self.eat_name("region variable").text)
            self.eat(",")
            handle = self.eat_name("handle name").text
            self.eat("at")
            parent = self.postfix()
            self.eat("in")
            body = self.stmt()
            return NewRgn(rvar, handle, parent, body, loc)
        if tok.text == "/\\":
            loc = self.next().loc
            rvar = RegionVar(self.eat_name("region variable").text)
            self.eat(".")
            body = self.stmt()
            return RegionLambda(rvar, body, loc)
        if tok.text == "\\":
            return self.lambda_expr()
        if tok.text == "spawn":
            return self.spawn_expr()
        return self.assign()

    def let_expr(self) -> Expr:
        loc = self.eat("let").loc
        name = self.peek()
        if name.text == "_" or (name.kind == "name" and name.text not in KEYWORDS):
            self.next()
        else:
            raise ParseError("SyntaxError", f"expected binder name, found {name.text!r}", name.loc)
        self.eat("=")
        bound = self.stmt()
        self.eat("in")
        body = self.stmt()
        binder = Lambda(name.text, None, body, None, None, loc)
        return App(binder, bound, SEQ_MODE, loc)

    def lambda_expr(self) -> Expr:
        loc = self.eat("\\").loc
        params: list[tuple[str, Type]] = []
        if self.at("("):
            self.eat("(")
            while True:
                pname = self.eat_name("parameter name").text
                self.eat(":")
                ptype = self.type_expr()
                params.append((pname, ptype))
                if self.at(","):
                    self.eat(",")
                    continue
                break
            self.eat(")")
        else:
            pname = self.eat_name("parameter name").text
            self.eat(":")
            ptype = self.type_expr()
            params.append((pname, ptype))
        self.eat("@")
        self.eat("[")
        eff_in = self.effect()
        self.eat("->")
        eff_out = self.effect()
        self.eat("]")
        self.eat(".")
        body = self.stmt()
        # Outer binders of a multi-parameter lambda are effect-neutral; the
        # declared effect belongs to the innermost one.
        name, ptype = params[-1]
        out = Lambda(name, ptype, body, eff_in, eff_out, loc)
        for name, ptype in reversed(params[:-1]):
            out = Lambda(name, ptype, out, EMPTY_EFFECT, EMPTY_EFFECT, loc)
        return out

    def spawn_expr(self) -> Expr:
        loc = self.eat("spawn").loc
        transfer: Optional[Effect] = None
        if self.at("["):
            self.eat("[")
            transfer = self.effect()
            self.eat("]")
        call = self.postfix()
        if not isinstance(call, App):
            raise ParseError("SyntaxError", "spawn must be followed by an application", loc)
        return App(call.fn, call.arg, ParMode(transfer), call.loc or loc)

    def assign(self) -> Expr:
        lhs = self.disj()
        if self.at(":="):
            loc = self.eat(":=").loc
            rhs = self.assign()
            return Assign(lhs, rhs, loc)
        return lhs

    def _binop_chain(self, sub, ops) -> Expr:
        e = sub()
        while self.peek().text in ops and self.peek().kind == "punct":
            tok = self.next()
            rhs = sub()
            e = Prim(tok.text, (e, rhs), tok.loc)
        return e

    def disj(self) -> Expr:
        return self._binop_chain(self.conj, {"||"})

    def conj(self) -> Expr:
        return self._binop_chain(self.cmp, {"&&"})

    def cmp(self) -> Expr:
        return self._binop_chain(self.sum, {"<", "<=", "==", "!="})

    def sum(self) -> Expr:
        return self._binop_chain(self.term, {"+", "-"})

    def term(self) -> Expr:
        return self._binop_chain(self.unary, {"*"})

    def unary(self) -> Expr:
        tok = self.peek()
        if tok.text == "!":
            loc = self.next().loc
            return Prim("!", (self.unary(),), loc)
        if tok.text == "deref":
            loc = self.next().loc
            return Deref(self.unary(), loc)
        if tok.text in ("share", "lock", "unlock", "free"):
            self.next()
            op = {v: k for k, v in CAP_KEYWORD.items()}[tok.text]
            return Cap(op, self.unary(), tok.loc)
        if tok.text == "new":
            loc = self.next().loc
            init = self.sum()
            self.eat("at")
            handle = self.unary()
            return NewRef(init, handle, loc)
        return self.postfix()

    def postfix(self) -> Expr:
        e = self.atom()
        while True:
            if self.at("["):
                loc = self.eat("[").loc
                rvar = RegionVar(self.eat_name("region name").text)
                self.eat("]")
                e = RegionApp(e, rvar, loc)
            elif self.at("("):
                # Application; `()` directly after an expression is a
                # unit-argument call.
                loc = self.eat("(").loc
                if self.at(")"):
                    self.eat(")")
                    e = App(e, Const(UNIT_VALUE, loc), SEQ_MODE, loc)
                    continue
                args = [self.stmt()]
                while self.at(","):
                    self.eat(",")
                    args.append(self.stmt())
                self.eat(")")
                for a in args:
                    e = App(e, a, SEQ_MODE, loc)
            else:
                return e

    def atom(self) -> Expr:
        tok = self.peek()
        if tok.kind == "int":
            self.next()
            return Const(int(tok.text), tok.loc)
        if tok.text == "true":
            self.next()
            return Const(True, tok.loc)
        if tok.text == "false":
            self.next()
            return Const(False, tok.loc)
        if tok.text == "(":
            self.next()
            if self.at(")"):
                self.eat(")")
                return Const(UNIT_VALUE, tok.loc)
            inner = self.expr()
            self.eat(")")
            return inner
        if tok.kind == "name" and tok.text not in KEYWORDS:
            self.next()
            return Var(tok.text, tok.loc)
        raise ParseError("SyntaxError", f"unexpected token {tok.text!r}", tok.loc)

    # -- types and effects --------------------------------------------------------

    def type_expr(self) -> Type:
        tok = self.peek()
        if tok.text == "int":
            self.next()
            return INT
        if tok.text == "bool":
            self.next()
            return BOOL
        if tok.text == "unit":
            self.next()
            return UNIT
        if tok.text == "rgn":
            self.next()
            self.eat("(")
            r = RegionVar(self.eat_name("region name").text)
            self.eat(")")
            return HandleType(r)
        if tok.text == "ref":
            self.next()
            self.eat("(")
            elem = self.type_expr()
            self.eat(",")
            r = RegionVar(self.eat_name("region name").text)
            self.eat(")")
            return RefType(elem, r)
        if tok.text == "fn":
            self.next()
            self.eat("(")
            param = self.type_expr()
            self.eat(")")
            self.eat("@")
            self.eat("[")
            eff_in = self.effect()
            self.eat("->")
            eff_out = self.effect()
            self.eat("]")
            self.eat("->")
            result = self.type_expr()
            return FnType(param, eff_in, eff_out, result)
        raise ParseError("SyntaxError", f"expected a type, found {tok.text!r}", tok.loc)

    def effect(self) -> Effect:
        self.eat("{")
        entries: list[tuple[RegionVar, Capability, Parent]] = []
        if not self.at("}"):
            while True:
                loc = self.peek().loc
                r = RegionVar(self.eat_name("region name").text)
                self.eat("^")
                pure = True
                if self.at("~"):
                    self.eat("~")
                    pure = False
                self.eat("(")
                rg = int(self.eat_int().text)
                self.eat(",")
                lk = int(self.eat_int().text)
                self.eat(")")
                self.eat("@")
                parent = self.parent()
                try:
                    cap = Capability(rg, lk, pure)
                except ValueError as exc:
                    raise ParseError("SyntaxError", str(exc), loc)
                entries.append((r, cap, parent))
                if self.at(","):
                    self.eat(",")
                    continue
                break
        self.eat("}")
        try:
            return Effect(entries)
        except ValueError as exc:
            raise ParseError("SyntaxError", str(exc), self.peek().loc)

    def eat_int(self) -> Token:
        tok = self.peek()
        if tok.kind != "int":
            raise ParseError("SyntaxError", f"expected a number, found {tok.text!r}", tok.loc)
        return self.next()

    def parent(self) -> Parent:
        tok = self.peek()
        if tok.text == "?":
            self.next()
            return UNKNOWN
        if tok.text == "_":
            self.next()
            return BOTTOM
        return RegionVar(self.eat_name("parent region").text)


def parse_program(text: str) -> SourceProgram:
    parser = _Parser(lex(text))
    return parser.program()


def parse_expr(text: str) -> Expr:
    parser = _Parser(lex(text))
    e = parser.expr()
    tok = parser.peek()
    if tok.kind != "eof":
        raise ParseError("SyntaxError", f"trailing input {tok.text!r}", tok.loc)
    return e


# ---------------------------------------------------------------------------
# Pretty printer
# ---------------------------------------------------------------------------

def _type_str(t: Type) -> str:
    if isinstance(t, BaseType):
        return t.name
    if isinstance(t, UnitType):
        return "unit"
    if isinstance(t, HandleType):
        return f"rgn({t.region})"
    if isinstance(t, RefType):
        return f"ref({_type_str(t.elem)}, {t.region})"
    if isinstance(t, FnType):
        return (f"fn({_type_str(t.param)}) @ [{t.effect_in.pretty()} -> "
                f"{t.effect_out.pretty()}] -> {_type_str(t.result)}")
    if isinstance(t, RegionPolyType):
        return f"forall {t.var}. {_type_str(t.body)}"
    raise TypeError(f"unknown type {t!r}")


def _is_let(e: Expr) -> bool:
    return (isinstance(e, App) and isinstance(e.fn, Lambda)
            and e.fn.param_type is None and e.mode is SEQ_MODE)


def _app_spine(e: Expr) -> tuple[Expr, list[Expr]]:
    args: list[Expr] = []
    while isinstance(e, App) and e.mode is SEQ_MODE and not _is_let(e):
        args.append(e.arg)
        e = e.fn
    return e, list(reversed(args))


def pretty(e: Expr) -> str:
    """Render an expression in re-parseable surface syntax.

    Runtime-only values print in a bracketed form that the parser rejects,
    keeping the source/runtime distinction visible in traces.
    """
    return _pp(e, 0)


# precedence levels: 0 seq, 1 stmt-forms, 2 assign, 3 or, 4 and, 5 cmp,
# 6 add, 7 mul, 8 unary, 9 postfix/atom
_CMP = {"<", "<=", "==", "!="}


def _pp(e: Expr, level: int) -> str:
    def wrap(text: str, mine: int) -> str:
        return f"({text})" if mine < level else text

    if isinstance(e, Var):
        return e.name
    if isinstance(e, Const):
        if isinstance(e.value, UnitVal):
            return "()"
        if isinstance(e.value, bool):
            return "true" if e.value else "false"
        return str(e.value)
    if isinstance(e, RgnVal):
        return f"rgn<{e.region}>"
    if isinstance(e, LocVal):
        return f"loc<{e.location.idx}@{e.location.region}>"
    if isinstance(e, Seq):
        return wrap(f"{_pp(e.first, 1)}; {_pp(e.second, 0)}", 0)
    if _is_let(e):
        lam = e.fn
        assert isinstance(lam, Lambda)
        return wrap(f"let {lam.param} = {_pp(e.arg, 1)} in {_pp(lam.body, 1)}", 1)
    if isinstance(e, If):
        return wrap(f"if {_pp(e.cond, 2)} then {_pp(e.then, 1)} else {_pp(e.orelse, 1)}", 1)
    if isinstance(e, While):
        return wrap(f"while ({_pp(e.cond, 0)}) do {_pp(e.body, 1)}", 1)
    if isinstance(e, NewRgn):
        return wrap(f"newrgn {e.var}, {e.handle_name} at {_pp(e.parent_handle, 9)} "
                    f"in {_pp(e.body, 1)}", 1)
    if isinstance(e, RegionLambda):
        return wrap(f"/\\{e.var}. {_pp(e.body, 1)}", 1)
    if isinstance(e, Lambda):
        if e.param_type is None:
            # Internal let binder escaping into value position: print as a
            # degenerate let to stay readable; cannot be re-parsed standalone.
            return wrap(f"\\{e.param}. {_pp(e.body, 1)}", 1)
        ann = ""
        if e.effect_in is not None and e.effect_out is not None:
            ann = f" @ [{e.effect_in.pretty()} -> {e.effect_out.pretty()}]"
        return wrap(f"\\{e.param}: {_type_str(e.param_type)}{ann}. {_pp(e.body, 1)}", 1)
    if isinstance(e, Assign):
        return wrap(f"{_pp(e.target, 3)} := {_pp(e.value, 2)}", 2)
    if isinstance(e, Prim):
        if e.op == "!":
            return wrap(f"!{_pp(e.args[0], 8)}", 8)
        mine = {"||": 3, "&&": 4, "+": 6, "-": 6, "*": 7}.get(e.op, 5)
        left = _pp(e.args[0], mine)
        right = _pp(e.args[1], mine + 1)
        return wrap(f"{left} {e.op} {right}", mine)
    if isinstance(e, Deref):
        return wrap(f"deref {_pp(e.ref, 8)}", 8)
    if isinstance(e, Cap):
        return wrap(f"{CAP_KEYWORD[e.op]} {_pp(e.handle, 8)}", 8)
    if isinstance(e, NewRef):
        return wrap(f"new {_pp(e.init, 6)} at {_pp(e.handle, 8)}", 8)
    if isinstance(e, App):
        if isinstance(e.mode, ParMode):
            head, args = _app_spine(e.fn)
            args = args + [e.arg]
            ann = f"[{e.mode.transfer.pretty()}]" if e.mode.transfer is not None else ""
            arglist = ", ".join(_pp(a, 1) for a in args)
            return wrap(f"spawn{ann} {_pp(head, 9)}({arglist})", 1)
        head, args = _app_spine(e)
        arglist = ", ".join(_pp(a, 1) for a in args)
        return wrap(f"{_pp(head, 9)}({arglist})", 9)
    if isinstance(e, RegionApp):
        return wrap(f"{_pp(e.fn, 9)}[{e.region}]", 9)
    raise TypeError(f"unknown expression {e!r}")


def pretty_program(p: SourceProgram) -> str:
    chunks = [f"def {d.name} =\n  {_pp(d.body, 1)}" for d in p.defs]
    return "\n\n".join(chunks) + "\n"
