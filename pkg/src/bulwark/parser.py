"""Parser for the textual protocol dialect (`.bw.pv` files).

A file contains declarations (types, channels, constants, constructors,
tables, events), one or more `let Name(params) = process.` bindings,
queries, and an optional `process ...` main composition. Comments are
`(* ... *)` and may nest; the grammar is whitespace-insensitive.
"""

from __future__ import annotations

from dataclasses import dataclass

from .calculus import (
    Bind,
    Const,
    ConstDecl,
    Correspondence,
    Ctor,
    CtorDecl,
    CtorPat,
    Eq,
    Event,
    EventAtom,
    EventDecl,
    Get,
    If,
    In,
    Insert,
    Let,
    MainEntry,
    Name,
    New,
    Nil,
    Out,
    Par,
    Participant,
    Pattern,
    Process,
    Query,
    Repl,
    Secrecy,
    SystemSpec,
    TableDecl,
    Term,
    Tuple,
    TuplePat,
    Var,
    WellFormednessError,
    check_spec,
)

BUILTIN_TYPES = ("bitstring", "channel")

_PUNCT = ("==>", "&&", ":", ";", ".", ",", "(", ")", "[", "]", "=", "|", "!", "⇒", "∧")

_KEYWORDS = {
    "type",
    "free",
    "const",
    "fun",
    "table",
    "event",
    "query",
    "let",
    "process",
    "new",
    "in",
    "out",
    "insert",
    "get",
    "if",
    "then",
    "else",
    "attacker",
    "role",
    "private",
    "proj",
}


class ParseError(Exception):
    """Syntax error with a 1-based source position."""

    def __init__(self, line: int, column: int, expected: str, found: str):
        self.line = line
        self.column = column
        self.expected = expected
        self.found = found
        super().__init__(f"{line}:{column}: expected {expected}, found {found}")


class SpecError(WellFormednessError):
    """Well-formedness error (undeclared symbol / unbound variable) with position."""

    def __init__(self, line: int, column: int, message: str):
        self.line = line
        self.column = column
        super().__init__(f"{line}:{column}: {message}")


@dataclass(frozen=True)
class _Token:
    kind: str  # "ident", "int", "punct", "eof"
    text: str
    line: int
    column: int


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, line, col = 0, 1, 1
    n = len(source)

    def advance(k: int) -> None:
        nonlocal i, line, col
        for _ in range(k):
            if i < n and source[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            advance(1)
            continue
        if source.startswith("(*", i):
            depth, start_line, start_col = 1, line, col
            advance(2)
            while i < n and depth:
                if source.startswith("(*", i):
                    depth += 1
                    advance(2)
                elif source.startswith("*)", i):
                    depth -= 1
                    advance(2)
                else:
                    advance(1)
            if depth:
                raise ParseError(start_line, start_col, "closing `*)`", "end of input")
            continue
        matched = False
        for p in _PUNCT:
            if source.startswith(p, i):
                tokens.append(_Token("punct", "==>" if p == "⇒" else "&&" if p == "∧" else p, line, col))
                advance(len(p))
                matched = True
                break
        if matched:
            continue
        if ch.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            tokens.append(_Token("int", source[i:j], line, col))
            advance(j - i)
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(_Token("ident", source[i:j], line, col))
            advance(j - i)
            continue
        raise ParseError(line, col, "a token", repr(ch))
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.pos = 0
        # declaration context, filled as declarations are parsed
        self.types: list[str] = []
        self.channels: list[str] = []
        self.consts: list[ConstDecl] = []
        self.ctors: list[CtorDecl] = []
        self.tables: list[TableDecl] = []
        self.events: list[EventDecl] = []
        self.participants: list[Participant] = []
        self.queries: list[Query] = []
        self.main: list[MainEntry] = []

    # -- token plumbing ------------------------------------------------

    def peek(self, ahead: int = 0) -> _Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> _Token:
        tok = self.peek()
        self.pos += 1
        return tok

    def fail(self, expected: str) -> ParseError:
        tok = self.peek()
        found = "end of input" if tok.kind == "eof" else f"`{tok.text}`"
        return ParseError(tok.line, tok.column, expected, found)

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind == "punct" and tok.text == text or tok.kind == "ident" and tok.text == text:
            return self.next()
        raise self.fail(f"`{text}`")

    def expect_ident(self, what: str = "an identifier") -> _Token:
        tok = self.peek()
        if tok.kind != "ident" or tok.text in _KEYWORDS:
            raise self.fail(what)
        return self.next()

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok.text == text and tok.kind in ("punct", "ident")

    # -- identifier resolution -----------------------------------------

    def const_decl(self, ident: str) -> ConstDecl | None:
        for c in self.consts:
            if c.symbol == ident:
                return c
        return None

    def ctor_decl(self, ident: str) -> CtorDecl | None:
        for c in self.ctors:
            if c.symbol == ident:
                return c
        return None

    def resolve_atom(self, tok: _Token, scope: set[str]) -> Term:
        if tok.text in scope:
            return Var(tok.text)
        if self.const_decl(tok.text) is not None:
            return Const(tok.text)
        if tok.text in self.channels:
            return Name(tok.text)
        raise SpecError(tok.line, tok.column, f"unbound variable `{tok.text}`")

    # -- declarations ----------------------------------------------------

    def parse_spec(self) -> SystemSpec:
        while self.peek().kind != "eof":
            tok = self.peek()
            if tok.kind != "ident":
                raise self.fail("a declaration")
            if tok.text == "type":
                self.next()
                self.types.append(self.expect_ident("a type name").text)
                self.expect(".")
            elif tok.text == "free":
                self.next()
                name = self.expect_ident("a channel name").text
                self.expect(":")
                ty = self.expect_ident("a type").text
                if ty != "channel":
                    raise SpecError(tok.line, tok.column, "free names must have type channel")
                self.channels.append(name)
                self.expect(".")
            elif tok.text == "const":
                self.next()
                name = self.expect_ident("a constant name").text
                self.expect(":")
                ty = self.type_name()
                private = "private" in self.attributes()
                self.consts.append(ConstDecl(name, ty, private))
                self.expect(".")
            elif tok.text == "fun":
                self.parse_fun()
            elif tok.text == "table":
                self.next()
                name = self.expect_ident("a table name").text
                self.expect("(")
                cols = self.type_list()
                self.expect(")")
                self.expect(".")
                self.tables.append(TableDecl(name, tuple(cols)))
            elif tok.text == "event" :
                self.next()
                name = self.expect_ident("an event name").text
                self.expect("(")
                args = self.type_list() if not self.at(")") else []
                self.expect(")")
                self.expect(".")
                self.events.append(EventDecl(name, tuple(args)))
            elif tok.text == "query":
                self.next()
                self.queries.append(self.parse_query_body())
                self.expect(".")
            elif tok.text == "let":
                self.parse_participant()
            elif tok.text == "process":
                self.next()
                self.parse_main()
            else:
                raise self.fail("a declaration keyword")
        spec = SystemSpec(
            types=tuple(self.types),
            channels=tuple(self.channels),
            consts=tuple(self.consts),
            ctors=tuple(self.ctors),
            tables=tuple(self.tables),
            events=tuple(self.events),
            participants=tuple(self.participants),
            queries=tuple(self.queries),
            main=tuple(self.main),
        )
        check_spec(spec)
        return spec

    def type_name(self) -> str:
        tok = self.peek()
        if tok.kind == "ident" and (tok.text in self.types or tok.text in BUILTIN_TYPES):
            return self.next().text
        if tok.kind == "ident" and tok.text not in _KEYWORDS:
            raise SpecError(tok.line, tok.column, f"undeclared type `{tok.text}`")
        raise self.fail("a type")

    def type_list(self) -> list[str]:
        out = [self.type_name()]
        while self.at(","):
            self.next()
            out.append(self.type_name())
        return out

    def attributes(self) -> dict[str, object]:
        attrs: dict[str, object] = {}
        if not self.at("["):
            return attrs
        self.next()
        while True:
            tok = self.peek()
            if tok.text == "private":
                self.next()
                attrs["private"] = True
            elif tok.text == "proj":
                self.next()
                target = self.expect_ident("a constructor name").text
                idx_tok = self.peek()
                if idx_tok.kind != "int":
                    raise self.fail("a projection index")
                self.next()
                attrs["proj"] = (target, int(idx_tok.text))
            else:
                raise self.fail("`private` or `proj`")
            if self.at(","):
                self.next()
                continue
            break
        self.expect("]")
        return attrs

    def parse_fun(self) -> None:
        self.next()
        name = self.expect_ident("a constructor name").text
        self.expect("(")
        args = self.type_list() if not self.at(")") else []
        self.expect(")")
        self.expect(":")
        result = self.type_name()
        attrs = self.attributes()
        proj = attrs.get("proj")
        self.ctors.append(
            CtorDecl(
                name,
                tuple(args),
                result,
                private=bool(attrs.get("private")),
                proj_of=proj[0] if proj else None,
                proj_index=proj[1] if proj else None,
            )
        )
        self.expect(".")

    # -- queries -----------------------------------------------------------

    def parse_query_body(self) -> Query:
        if self.at("attacker"):
            self.next()
            self.expect("(")
            tok = self.expect_ident("a term")
            self.expect(")")
            # secrecy query subject: a declared constant or free name
            if self.const_decl(tok.text) is not None:
                term: Term = Const(tok.text)
            else:
                term = Name(tok.text)
            return Secrecy(term)
        scope: set[str] = set()
        atoms = [self.parse_event_atom(scope)]
        while self.at("&&"):
            self.next()
            atoms.append(self.parse_event_atom(scope))
        self.expect("==>")
        if not self.at("event"):
            raise self.fail("`event` (a query conclusion)")
        conclusion = self.parse_event_atom(scope)
        return Correspondence(tuple(atoms), conclusion)

    def parse_event_atom(self, scope: set[str]) -> EventAtom:
        self.expect("event")
        self.expect("(")
        name = self.expect_ident("an event name").text
        self.expect("(")
        args: list[Term] = []
        if not self.at(")"):
            args.append(self.parse_query_term(scope))
            while self.at(","):
                self.next()
                args.append(self.parse_query_term(scope))
        self.expect(")")
        self.expect(")")
        return EventAtom(name, tuple(args))

    def parse_query_term(self, scope: set[str]) -> Term:
        # query variables are implicitly universally quantified
        tok = self.expect_ident("a term")
        if self.at("("):
            self.next()
            args: list[Term] = []
            if not self.at(")"):
                args.append(self.parse_query_term(scope))
                while self.at(","):
                    self.next()
                    args.append(self.parse_query_term(scope))
            self.expect(")")
            return Ctor(tok.text, tuple(args))
        if self.const_decl(tok.text) is not None:
            return Const(tok.text)
        scope.add(tok.text)
        return Var(tok.text)

    # -- participants and main ----------------------------------------------

    def parse_participant(self) -> None:
        self.expect("let")
        name = self.expect_ident("a participant name").text
        params: list[tuple[str, str]] = []
        if self.at("("):
            self.next()
            if not self.at(")"):
                while True:
                    pname = self.expect_ident("a parameter name").text
                    self.expect(":")
                    ptype = self.type_name()
                    params.append((pname, ptype))
                    if self.at(","):
                        self.next()
                        continue
                    break
            self.expect(")")
        role: str | None = None
        if self.at("["):
            self.next()
            self.expect("role")
            self.expect("=")
            role = self.expect_ident("a role name").text
            self.expect("]")
        self.expect("=")
        scope = {p for p, _ in params}
        body = self.parse_process(scope)
        self.expect(".")
        self.participants.append(Participant(name, tuple(params), body, role))

    def parse_main(self) -> None:
        while True:
            replicated = False
            if self.at("!"):
                self.next()
                replicated = True
            tok = self.expect_ident("a participant name")
            args: list[Term] = []
            if self.at("("):
                self.next()
                if not self.at(")"):
                    args.append(self.parse_term(set()))
                    while self.at(","):
                        self.next()
                        args.append(self.parse_term(set()))
                self.expect(")")
            self.main.append(MainEntry(tok.text, tuple(args), replicated))
            if self.at("|"):
                self.next()
                continue
            break
        if self.at("."):
            self.next()

    # -- processes ---------------------------------------------------------

    def parse_process(self, scope: set[str]) -> Process:
        left = self.parse_seq(set(scope))
        while self.at("|"):
            self.next()
            right = self.parse_seq(set(scope))
            left = Par(left, right)
        return left

    def maybe_continuation(self, scope: set[str]) -> Process:
        if self.at(";"):
            self.next()
            return self.parse_seq(scope)
        return Nil()

    def parse_seq(self, scope: set[str]) -> Process:
        tok = self.peek()
        if tok.text == "0":
            # `0` lexes as an int token
            self.next()
            return Nil()
        if self.at("("):
            self.next()
            inner = self.parse_process(scope)
            self.expect(")")
            return inner
        if self.at("!"):
            self.next()
            return Repl(self.parse_seq(scope))
        if self.at("new"):
            self.next()
            name = self.expect_ident("a name").text
            self.expect(":")
            ty = self.type_name()
            self.expect(";")
            scope.add(name)
            return New(name, ty, self.parse_seq(scope))
        if self.at("in"):
            self.next()
            self.expect("(")
            chan = self.parse_term(scope)
            self.expect(",")
            pat = self.parse_pattern(scope)
            self.expect(")")
            for b in _pattern_bind_idents(pat):
                scope.add(b)
            return In(chan, pat, self.maybe_continuation(scope))
        if self.at("out"):
            self.next()
            self.expect("(")
            chan = self.parse_term(scope)
            self.expect(",")
            msg = self.parse_term(scope)
            self.expect(")")
            return Out(chan, msg, self.maybe_continuation(scope))
        if self.at("let"):
            self.next()
            pat = self.parse_pattern(scope)
            self.expect("=")
            value = self.parse_term(scope)
            self.expect("in")
            inner = set(scope) | set(_pattern_bind_idents(pat))
            then = self.parse_seq(inner)
            orelse = None
            if self.at("else"):
                self.next()
                orelse = self.parse_seq(set(scope))
            return Let(pat, value, then, orelse)
        if self.at("insert"):
            self.next()
            tok = self.peek()
            name = self.expect_ident("a table name").text
            if not any(t.name == name for t in self.tables):
                raise SpecError(tok.line, tok.column, f"undeclared table `{name}`")
            self.expect("(")
            args = [self.parse_term(scope)]
            while self.at(","):
                self.next()
                args.append(self.parse_term(scope))
            self.expect(")")
            return Insert(name, tuple(args), self.maybe_continuation(scope))
        if self.at("get"):
            self.next()
            tok = self.peek()
            name = self.expect_ident("a table name").text
            if not any(t.name == name for t in self.tables):
                raise SpecError(tok.line, tok.column, f"undeclared table `{name}`")
            self.expect("(")
            pats = [self.parse_pattern(scope)]
            while self.at(","):
                self.next()
                pats.append(self.parse_pattern(scope))
            self.expect(")")
            self.expect("in")
            inner = set(scope)
            for p in pats:
                inner |= set(_pattern_bind_idents(p))
            then = self.parse_seq(inner)
            orelse = None
            if self.at("else"):
                self.next()
                orelse = self.parse_seq(set(scope))
            return Get(name, tuple(pats), then, orelse)
        if self.at("event"):
            self.next()
            name = self.expect_ident("an event name").text
            self.expect("(")
            args: list[Term] = []
            if not self.at(")"):
                args.append(self.parse_term(scope))
                while self.at(","):
                    self.next()
                    args.append(self.parse_term(scope))
            self.expect(")")
            return Event(name, tuple(args), self.maybe_continuation(scope))
        if self.at("if"):
            self.next()
            left = self.parse_term(scope)
            self.expect("=")
            right = self.parse_term(scope)
            self.expect("then")
            then = self.parse_seq(set(scope))
            orelse = None
            if self.at("else"):
                self.next()
                orelse = self.parse_seq(set(scope))
            return If(left, right, then, orelse)
        raise self.fail("a process")

    # -- terms and patterns ---------------------------------------------------

    def parse_term(self, scope: set[str]) -> Term:
        if self.at("("):
            self.next()
            items = [self.parse_term(scope)]
            while self.at(","):
                self.next()
                items.append(self.parse_term(scope))
            self.expect(")")
            if len(items) == 1:
                return items[0]
            return Tuple(tuple(items))
        tok = self.expect_ident("a term")
        if self.at("("):
            decl = self.ctor_decl(tok.text)
            if decl is None:
                raise SpecError(tok.line, tok.column, f"undeclared constructor `{tok.text}`")
            self.next()
            args: list[Term] = []
            if not self.at(")"):
                args.append(self.parse_term(scope))
                while self.at(","):
                    self.next()
                    args.append(self.parse_term(scope))
            self.expect(")")
            if len(args) != decl.arity:
                raise SpecError(
                    tok.line,
                    tok.column,
                    f"constructor `{tok.text}` expects {decl.arity} arguments, got {len(args)}",
                )
            return Ctor(tok.text, tuple(args))
        return self.resolve_atom(tok, scope)

    def parse_pattern(self, scope: set[str]) -> Pattern:
        if self.at("="):
            self.next()
            return Eq(self.parse_term(scope))
        if self.at("("):
            self.next()
            items = [self.parse_pattern(scope)]
            while self.at(","):
                self.next()
                items.append(self.parse_pattern(scope))
            self.expect(")")
            if len(items) == 1:
                return items[0]
            return TuplePat(tuple(items))
        tok = self.expect_ident("a pattern")
        if self.at("("):
            decl = self.ctor_decl(tok.text)
            if decl is None:
                raise SpecError(tok.line, tok.column, f"undeclared constructor `{tok.text}`")
            self.next()
            args: list[Pattern] = []
            if not self.at(")"):
                args.append(self.parse_pattern(scope))
                while self.at(","):
                    self.next()
                    args.append(self.parse_pattern(scope))
            self.expect(")")
            if len(args) != decl.arity:
                raise SpecError(
                    tok.line,
                    tok.column,
                    f"constructor `{tok.text}` expects {decl.arity} arguments, got {len(args)}",
                )
            return CtorPat(tok.text, tuple(args))
        ty: str | None = None
        if self.at(":"):
            self.next()
            ty = self.type_name()
        return Bind(tok.text, ty)


def _pattern_bind_idents(p: Pattern) -> list[str]:
    match p:
        case Bind(ident, _):
            return [ident]
        case Eq(_):
            return []
        case CtorPat(_, args) | TuplePat(args):
            out: list[str] = []
            for a in args:
                out.extend(_pattern_bind_idents(a))
            return out
    raise TypeError(p)


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def parse_spec(source: str) -> SystemSpec:
    """Parse a full specification. Raises ParseError on malformed syntax
    and SpecError (a WellFormednessError) on undeclared symbols or
    unbound variables."""
    return _Parser(source).parse_spec()


def parse_spec_file(path: str) -> SystemSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())


def parse_query(source: str, context: SystemSpec | None = None) -> Query:
    """Parse a single `query ... .` line (the leading keyword is optional)."""
    p = _Parser("")
    if context is not None:
        p.consts = list(context.consts)
        p.ctors = list(context.ctors)
        p.events = list(context.events)
    p.tokens = _tokenize(source)
    p.pos = 0
    if p.at("query"):
        p.next()
    q = p.parse_query_body()
    if p.at("."):
        p.next()
    if p.peek().kind != "eof":
        raise p.fail("end of query")
    return q


def parse_process_source(source: str, spec: SystemSpec, scope: set[str] | None = None) -> Process:
    """Parse a bare process in the context of an existing spec's declarations."""
    p = _Parser("")
    p.types = list(spec.types)
    p.channels = list(spec.channels)
    p.consts = list(spec.consts)
    p.ctors = list(spec.ctors)
    p.tables = list(spec.tables)
    p.events = list(spec.events)
    p.tokens = _tokenize(source)
    p.pos = 0
    proc = p.parse_process(scope or set())
    if p.at("."):
        p.next()
    if p.peek().kind != "eof":
        raise p.fail("end of process")
    return proc


# ---------------------------------------------------------------------------
# Writer (dual of the parser)
# ---------------------------------------------------------------------------


def spec_to_source(spec: SystemSpec) -> str:
    """Render a SystemSpec in the concrete syntax; parsing the result gives
    a structurally identical spec."""
    from .calculus import pretty_participant

    lines: list[str] = []
    for t in spec.types:
        lines.append(f"type {t}.")
    for c in spec.channels:
        lines.append(f"free {c}:channel.")
    for const in spec.consts:
        attr = " [private]" if const.private else ""
        lines.append(f"const {const.symbol}:{const.type}{attr}.")
    for f in spec.ctors:
        attrs = []
        if f.private:
            attrs.append("private")
        if f.proj_of is not None:
            attrs.append(f"proj {f.proj_of} {f.proj_index}")
        suffix = f" [{', '.join(attrs)}]" if attrs else ""
        args = ", ".join(f.arg_types)
        lines.append(f"fun {f.symbol}({args}):{f.result}{suffix}.")
    for t in spec.tables:
        lines.append(f"table {t.name}({', '.join(t.column_types)}).")
    for e in spec.events:
        lines.append(f"event {e.symbol}({', '.join(e.arg_types)}).")
    for part in spec.participants:
        lines.append("")
        lines.append(pretty_participant(part))
    if spec.queries:
        lines.append("")
    for q in spec.queries:
        lines.append(f"query {q}.")
    if spec.main:
        entries = " | ".join(
            ("!" if m.replicated else "")
            + m.participant
            + (f"({', '.join(str(a) for a in m.args)})" if m.args else "")
            for m in spec.main
        )
        lines.append("")
        lines.append(f"process {entries}")
    return "\n".join(lines) + "\n"
