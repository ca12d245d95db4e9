"""Process-calculus dialect used for protocol models and synthesized monitors.

The dialect is a small, decidable fragment of applied pi: data constructors
(no equational theory beyond declared single-constructor projections),
pattern matching, tables with insert/get, events, and correspondence
queries. All trees are immutable and freely shareable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Name:
    """A free name: channels and other globally-declared atoms."""

    ident: str

    def __str__(self) -> str:
        return self.ident


@dataclass(frozen=True)
class Var:
    """A variable bound by a parameter, new, in, let or get."""

    ident: str

    def __str__(self) -> str:
        return self.ident


@dataclass(frozen=True)
class Const:
    """A declared constant symbol (written without parentheses)."""

    symbol: str

    def __str__(self) -> str:
        return self.symbol


@dataclass(frozen=True)
class Ctor:
    """Constructor application, e.g. uri(https(), h, loginpath(), nullParams())."""

    symbol: str
    args: tuple["Term", ...] = ()

    def __str__(self) -> str:
        return f"{self.symbol}({', '.join(str(a) for a in self.args)})"


@dataclass(frozen=True)
class Tuple:
    """Non-empty term tuple: the payload shape of channel messages."""

    items: tuple["Term", ...]

    def __post_init__(self) -> None:
        if not self.items:
            raise ValueError("tuples must be non-empty")

    def __str__(self) -> str:
        return f"({', '.join(str(t) for t in self.items)})"


Term = Name | Var | Const | Ctor | Tuple


# ---------------------------------------------------------------------------
# Patterns
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bind:
    """Binding pattern `x` or `x:T` (type annotation optional)."""

    ident: str
    type: str | None = None

    def __str__(self) -> str:
        return f"{self.ident}:{self.type}" if self.type else self.ident


@dataclass(frozen=True)
class Eq:
    """Equality-match pattern `=t`: succeeds iff the value equals t."""

    term: Term

    def __str__(self) -> str:
        return f"={self.term}"


@dataclass(frozen=True)
class CtorPat:
    """Constructor pattern `f(p1, ..., pn)` deconstructing a data term."""

    symbol: str
    args: tuple["Pattern", ...] = ()

    def __str__(self) -> str:
        return f"{self.symbol}({', '.join(str(p) for p in self.args)})"


@dataclass(frozen=True)
class TuplePat:
    """Tuple pattern `(p1, ..., pn)`."""

    items: tuple["Pattern", ...]

    def __str__(self) -> str:
        return f"({', '.join(str(p) for p in self.items)})"


Pattern = Bind | Eq | CtorPat | TuplePat


# ---------------------------------------------------------------------------
# Processes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Nil:
    def __str__(self) -> str:
        return "0"


@dataclass(frozen=True)
class Par:
    left: "Process"
    right: "Process"


@dataclass(frozen=True)
class Repl:
    body: "Process"


@dataclass(frozen=True)
class New:
    ident: str
    type: str
    body: "Process"


@dataclass(frozen=True)
class In:
    channel: Term
    pattern: Pattern
    body: "Process"


@dataclass(frozen=True)
class Out:
    channel: Term
    message: Term
    body: "Process"


@dataclass(frozen=True)
class Let:
    pattern: Pattern
    value: Term
    then: "Process"
    orelse: "Process | None" = None


@dataclass(frozen=True)
class Insert:
    table: str
    args: tuple[Term, ...]
    body: "Process"


@dataclass(frozen=True)
class Get:
    table: str
    patterns: tuple[Pattern, ...]
    then: "Process"
    orelse: "Process | None" = None


@dataclass(frozen=True)
class Event:
    symbol: str
    args: tuple[Term, ...]
    body: "Process"


@dataclass(frozen=True)
class If:
    left: Term
    right: Term
    then: "Process"
    orelse: "Process | None" = None


Process = Nil | Par | Repl | New | In | Out | Let | Insert | Get | Event | If


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EventAtom:
    symbol: str
    args: tuple[Term, ...]

    def __str__(self) -> str:
        return f"event({self.symbol}({', '.join(str(a) for a in self.args)}))"


@dataclass(frozen=True)
class Correspondence:
    """Non-injective correspondence: premise events imply an earlier conclusion."""

    premise: tuple[EventAtom, ...]
    conclusion: EventAtom

    def __str__(self) -> str:
        return " && ".join(str(a) for a in self.premise) + " ==> " + str(self.conclusion)


@dataclass(frozen=True)
class Secrecy:
    term: Term

    def __str__(self) -> str:
        return f"attacker({self.term})"


Query = Correspondence | Secrecy


# ---------------------------------------------------------------------------
# System specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CtorDecl:
    symbol: str
    arg_types: tuple[str, ...]
    result: str
    private: bool = False
    # projection semantics: f(g(a1..an)) evaluates to the proj_index-th
    # argument (1-based) when the argument's head constructor is proj_of
    proj_of: str | None = None
    proj_index: int | None = None

    @property
    def arity(self) -> int:
        return len(self.arg_types)


@dataclass(frozen=True)
class ConstDecl:
    symbol: str
    type: str
    private: bool = False


@dataclass(frozen=True)
class TableDecl:
    name: str
    column_types: tuple[str, ...]

    @property
    def columns(self) -> int:
        return len(self.column_types)


@dataclass(frozen=True)
class EventDecl:
    symbol: str
    arg_types: tuple[str, ...]


@dataclass(frozen=True)
class Participant:
    name: str
    params: tuple[tuple[str, str], ...]  # (ident, type)
    body: Process
    role: str | None = None  # UA, RP, TTP or attacker-facing


@dataclass(frozen=True)
class MainEntry:
    """One parallel component of the main composition: Name(args), optionally replicated."""

    participant: str
    args: tuple[Term, ...]
    replicated: bool = False


@dataclass(frozen=True)
class SystemSpec:
    types: tuple[str, ...] = ()
    channels: tuple[str, ...] = ()
    consts: tuple[ConstDecl, ...] = ()
    ctors: tuple[CtorDecl, ...] = ()
    tables: tuple[TableDecl, ...] = ()
    events: tuple[EventDecl, ...] = ()
    participants: tuple[Participant, ...] = ()
    queries: tuple[Query, ...] = ()
    main: tuple[MainEntry, ...] = ()

    def ctor(self, symbol: str) -> CtorDecl | None:
        for c in self.ctors:
            if c.symbol == symbol:
                return c
        return None

    def const(self, symbol: str) -> ConstDecl | None:
        for c in self.consts:
            if c.symbol == symbol:
                return c
        return None

    def table(self, name: str) -> TableDecl | None:
        for t in self.tables:
            if t.name == name:
                return t
        return None

    def participant(self, name: str) -> Participant | None:
        for p in self.participants:
            if p.name == name:
                return p
        return None

    def by_role(self, role: str) -> Participant | None:
        for p in self.participants:
            if p.role == role:
                return p
        return None

    def with_participant(self, part: Participant) -> "SystemSpec":
        others = tuple(p for p in self.participants if p.name != part.name)
        return replace(self, participants=others + (part,))


class WellFormednessError(ValueError):
    """Undeclared symbol, unbound variable, or arity mismatch in a spec."""


# ---------------------------------------------------------------------------
# Structural utilities
# ---------------------------------------------------------------------------


def term_vars(t: Term) -> set[str]:
    """Identifiers of variables and names occurring in a term (constants
    excluded: they are globally defined, not bindable)."""
    match t:
        case Name(ident) | Var(ident):
            return {ident}
        case Const(_):
            return set()
        case Ctor(_, args) | Tuple(args):
            out: set[str] = set()
            for a in args:
                out |= term_vars(a)
            return out
    raise TypeError(t)


def term_idents(t: Term) -> set[str]:
    """All identifiers occurring in a term, constants included."""
    match t:
        case Name(ident) | Var(ident) | Const(ident):
            return {ident}
        case Ctor(_, args) | Tuple(args):
            out: set[str] = set()
            for a in args:
                out |= term_idents(a)
            return out
    raise TypeError(t)


def pattern_binds(p: Pattern) -> list[str]:
    """Identifiers bound by a pattern, in left-to-right order."""
    match p:
        case Bind(ident, _):
            return [ident]
        case Eq(_):
            return []
        case CtorPat(_, args) | TuplePat(args):
            out: list[str] = []
            for a in args:
                out.extend(pattern_binds(a))
            return out
    raise TypeError(p)


def pattern_eq_terms(p: Pattern) -> list[Term]:
    """All terms appearing under Eq sub-patterns, in order."""
    match p:
        case Bind(_, _):
            return []
        case Eq(t):
            return [t]
        case CtorPat(_, args) | TuplePat(args):
            out: list[Term] = []
            for a in args:
                out.extend(pattern_eq_terms(a))
            return out
    raise TypeError(p)


def free_names(p: Process) -> set[str]:
    """Free identifiers of a process: binders (new/in/let/get) remove
    their variables from the result of the continuation."""
    match p:
        case Nil():
            return set()
        case Par(l, r):
            return free_names(l) | free_names(r)
        case Repl(b):
            return free_names(b)
        case New(x, _, b):
            return free_names(b) - {x}
        case In(c, pat, b):
            out = term_idents(c)
            for t in pattern_eq_terms(pat):
                out |= term_idents(t)
            out |= free_names(b) - set(pattern_binds(pat))
            return out
        case Out(c, m, b):
            return term_idents(c) | term_idents(m) | free_names(b)
        case Let(pat, val, then, orelse):
            out = term_idents(val)
            for t in pattern_eq_terms(pat):
                out |= term_idents(t)
            out |= free_names(then) - set(pattern_binds(pat))
            if orelse is not None:
                out |= free_names(orelse)
            return out
        case Insert(_, args, b):
            out = set()
            for a in args:
                out |= term_idents(a)
            return out | free_names(b)
        case Get(_, pats, then, orelse):
            out = set()
            binds: set[str] = set()
            for pat in pats:
                for t in pattern_eq_terms(pat):
                    out |= term_idents(t)
                binds |= set(pattern_binds(pat))
            out |= free_names(then) - binds
            if orelse is not None:
                out |= free_names(orelse)
            return out
        case Event(_, args, b):
            out = set()
            for a in args:
                out |= term_idents(a)
            return out | free_names(b)
        case If(l, r, then, orelse):
            out = term_idents(l) | term_idents(r) | free_names(then)
            if orelse is not None:
                out |= free_names(orelse)
            return out
    raise TypeError(p)


def subst_term(t: Term, mapping: dict[str, Term]) -> Term:
    """Capture-naive substitution of variables/names by terms."""
    match t:
        case Name(ident) | Var(ident):
            return mapping.get(ident, t)
        case Const(_):
            return t
        case Ctor(sym, args):
            return Ctor(sym, tuple(subst_term(a, mapping) for a in args))
        case Tuple(items):
            return Tuple(tuple(subst_term(a, mapping) for a in items))
    raise TypeError(t)


def subst_pattern(p: Pattern, mapping: dict[str, Term]) -> Pattern:
    """Substitute inside Eq terms of a pattern (binders untouched)."""
    match p:
        case Bind(_, _):
            return p
        case Eq(t):
            return Eq(subst_term(t, mapping))
        case CtorPat(sym, args):
            return CtorPat(sym, tuple(subst_pattern(a, mapping) for a in args))
        case TuplePat(items):
            return TuplePat(tuple(subst_pattern(a, mapping) for a in items))
    raise TypeError(p)


def subst_process(p: Process, mapping: dict[str, Term]) -> Process:
    """Substitute free variables in a process; binders shadow the mapping."""

    def drop(mapping: dict[str, Term], idents: list[str]) -> dict[str, Term]:
        return {k: v for k, v in mapping.items() if k not in idents}

    if not mapping:
        return p
    match p:
        case Nil():
            return p
        case Par(l, r):
            return Par(subst_process(l, mapping), subst_process(r, mapping))
        case Repl(b):
            return Repl(subst_process(b, mapping))
        case New(x, ty, b):
            return New(x, ty, subst_process(b, drop(mapping, [x])))
        case In(c, pat, b):
            inner = drop(mapping, pattern_binds(pat))
            return In(subst_term(c, mapping), subst_pattern(pat, mapping), subst_process(b, inner))
        case Out(c, m, b):
            return Out(subst_term(c, mapping), subst_term(m, mapping), subst_process(b, mapping))
        case Let(pat, val, then, orelse):
            inner = drop(mapping, pattern_binds(pat))
            return Let(
                subst_pattern(pat, mapping),
                subst_term(val, mapping),
                subst_process(then, inner),
                None if orelse is None else subst_process(orelse, mapping),
            )
        case Insert(tab, args, b):
            return Insert(tab, tuple(subst_term(a, mapping) for a in args), subst_process(b, mapping))
        case Get(tab, pats, then, orelse):
            binds: list[str] = []
            for pat in pats:
                binds.extend(pattern_binds(pat))
            return Get(
                tab,
                tuple(subst_pattern(a, mapping) for a in pats),
                subst_process(then, drop(mapping, binds)),
                None if orelse is None else subst_process(orelse, mapping),
            )
        case Event(sym, args, b):
            return Event(sym, tuple(subst_term(a, mapping) for a in args), subst_process(b, mapping))
        case If(l, r, then, orelse):
            return If(
                subst_term(l, mapping),
                subst_term(r, mapping),
                subst_process(then, mapping),
                None if orelse is None else subst_process(orelse, mapping),
            )
    raise TypeError(p)


# ---------------------------------------------------------------------------
# Alpha equivalence
# ---------------------------------------------------------------------------


def _fresh_supply(prefix: str = "@a"):
    return (f"{prefix}{i}" for i in itertools.count())


def alpha_equiv(
    a: Process,
    b: Process,
    synthesized: frozenset[str] | None = None,
) -> bool:
    """True iff the two processes are equal up to consistent renaming of
    bound identifiers and of synthesized channel names.

    `synthesized` lists free channel names (e.g. monitor relay channels)
    that may be renamed consistently between the two sides; by default any
    name starting with "mC_" is treated as synthesized.
    """

    def is_synth(ident: str) -> bool:
        if synthesized is not None:
            return ident in synthesized
        return ident.startswith("mC_")

    supply = _fresh_supply()
    # maps from original identifiers to canonical placeholders, per side
    synth_a: dict[str, str] = {}
    synth_b: dict[str, str] = {}

    def canon_atom(ident: str, env: dict[str, str], synth: dict[str, str]) -> str:
        if ident in env:
            return env[ident]
        if is_synth(ident):
            return synth.setdefault(ident, f"@ch{len(synth)}")
        return ident

    def eq_term(t: Term, u: Term, env_a: dict[str, str], env_b: dict[str, str]) -> bool:
        match t, u:
            case (Name(x), Name(y)) | (Var(x), Var(y)):
                return canon_atom(x, env_a, synth_a) == canon_atom(y, env_b, synth_b)
            case (Const(x), Const(y)):
                return x == y
            case (Ctor(f, xs), Ctor(g, ys)):
                return f == g and len(xs) == len(ys) and all(
                    eq_term(x, y, env_a, env_b) for x, y in zip(xs, ys)
                )
            case (Tuple(xs), Tuple(ys)):
                return len(xs) == len(ys) and all(
                    eq_term(x, y, env_a, env_b) for x, y in zip(xs, ys)
                )
        return False

    def eq_pattern(
        p: Pattern, q: Pattern, env_a: dict[str, str], env_b: dict[str, str]
    ) -> bool:
        """Compare patterns, extending the environments for binders."""
        match p, q:
            case (Bind(x, tx), Bind(y, ty)):
                if tx != ty:
                    return False
                fresh = next(supply)
                env_a[x] = fresh
                env_b[y] = fresh
                return True
            case (Eq(t), Eq(u)):
                return eq_term(t, u, env_a, env_b)
            case (CtorPat(f, xs), CtorPat(g, ys)):
                return f == g and len(xs) == len(ys) and all(
                    eq_pattern(x, y, env_a, env_b) for x, y in zip(xs, ys)
                )
            case (TuplePat(xs), TuplePat(ys)):
                return len(xs) == len(ys) and all(
                    eq_pattern(x, y, env_a, env_b) for x, y in zip(xs, ys)
                )
        return False

    def eq_opt(
        p: Process | None, q: Process | None, env_a: dict[str, str], env_b: dict[str, str]
    ) -> bool:
        if (p is None) != (q is None):
            return False
        if p is None:
            return True
        return eq_proc(p, q, env_a, env_b)  # type: ignore[arg-type]

    def eq_proc(p: Process, q: Process, env_a: dict[str, str], env_b: dict[str, str]) -> bool:
        match p, q:
            case (Nil(), Nil()):
                return True
            case (Par(l1, r1), Par(l2, r2)):
                return eq_proc(l1, l2, env_a, env_b) and eq_proc(r1, r2, env_a, env_b)
            case (Repl(b1), Repl(b2)):
                return eq_proc(b1, b2, env_a, env_b)
            case (New(x, tx, b1), New(y, ty, b2)):
                if tx != ty:
                    return False
                fresh = next(supply)
                ea, eb = dict(env_a), dict(env_b)
                ea[x], eb[y] = fresh, fresh
                return eq_proc(b1, b2, ea, eb)
            case (In(c1, p1, b1), In(c2, p2, b2)):
                if not eq_term(c1, c2, env_a, env_b):
                    return False
                ea, eb = dict(env_a), dict(env_b)
                return eq_pattern(p1, p2, ea, eb) and eq_proc(b1, b2, ea, eb)
            case (Out(c1, m1, b1), Out(c2, m2, b2)):
                return (
                    eq_term(c1, c2, env_a, env_b)
                    and eq_term(m1, m2, env_a, env_b)
                    and eq_proc(b1, b2, env_a, env_b)
                )
            case (Let(p1, v1, t1, e1), Let(p2, v2, t2, e2)):
                if not eq_term(v1, v2, env_a, env_b):
                    return False
                if not eq_opt(e1, e2, env_a, env_b):
                    return False
                ea, eb = dict(env_a), dict(env_b)
                return eq_pattern(p1, p2, ea, eb) and eq_proc(t1, t2, ea, eb)
            case (Insert(n1, a1, b1), Insert(n2, a2, b2)):
                return (
                    n1 == n2
                    and len(a1) == len(a2)
                    and all(eq_term(x, y, env_a, env_b) for x, y in zip(a1, a2))
                    and eq_proc(b1, b2, env_a, env_b)
                )
            case (Get(n1, p1, t1, e1), Get(n2, p2, t2, e2)):
                if n1 != n2 or len(p1) != len(p2):
                    return False
                if not eq_opt(e1, e2, env_a, env_b):
                    return False
                ea, eb = dict(env_a), dict(env_b)
                return all(eq_pattern(x, y, ea, eb) for x, y in zip(p1, p2)) and eq_proc(
                    t1, t2, ea, eb
                )
            case (Event(s1, a1, b1), Event(s2, a2, b2)):
                return (
                    s1 == s2
                    and len(a1) == len(a2)
                    and all(eq_term(x, y, env_a, env_b) for x, y in zip(a1, a2))
                    and eq_proc(b1, b2, env_a, env_b)
                )
            case (If(l1, r1, t1, e1), If(l2, r2, t2, e2)):
                return (
                    eq_term(l1, l2, env_a, env_b)
                    and eq_term(r1, r2, env_a, env_b)
                    and eq_proc(t1, t2, env_a, env_b)
                    and eq_opt(e1, e2, env_a, env_b)
                )
        return False

    return eq_proc(a, b, {}, {})


# ---------------------------------------------------------------------------
# Pretty-printing
# ---------------------------------------------------------------------------


def pretty_term(t: Term) -> str:
    return str(t)


def pretty_pattern(p: Pattern) -> str:
    return str(p)


def pretty_print(p: Process, indent: int = 0) -> str:
    """Render a process in the concrete syntax; the output re-parses to an
    alpha-equivalent process."""
    pad = "  " * indent

    def opt_else(orelse: Process | None) -> str:
        if orelse is None:
            return ""
        return f"\n{pad}else\n{pretty_print(orelse, indent + 1)}"

    def then_block(then: Process, orelse: Process | None) -> str:
        # parenthesize so a following `else` reattaches to this construct
        if orelse is None:
            return f"\n{pretty_print(then, indent)}"
        return f"\n{pad}(\n{pretty_print(then, indent + 1)}\n{pad})"

    match p:
        case Nil():
            return f"{pad}0"
        case Par(l, r):
            return (
                f"{pad}(\n{pretty_print(l, indent + 1)}\n{pad}|\n"
                f"{pretty_print(r, indent + 1)}\n{pad})"
            )
        case Repl(b):
            return f"{pad}!(\n{pretty_print(b, indent + 1)}\n{pad})"
        case New(x, ty, b):
            return f"{pad}new {x}:{ty};\n{pretty_print(b, indent)}"
        case In(c, pat, b):
            return f"{pad}in({pretty_term(c)}, {pretty_pattern(pat)});\n{pretty_print(b, indent)}"
        case Out(c, m, b):
            return f"{pad}out({pretty_term(c)}, {pretty_term(m)});\n{pretty_print(b, indent)}"
        case Let(pat, val, then, orelse):
            head = f"{pad}let {pretty_pattern(pat)} = {pretty_term(val)} in"
            return f"{head}{then_block(then, orelse)}{opt_else(orelse)}"
        case Insert(tab, args, b):
            inner = ", ".join(pretty_term(a) for a in args)
            return f"{pad}insert {tab}({inner});\n{pretty_print(b, indent)}"
        case Get(tab, pats, then, orelse):
            inner = ", ".join(pretty_pattern(a) for a in pats)
            head = f"{pad}get {tab}({inner}) in"
            return f"{head}{then_block(then, orelse)}{opt_else(orelse)}"
        case Event(sym, args, b):
            inner = ", ".join(pretty_term(a) for a in args)
            return f"{pad}event {sym}({inner});\n{pretty_print(b, indent)}"
        case If(l, r, then, orelse):
            head = f"{pad}if {pretty_term(l)} = {pretty_term(r)} then\n{pretty_print(then, indent + 1)}"
            if orelse is not None:
                head += f"\n{pad}else\n{pretty_print(orelse, indent + 1)}"
            return head
    raise TypeError(p)


def pretty_participant(part: Participant) -> str:
    params = ", ".join(f"{n}:{t}" for n, t in part.params)
    role = f" [role={part.role}]" if part.role else ""
    return f"let {part.name}({params}){role} =\n{pretty_print(part.body, 1)}."


# ---------------------------------------------------------------------------
# Well-formedness
# ---------------------------------------------------------------------------


def check_process(
    spec: SystemSpec,
    p: Process,
    bound: frozenset[str],
    where: str = "",
) -> None:
    """Raise WellFormednessError for unbound variables, undeclared
    symbols/tables/channels, or arity mismatches."""

    declared_atoms = set(spec.channels) | {c.symbol for c in spec.consts}

    def check_term(t: Term, bound: frozenset[str]) -> None:
        match t:
            case Name(ident) | Var(ident):
                if ident not in bound and ident not in declared_atoms:
                    raise WellFormednessError(f"unbound identifier `{ident}`{where}")
            case Const(sym):
                if spec.const(sym) is None:
                    raise WellFormednessError(f"undeclared constant `{sym}`{where}")
            case Ctor(sym, args):
                decl = spec.ctor(sym)
                if decl is None:
                    raise WellFormednessError(f"undeclared constructor `{sym}`{where}")
                if decl.arity != len(args):
                    raise WellFormednessError(
                        f"constructor `{sym}` expects {decl.arity} arguments, got {len(args)}{where}"
                    )
                for a in args:
                    check_term(a, bound)
            case Tuple(items):
                for a in items:
                    check_term(a, bound)

    def check_pattern(pat: Pattern, bound: frozenset[str]) -> frozenset[str]:
        seen: set[str] = set()

        def walk(q: Pattern) -> None:
            match q:
                case Bind(ident, _):
                    if ident in seen:
                        raise WellFormednessError(
                            f"identifier `{ident}` bound twice in one pattern{where}"
                        )
                    seen.add(ident)
                case Eq(t):
                    check_term(t, bound)
                case CtorPat(sym, args):
                    decl = spec.ctor(sym)
                    if decl is None:
                        raise WellFormednessError(f"undeclared constructor `{sym}`{where}")
                    if decl.arity != len(args):
                        raise WellFormednessError(
                            f"constructor pattern `{sym}` expects {decl.arity} arguments, "
                            f"got {len(args)}{where}"
                        )
                    for a in args:
                        walk(a)
                case TuplePat(items):
                    for a in items:
                        walk(a)

        walk(pat)
        return bound | frozenset(seen)

    def walk(p: Process, bound: frozenset[str]) -> None:
        match p:
            case Nil():
                return
            case Par(l, r):
                walk(l, bound)
                walk(r, bound)
            case Repl(b):
                walk(b, bound)
            case New(x, _, b):
                walk(b, bound | {x})
            case In(c, pat, b):
                check_term(c, bound)
                walk(b, check_pattern(pat, bound))
            case Out(c, m, b):
                check_term(c, bound)
                check_term(m, bound)
                walk(b, bound)
            case Let(pat, val, then, orelse):
                check_term(val, bound)
                walk(then, check_pattern(pat, bound))
                if orelse is not None:
                    walk(orelse, bound)
            case Insert(tab, args, b):
                decl = spec.table(tab)
                if decl is None:
                    raise WellFormednessError(f"undeclared table `{tab}`{where}")
                if decl.columns != len(args):
                    raise WellFormednessError(
                        f"table `{tab}` has {decl.columns} columns, insert has {len(args)}{where}"
                    )
                for a in args:
                    check_term(a, bound)
                walk(b, bound)
            case Get(tab, pats, then, orelse):
                decl = spec.table(tab)
                if decl is None:
                    raise WellFormednessError(f"undeclared table `{tab}`{where}")
                if decl.columns != len(pats):
                    raise WellFormednessError(
                        f"table `{tab}` has {decl.columns} columns, get has {len(pats)}{where}"
                    )
                inner = bound
                for pat in pats:
                    inner = check_pattern(pat, inner)
                walk(then, inner)
                if orelse is not None:
                    walk(orelse, bound)
            case Event(sym, args, b):
                if not any(e.symbol == sym for e in spec.events):
                    raise WellFormednessError(f"undeclared event `{sym}`{where}")
                for a in args:
                    check_term(a, bound)
                walk(b, bound)
            case If(l, r, then, orelse):
                check_term(l, bound)
                check_term(r, bound)
                walk(then, bound)
                if orelse is not None:
                    walk(orelse, bound)

    walk(p, bound)


def check_spec(spec: SystemSpec) -> None:
    """Check every participant body, query and the main composition."""
    names = [p.name for p in spec.participants]
    if len(names) != len(set(names)):
        raise WellFormednessError("participant names are not unique")
    declared_events = {e.symbol: len(e.arg_types) for e in spec.events}
    for part in spec.participants:
        bound = frozenset(n for n, _ in part.params)
        check_process(spec, part.body, bound, where=f" in participant {part.name}")
    for q in spec.queries:
        if isinstance(q, Correspondence):
            premise_vars: set[str] = set()
            for atom in q.premise:
                if atom.symbol not in declared_events:
                    raise WellFormednessError(f"undeclared event `{atom.symbol}` in query")
                for a in atom.args:
                    premise_vars |= term_vars(a)
            if q.conclusion.symbol not in declared_events:
                raise WellFormednessError(
                    f"undeclared event `{q.conclusion.symbol}` in query"
                )
            concl_vars: set[str] = set()
            for a in q.conclusion.args:
                concl_vars |= term_vars(a)
            declared_atoms = set(spec.channels) | {c.symbol for c in spec.consts}
            loose = concl_vars - premise_vars - declared_atoms
            if loose:
                raise WellFormednessError(
                    f"conclusion variables {sorted(loose)} do not appear in the premise"
                )
    for entry in spec.main:
        part = spec.participant(entry.participant)
        if part is None:
            raise WellFormednessError(f"main references unknown participant `{entry.participant}`")
        if len(entry.args) != len(part.params):
            raise WellFormednessError(
                f"main instantiation of `{entry.participant}` has {len(entry.args)} "
                f"arguments, expected {len(part.params)}"
            )


# ---------------------------------------------------------------------------
# Term evaluation (declared projections)
# ---------------------------------------------------------------------------


def evaluate(t: Term, spec: SystemSpec) -> Term:
    """Normalize a term under the spec's declared projections, e.g.
    getCookie(headers(r, c, a)) evaluates to c."""
    match t:
        case Ctor(sym, args):
            new_args = tuple(evaluate(a, spec) for a in args)
            decl = spec.ctor(sym)
            if (
                decl is not None
                and decl.proj_of is not None
                and len(new_args) == 1
                and isinstance(new_args[0], Ctor)
                and new_args[0].symbol == decl.proj_of
            ):
                idx = (decl.proj_index or 1) - 1
                inner = new_args[0].args
                if 0 <= idx < len(inner):
                    return inner[idx]
            return Ctor(sym, new_args)
        case Tuple(items):
            return Tuple(tuple(evaluate(a, spec) for a in items))
        case _:
            return t


def infer_type(t: Term, spec: SystemSpec, var_types: dict[str, str]) -> str | None:
    """Best-effort type of a term: declared result types for constructors
    and constants, binder annotations for variables."""
    match t:
        case Var(ident) | Name(ident):
            if ident in var_types:
                return var_types[ident]
            decl = spec.const(ident)
            if decl is not None:
                return decl.type
            if ident in spec.channels:
                return "channel"
            return None
        case Const(sym):
            decl = spec.const(sym)
            return decl.type if decl else None
        case Ctor(sym, _):
            decl = spec.ctor(sym)
            return decl.result if decl else None
        case Tuple(_):
            return None
    return None
