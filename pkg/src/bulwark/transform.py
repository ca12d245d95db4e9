"""Monitor synthesis from ideal participant processes.

Three transformations plus a search:

- make_inattentive: strips security checks (inserts, gets, conditionals,
  equality matches on received data) from a participant while preserving
  its message flow.
- a2m_proxy: derives a reverse-proxy monitor process that relays traffic
  between the network and the monitored application over a fresh channel
  pair, tracking monitor knowledge and delaying checks until their values
  have been observed.
- a2m_sw: rewrites a proxy monitor into a service-worker monitor: fetch
  API channels, browser-handle session keying, deletion of branches and
  values not observable from the client, and splicing of the user agent's
  own response checks.
- search_deployment: enumerates monitor placements in increasing order of
  deployment effort and returns the first one the verification oracle
  accepts.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable

from .calculus import (
    Bind,
    Const,
    CtorDecl,
    Ctor,
    CtorPat,
    Eq,
    Event,
    Get,
    If,
    In,
    Insert,
    Let,
    Name,
    New,
    Nil,
    Out,
    Par,
    Participant,
    Pattern,
    Process,
    Repl,
    SystemSpec,
    TableDecl,
    Term,
    Tuple,
    TuplePat,
    Var,
    free_names,
    infer_type,
    pattern_binds,
    pattern_eq_terms,
    term_vars,
)

MONITOR_TABLE_PREFIX = "M"
# equality checks on these types route requests rather than enforce
# protocol values: method, scheme, host, path, parameter shape, addresses
ROUTING_EQ_TYPES = frozenset({"HttpRequest", "Scheme", "Host", "Path", "Params", "Uri"})

# service-worker vocabulary: fixed channel constructors and reception slots
SW_FETCH = "serviceWorkerFetch"
SW_RAW = "rawRequest"
SW_RESULT = "serviceWorkerResult"
SW_SEND = "serviceWorkerSendHttpResponse"
SW_EXTRA_TRIGGER_SLOTS = (("sw_ref", "Uri"), ("sw_p", "Page"), ("sw_aj", "Ajax"))
SW_XDR_SLOT = ("xd", "XDR")


class TransformError(Exception):
    """A participant uses a construct the transformation cannot handle."""


class UndischargeableError(TransformError):
    """A delayed expression can never be discharged: some value it needs
    never enters the monitor knowledge."""

    def __init__(self, description: str):
        self.description = description
        super().__init__(f"delayed expression never dischargeable: {description}")


class UnobservableCheckError(TransformError):
    """A service-worker monitor would retain no enforceable check."""

    def __init__(self, message: str, dropped: tuple[str, ...] = ()):
        self.dropped = dropped
        super().__init__(message)


class NoSecurePlacement(Exception):
    """Every deployment option was rejected by the verification oracle."""

    def __init__(self, rejected: tuple[tuple["DeploymentOption", str], ...]):
        self.rejected = rejected
        lines = "; ".join(f"{opt.describe()}: {why}" for opt, why in rejected)
        super().__init__(f"no secure monitor placement found ({lines})")


# ---------------------------------------------------------------------------
# Monitor knowledge
# ---------------------------------------------------------------------------


def term_known(t: Term, known: set[str], spec: SystemSpec) -> bool:
    """A term is part of the monitor knowledge iff all its variables are
    known and it contains no private symbol (the monitor cannot apply
    private constructors or read private constants)."""
    match t:
        case Var(ident):
            return ident in known
        case Name(_):
            return True
        case Const(sym):
            decl = spec.const(sym)
            return decl is not None and not decl.private
        case Ctor(sym, args):
            decl = spec.ctor(sym)
            if decl is None or decl.private:
                return False
            return all(term_known(a, known, spec) for a in args)
        case Tuple(items):
            return all(term_known(a, known, spec) for a in items)
    raise TypeError(t)


def _is_atomic(t: Term) -> bool:
    return isinstance(t, (Var, Name, Const))


def _pattern_eqs_known(p: Pattern, known: set[str], spec: SystemSpec) -> bool:
    return all(term_known(t, known, spec) for t in pattern_eq_terms(p))


def _mtable(table: str) -> str:
    return MONITOR_TABLE_PREFIX + table


def _monitor_stem(name: str) -> str:
    return name[:-3] if name.endswith("App") else name


# ---------------------------------------------------------------------------
# a2m_proxy
# ---------------------------------------------------------------------------


@dataclass
class _Delayed:
    kind: str  # "let" | "insert" | "get" | "event"
    pattern: Pattern | None = None
    value: Term | None = None
    table: str | None = None
    args: tuple[Term, ...] = ()
    patterns: tuple[Pattern, ...] = ()
    symbol: str | None = None

    def describe(self) -> str:
        if self.kind == "let":
            return f"let {self.pattern} = {self.value}"
        if self.kind == "insert":
            return f"insert {self.table}({', '.join(map(str, self.args))})"
        if self.kind == "get":
            return f"get {self.table}({', '.join(map(str, self.patterns))})"
        return f"event {self.symbol}({', '.join(map(str, self.args))})"


@dataclass
class _State:
    known: set[str]
    var_types: dict[str, str]
    buffers: list[tuple[Term, Term]] = field(default_factory=list)
    delayed: list[_Delayed] = field(default_factory=list)
    recv_index: int = 0

    def copy(self) -> "_State":
        return _State(
            known=set(self.known),
            var_types=dict(self.var_types),
            buffers=list(self.buffers),
            delayed=list(self.delayed),
            recv_index=self.recv_index,
        )


@dataclass(frozen=True)
class ProxyResult:
    participant: Participant
    mch_out: str
    mch_in: str
    tables: tuple[str, ...]  # monitor-side table names


def a2m_proxy(
    part: Participant,
    spec: SystemSpec,
    *,
    mch_index: int = 1,
    optimize: bool = True,
) -> ProxyResult:
    """Derive the reverse-proxy monitor process for an ideal participant."""
    mch_out = f"mC_{mch_index}_out"
    mch_in = f"mC_{mch_index}_in"
    used_tables: set[str] = set()

    def fresh_cs(st: _State, j: int) -> str:
        return f"cs_{1000 + 100 * st.recv_index + j}"

    def type_of(t: Term, st: _State) -> str | None:
        return infer_type(t, spec, st.var_types)

    def relax_reception(
        pat: Pattern, st: _State
    ) -> tuple[Pattern, list[tuple[Pattern, str]], Term]:
        """Relax an In pattern: structured equality components become fresh
        typed binds checked by a following let; atomic equality components
        on known values stay inline (they correlate, they cannot fail at
        runtime); binds are kept. Returns the relaxed pattern, the list of
        (check pattern, bound variable) pairs, and the relay payload."""
        comps = list(pat.items) if isinstance(pat, TuplePat) else [pat]
        relaxed: list[Pattern] = []
        checks: list[tuple[Pattern, str]] = []
        payload: list[Term] = []
        j = 0
        for comp in comps:
            match comp:
                case Bind(x, ty):
                    relaxed.append(comp)
                    st.known.add(x)
                    if ty:
                        st.var_types[x] = ty
                    payload.append(Var(x))
                case Eq(t) if _is_atomic(t) and term_known(t, st.known, spec):
                    relaxed.append(comp)
                    payload.append(t)
                case Eq(t) if isinstance(t, Var):
                    # unknown correlation variable: learn it by reception
                    relaxed.append(Bind(t.ident, st.var_types.get(t.ident)))
                    st.known.add(t.ident)
                    payload.append(t)
                case Eq(t):
                    cs = fresh_cs(st, j)
                    j += 1
                    relaxed.append(Bind(cs, type_of(t, st)))
                    st.known.add(cs)
                    checks.append((Eq(t), cs))
                    payload.append(Var(cs))
                case _:
                    cs = fresh_cs(st, j)
                    j += 1
                    ty = _pattern_type(comp, spec)
                    relaxed.append(Bind(cs, ty))
                    st.known.add(cs)
                    checks.append((comp, cs))
                    for b in pattern_binds(comp):
                        st.known.add(b)
                    payload.append(Var(cs))
        st.recv_index += 1
        rpat: Pattern = TuplePat(tuple(relaxed)) if isinstance(pat, TuplePat) else relaxed[0]
        payload_term = Tuple(tuple(payload)) if isinstance(pat, TuplePat) else payload[0]
        return rpat, checks, payload_term

    def receive_form(t: Term, st: _State) -> tuple[Pattern, list[tuple[Pattern, str]], Term]:
        """Receive-form of an output term: per component, a maximal known
        subterm becomes an equality pattern (atomic values inline, structured
        values a fresh unchecked bind), an unknown variable becomes a bind
        named after it, and a structured term containing unknowns becomes a
        fresh bind plus a decomposition check that learns the unknowns.

        When no component yields an inline equality the reception has no
        correlator, so known structured components are checked rather than
        bound: without this, relayed traffic from another branch of the
        monitored application could be mistaken for this reply."""
        comps = list(t.items) if isinstance(t, Tuple) else [t]
        has_correlator = any(
            _is_atomic(comp) and term_known(comp, st.known, spec) for comp in comps
        )
        relaxed: list[Pattern] = []
        checks: list[tuple[Pattern, str]] = []
        fwd: list[Term] = []
        j = 0
        for comp in comps:
            if term_known(comp, st.known, spec):
                if _is_atomic(comp):
                    relaxed.append(Eq(comp))
                    fwd.append(comp)
                else:
                    cs = fresh_cs(st, j)
                    j += 1
                    relaxed.append(Bind(cs, type_of(comp, st)))
                    st.known.add(cs)
                    if not has_correlator:
                        checks.append((Eq(comp), cs))
                    fwd.append(Var(cs))
            elif isinstance(comp, Var) and _delayed_def(st, comp.ident) is None:
                relaxed.append(Bind(comp.ident, st.var_types.get(comp.ident)))
                st.known.add(comp.ident)
                fwd.append(comp)
            else:
                cs = fresh_cs(st, j)
                j += 1

                def fresh_opaque() -> str:
                    nonlocal j
                    name = fresh_cs(st, j)
                    j += 1
                    return name

                relaxed.append(Bind(cs, type_of(comp, st)))
                st.known.add(cs)
                decomp = _decompose(comp, st, fresh_opaque)
                checks.append((decomp, cs))
                for b in pattern_binds(decomp):
                    st.known.add(b)
                fwd.append(Var(cs))
        st.recv_index += 1
        rpat: Pattern = TuplePat(tuple(relaxed)) if isinstance(t, Tuple) else relaxed[0]
        fterm = Tuple(tuple(fwd)) if isinstance(t, Tuple) else fwd[0]
        return rpat, checks, fterm

    def _delayed_def(st: _State, ident: str) -> Term | None:
        """RHS of a delayed let binding `ident`, when the monitored party
        builds the value from a public constructor the monitor can take
        apart (values under private constructors stay opaque)."""
        for d in st.delayed:
            if (
                d.kind == "let"
                and isinstance(d.pattern, Bind)
                and d.pattern.ident == ident
                and isinstance(d.value, Ctor)
            ):
                decl = spec.ctor(d.value.symbol)
                if decl is not None and not decl.private:
                    return d.value
        return None

    def _decompose(t: Term, st: _State, fresh: Callable[[], str]) -> Pattern:
        if term_known(t, st.known, spec):
            return Eq(t)
        match t:
            case Var(x):
                definition = _delayed_def(st, x)
                if definition is not None:
                    return _decompose(definition, st, fresh)
                return Bind(x, None)
            case Ctor(sym, args):
                decl = spec.ctor(sym)
                if decl is not None and decl.private:
                    # values under private constructors are opaque
                    name = fresh()
                    st.known.add(name)
                    return Bind(name, decl.result)
                return CtorPat(sym, tuple(_decompose(a, st, fresh) for a in args))
            case Const(sym):
                name = fresh()
                st.known.add(name)
                return Bind(name, None)
            case Tuple(items):
                return TuplePat(tuple(_decompose(a, st, fresh) for a in items))
        raise TransformError(f"cannot decompose term {t}")

    def discharge(st: _State) -> list[Callable[[Process], Process]]:
        """Emit every delayed expression that has become executable, in
        original relative order."""
        wrappers: list[Callable[[Process], Process]] = []
        remaining: list[_Delayed] = []
        for d in st.delayed:
            if d.kind == "let":
                binds = pattern_binds(d.pattern)  # type: ignore[arg-type]
                if binds and all(b in st.known for b in binds):
                    # binder observed directly from relayed traffic: the
                    # monitored party computed it, the let is superseded
                    continue
                if term_known(d.value, st.known, spec) and _pattern_eqs_known(
                    d.pattern, st.known, spec  # type: ignore[arg-type]
                ):
                    pat, val = d.pattern, d.value
                    for b in binds:
                        st.known.add(b)
                    wrappers.append(lambda rest, p=pat, v=val: Let(p, v, rest))
                    continue
                remaining.append(d)
            elif d.kind == "insert":
                if all(term_known(a, st.known, spec) for a in d.args):
                    used_tables.add(_mtable(d.table))  # type: ignore[arg-type]
                    wrappers.append(
                        lambda rest, tb=d.table, ar=d.args: Insert(_mtable(tb), ar, rest)
                    )
                    continue
                remaining.append(d)
            elif d.kind == "get":
                if all(
                    term_known(t, st.known, spec)
                    for p in d.patterns
                    for t in pattern_eq_terms(p)
                ):
                    used_tables.add(_mtable(d.table))  # type: ignore[arg-type]
                    wrappers.append(
                        lambda rest, tb=d.table, ps=d.patterns: Get(_mtable(tb), ps, rest, None)
                    )
                    continue
                remaining.append(d)
            else:  # event
                if all(term_known(a, st.known, spec) for a in d.args):
                    wrappers.append(
                        lambda rest, sy=d.symbol, ar=d.args: Event(sy, ar, rest)
                    )
                    continue
                remaining.append(d)
        st.delayed = remaining
        return wrappers

    def flush(st: _State) -> list[Callable[[Process], Process]]:
        wrappers = [
            lambda rest, c=chan, m=payload: Out(c, m, rest) for chan, payload in st.buffers
        ]
        st.buffers = []
        return wrappers

    def check_wrappers(checks: list[tuple[Pattern, str]]) -> list[Callable[[Process], Process]]:
        return [lambda rest, p=pat, v=var: Let(p, Var(v), rest) for pat, var in checks]

    def wrap(wrappers: list[Callable[[Process], Process]], tail: Process) -> Process:
        out = tail
        for w in reversed(wrappers):
            out = w(out)
        return out

    def is_selector(node: Process, trigger_binds: set[str]) -> bool:
        return (
            isinstance(node, Let)
            and node.orelse is None
            and isinstance(node.value, Var)
            and node.value.ident in trigger_binds
            and isinstance(node.pattern, CtorPat)
        )

    def go(p: Process, st: _State) -> Process:
        match p:
            case Nil():
                wrappers = flush(st)
                leftovers = [
                    d
                    for d in st.delayed
                    if not (
                        d.kind == "let"
                        and d.pattern is not None
                        and pattern_binds(d.pattern)
                        and all(b in st.known for b in pattern_binds(d.pattern))
                    )
                ]
                if leftovers:
                    raise UndischargeableError(leftovers[0].describe())
                return wrap(wrappers, Nil())
            case Par(l, r):
                return Par(go(l, st.copy()), go(r, st.copy()))
            case Repl(b):
                return Repl(go(b, st.copy()))
            case New(x, ty, b):
                # fresh values are generated by the monitored party only
                st.var_types[x] = ty
                return go(b, st)
            case In(c, pat, b):
                rpat, checks, payload = relax_reception(pat, st)
                st.buffers.append((Name(mch_out), payload))
                wrappers: list[Callable[[Process], Process]] = []
                body = b
                if is_selector(body, set(pattern_binds(rpat))):
                    sel = body
                    for bnd in pattern_binds(sel.pattern):
                        st.known.add(bnd)
                    for bnd_pat in _typed_binds(sel.pattern):
                        st.var_types[bnd_pat[0]] = bnd_pat[1]
                    wrappers.append(
                        lambda rest, sp=sel.pattern, sv=sel.value: Let(sp, sv, rest)
                    )
                    body = sel.then
                wrappers.extend(check_wrappers(checks))
                wrappers.extend(discharge(st))
                return In(c, rpat, wrap(wrappers, go(body, st)))
            case Out(c, t, b):
                wrappers = flush(st)
                rpat, checks, fwd = receive_form(t, st)
                wrappers.append(lambda rest, rp=rpat: In(Name(mch_in), rp, rest))
                wrappers.extend(check_wrappers(checks))
                wrappers.extend(discharge(st))
                wrappers.append(lambda rest, ch=c, f=fwd: Out(ch, f, rest))
                st.buffers = []
                return wrap(wrappers, go(b, st))
            case Let(pat, val, then, orelse):
                executable = term_known(val, st.known, spec) and _pattern_eqs_known(
                    pat, st.known, spec
                )
                if executable:
                    for bnd in pattern_binds(pat):
                        st.known.add(bnd)
                    for ident, ty in _typed_binds(pat):
                        st.var_types[ident] = ty
                    if isinstance(pat, Bind) and pat.type is None:
                        ty = infer_type(val, spec, st.var_types)
                        if ty:
                            st.var_types[pat.ident] = ty
                    else_p = None if orelse is None else go(orelse, st.copy())
                    return Let(pat, val, go(then, st), else_p)
                if orelse is not None:
                    raise TransformError(
                        f"cannot delay branching let on unknown value: let {pat} = {val}"
                    )
                st.delayed.append(_Delayed("let", pattern=pat, value=val))
                for ident, ty in _typed_binds(pat):
                    st.var_types[ident] = ty
                if isinstance(pat, Bind) and pat.type is None:
                    ty = infer_type(val, spec, st.var_types)
                    if ty:
                        st.var_types[pat.ident] = ty
                return go(then, st)
            case Insert(tab, args, b):
                if all(term_known(a, st.known, spec) for a in args):
                    used_tables.add(_mtable(tab))
                    return Insert(_mtable(tab), args, go(b, st))
                st.delayed.append(_Delayed("insert", table=tab, args=args))
                return go(b, st)
            case Get(tab, pats, then, orelse):
                eqs_known = all(
                    term_known(t, st.known, spec)
                    for q in pats
                    for t in pattern_eq_terms(q)
                )
                if eqs_known:
                    used_tables.add(_mtable(tab))
                    for q in pats:
                        for bnd in pattern_binds(q):
                            st.known.add(bnd)
                        for ident, ty in _typed_binds(q):
                            st.var_types[ident] = ty
                    else_p = None if orelse is None else go(orelse, st.copy())
                    return Get(_mtable(tab), pats, go(then, st), else_p)
                if orelse is not None or any(pattern_binds(q) for q in pats):
                    raise TransformError(
                        f"cannot delay a binding or branching get on table {tab}"
                    )
                st.delayed.append(_Delayed("get", table=tab, patterns=pats))
                return go(then, st)
            case Event(sym, args, b):
                if all(term_known(a, st.known, spec) for a in args):
                    return Event(sym, args, go(b, st))
                st.delayed.append(_Delayed("event", symbol=sym, args=args))
                return go(b, st)
            case If(l, r, then, orelse):
                if term_known(l, st.known, spec) and term_known(r, st.known, spec):
                    else_p = None if orelse is None else go(orelse, st.copy())
                    return If(l, r, go(then, st), else_p)
                if orelse is not None:
                    raise TransformError("cannot delay a branching conditional")
                st.delayed.append(_Delayed("let", pattern=Eq(r), value=l))
                return go(then, st)
        raise TypeError(p)

    st = _State(known={n for n, _ in part.params}, var_types={n: t for n, t in part.params})
    body = go(part.body, st)
    if optimize:
        body = optimize_process(body)
    name = _monitor_stem(part.name) + "Proxy"
    return ProxyResult(
        participant=Participant(name, part.params, body, role=part.role),
        mch_out=mch_out,
        mch_in=mch_in,
        tables=tuple(sorted(used_tables)),
    )


def _typed_binds(p: Pattern) -> list[tuple[str, str]]:
    out: list[tuple[str, str]] = []

    def walk(q: Pattern) -> None:
        match q:
            case Bind(ident, ty):
                if ty:
                    out.append((ident, ty))
            case Eq(_):
                pass
            case CtorPat(_, args) | TuplePat(args):
                for a in args:
                    walk(a)

    walk(p)
    return out


def _pattern_type(p: Pattern, spec: SystemSpec) -> str | None:
    match p:
        case Bind(_, ty):
            return ty
        case Eq(t):
            return infer_type(t, spec, {})
        case CtorPat(sym, _):
            decl = spec.ctor(sym)
            return decl.result if decl else None
        case TuplePat(_):
            return None
    return None


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


def _pattern_has_eq(p: Pattern) -> bool:
    return bool(pattern_eq_terms(p))


def optimize_process(p: Process) -> Process:
    """Remove lets binding unused variables and fuse alias lets. A let is
    removable only when its pattern performs no equality check."""

    def once(p: Process) -> tuple[Process, bool]:
        changed = False

        def walk(p: Process) -> Process:
            nonlocal changed
            match p:
                case Nil():
                    return p
                case Par(l, r):
                    return Par(walk(l), walk(r))
                case Repl(b):
                    return Repl(walk(b))
                case New(x, ty, b):
                    return New(x, ty, walk(b))
                case In(c, pat, b):
                    return In(c, pat, walk(b))
                case Out(c, m, b):
                    return Out(c, m, walk(b))
                case Let(pat, val, then, orelse):
                    then = walk(then)
                    orelse2 = None if orelse is None else walk(orelse)
                    binds = pattern_binds(pat)
                    if (
                        orelse2 is None
                        and not _pattern_has_eq(pat)
                        and binds
                        and not (set(binds) & free_names(then))
                    ):
                        changed = True
                        return then
                    # alias fusion: let x = y in P  ==>  P[x := y]
                    if (
                        orelse2 is None
                        and isinstance(pat, Bind)
                        and isinstance(val, (Var, Name, Const))
                    ):
                        from .calculus import subst_process

                        changed = True
                        return subst_process(then, {pat.ident: val})
                    return Let(pat, val, then, orelse2)
                case Insert(tab, args, b):
                    return Insert(tab, args, walk(b))
                case Get(tab, pats, then, orelse):
                    return Get(
                        tab, pats, walk(then), None if orelse is None else walk(orelse)
                    )
                case Event(sym, args, b):
                    return Event(sym, args, walk(b))
                case If(l, r, then, orelse):
                    return If(l, r, walk(then), None if orelse is None else walk(orelse))
            raise TypeError(p)

        return walk(p), changed

    while True:
        p, changed = once(p)
        if not changed:
            return p


# ---------------------------------------------------------------------------
# make_inattentive
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RemovedCheck:
    kind: str  # "insert" | "get" | "if" | "eq"
    detail: str


@dataclass(frozen=True)
class InattentiveResult:
    participant: Participant
    removed: tuple[RemovedCheck, ...]


def make_inattentive(part: Participant, spec: SystemSpec) -> InattentiveResult:
    """Interoperable variant of a participant with its security checks
    removed: inserts, gets and conditionals are dropped, equality matches
    on received data are relaxed to fresh binds. Branch selectors (the
    pattern match on a just-received message that picks the URL path to
    handle) keep their top-level equality positions."""
    removed: list[RemovedCheck] = []
    counter = itertools.count()

    def fresh(prefix: str = "any") -> str:
        return f"{prefix}_{next(counter)}"

    def relax_pattern(p: Pattern, keep_top_eqs: bool = False) -> Pattern:
        match p:
            case Bind(_, _):
                return p
            case Eq(t):
                removed.append(RemovedCheck("eq", str(t)))
                return Bind(fresh(), infer_type(t, spec, {}))
            case CtorPat(sym, args):
                if keep_top_eqs:
                    return CtorPat(
                        sym,
                        tuple(
                            a if isinstance(a, Eq) else relax_pattern(a) for a in args
                        ),
                    )
                return CtorPat(sym, tuple(relax_pattern(a) for a in args))
            case TuplePat(items):
                return TuplePat(tuple(relax_pattern(a) for a in items))
        raise TypeError(p)

    def flow_branch(then: Process, orelse: Process | None) -> Process:
        if orelse is None:
            return then

        def has_io(p: Process) -> bool:
            match p:
                case In(_, _, _) | Out(_, _, _):
                    return True
                case Par(l, r):
                    return has_io(l) or has_io(r)
                case Repl(b) | New(_, _, b) | Insert(_, _, b) | Event(_, _, b):
                    return has_io(b)
                case Let(_, _, t, e) | Get(_, _, t, e) | If(_, _, t, e):
                    return has_io(t) or (e is not None and has_io(e))
                case Nil():
                    return False
            raise TypeError(p)

        if has_io(then) or not has_io(orelse):
            return then
        return orelse

    def rebind_fresh(binds: list[tuple[str, str | None]], body: Process) -> Process:
        used = free_names(body)
        out = body
        for ident, ty in reversed(binds):
            if ident in used:
                out = New(ident, ty or "bitstring", out)
        return out

    def walk(p: Process) -> Process:
        match p:
            case Nil():
                return p
            case Par(l, r):
                return Par(walk(l), walk(r))
            case Repl(b):
                return Repl(walk(b))
            case New(x, ty, b):
                return New(x, ty, walk(b))
            case In(c, pat, b):
                relaxed = relax_pattern(pat)
                body = b
                if (
                    isinstance(body, Let)
                    and body.orelse is None
                    and isinstance(body.value, Var)
                    and body.value.ident in pattern_binds(pat)
                    and isinstance(body.pattern, CtorPat)
                ):
                    sel = relax_pattern(body.pattern, keep_top_eqs=True)
                    return In(c, relaxed, Let(sel, body.value, walk(body.then)))
                return In(c, relaxed, walk(body))
            case Out(c, m, b):
                return Out(c, m, walk(b))
            case Let(pat, val, then, orelse):
                kept = flow_branch(then, orelse)
                relaxed = relax_pattern(pat)
                if (
                    isinstance(relaxed, Bind)
                    and _pattern_has_eq(pat)
                    and relaxed.ident not in free_names(kept)
                ):
                    return walk(kept)
                return Let(relaxed, val, walk(kept))
            case Insert(tab, args, b):
                removed.append(
                    RemovedCheck("insert", f"{tab}({', '.join(map(str, args))})")
                )
                return walk(b)
            case Get(tab, pats, then, orelse):
                removed.append(
                    RemovedCheck("get", f"{tab}({', '.join(map(str, pats))})")
                )
                kept = walk(flow_branch(then, orelse))
                binds = [(ident, _bind_type(pats, ident)) for ident in _all_binds(pats)]
                return rebind_fresh(binds, kept)
            case Event(sym, args, b):
                return Event(sym, args, walk(b))
            case If(l, r, then, orelse):
                removed.append(RemovedCheck("if", f"{l} = {r}"))
                return walk(flow_branch(then, orelse))
        raise TypeError(p)

    body = walk(part.body)
    name = "Inattentive" + _monitor_stem(part.name)
    return InattentiveResult(
        Participant(name, part.params, body, role=part.role), tuple(removed)
    )


def _all_binds(pats: tuple[Pattern, ...]) -> list[str]:
    out: list[str] = []
    for p in pats:
        out.extend(pattern_binds(p))
    return out


def _bind_type(pats: tuple[Pattern, ...], ident: str) -> str | None:
    for p in pats:
        for i, t in _typed_binds(p):
            if i == ident:
                return t
    return None


# ---------------------------------------------------------------------------
# Composition rewiring (abstract interpreter support)
# ---------------------------------------------------------------------------


def rewire_monitored(proc: Process, external: frozenset[str], mch_index: int = 1) -> Process:
    """Reroute a monitored participant's external channels through the
    monitor relay pair: receptions come from the monitor, emissions go to
    the monitor."""
    mch_out = Name(f"mC_{mch_index}_out")
    mch_in = Name(f"mC_{mch_index}_in")

    def walk(p: Process) -> Process:
        match p:
            case Nil():
                return p
            case Par(l, r):
                return Par(walk(l), walk(r))
            case Repl(b):
                return Repl(walk(b))
            case New(x, ty, b):
                return New(x, ty, walk(b))
            case In(Name(c), pat, b) if c in external:
                return In(mch_out, pat, walk(b))
            case In(c, pat, b):
                return In(c, pat, walk(b))
            case Out(Name(c), m, b) if c in external:
                return Out(mch_in, m, walk(b))
            case Out(c, m, b):
                return Out(c, m, walk(b))
            case Let(pat, val, then, orelse):
                return Let(pat, val, walk(then), None if orelse is None else walk(orelse))
            case Insert(tab, args, b):
                return Insert(tab, args, walk(b))
            case Get(tab, pats, then, orelse):
                return Get(tab, pats, walk(then), None if orelse is None else walk(orelse))
            case Event(sym, args, b):
                return Event(sym, args, walk(b))
            case If(l, r, then, orelse):
                return If(l, r, walk(then), None if orelse is None else walk(orelse))
        raise TypeError(p)

    return walk(proc)


# ---------------------------------------------------------------------------
# a2m_sw
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SwResult:
    participant: Participant
    warnings: tuple[str, ...]
    tables: tuple[str, ...]


@dataclass
class _UaInfo:
    paths: set[str]
    response_checks: dict[str, list[Pattern]]


def _analyze_ua(ua: Participant, spec: SystemSpec) -> _UaInfo:
    """Paths the user agent fetches and the checks it performs on the
    corresponding responses (pattern of the response-body slot)."""
    info = _UaInfo(paths=set(), response_checks={})
    let_defs: dict[str, Term] = {}
    var_paths: dict[str, str] = {}

    def uri_path_symbol(t: Term) -> str | None:
        if isinstance(t, Var):
            if t.ident in var_paths:
                return var_paths[t.ident]
            t = let_defs.get(t.ident, t)
        if isinstance(t, Ctor) and t.symbol == "uri" and len(t.args) == 4:
            path = t.args[2]
            if isinstance(path, Ctor):
                return path.symbol
        return None

    def walk(p: Process, pending_path: str | None) -> None:
        match p:
            case Nil():
                return
            case Par(l, r):
                walk(l, pending_path)
                walk(r, pending_path)
            case Repl(b) | New(_, _, b):
                walk(b, pending_path)
            case Let(pat, val, then, orelse):
                if isinstance(pat, Bind):
                    let_defs[pat.ident] = val
                if (
                    isinstance(val, Var)
                    and isinstance(pat, CtorPat)
                    and pat.symbol == "uri"
                    and len(pat.args) == 4
                    and isinstance(pat.args[2], Eq)
                    and isinstance(pat.args[2].term, Ctor)
                ):
                    var_paths[val.ident] = pat.args[2].term.symbol
                walk(then, pending_path)
                if orelse is not None:
                    walk(orelse, pending_path)
            case Out(_, m, b):
                path = None
                if isinstance(m, Tuple) and m.items:
                    path = uri_path_symbol(m.items[0])
                if path:
                    info.paths.add(path)
                walk(b, path or pending_path)
            case In(_, pat, b):
                if pending_path and isinstance(pat, TuplePat) and len(pat.items) >= 2:
                    body_pat = pat.items[1]
                    if isinstance(body_pat, Eq) and isinstance(body_pat.term, Ctor):
                        body_pat = _term_to_pattern(body_pat.term)
                    if isinstance(body_pat, CtorPat):
                        info.response_checks.setdefault(pending_path, []).append(body_pat)
                walk(b, None)
            case Insert(_, _, b) | Event(_, _, b):
                walk(b, pending_path)
            case Get(_, _, then, orelse) | If(_, _, then, orelse):
                walk(then, pending_path)
                if orelse is not None:
                    walk(orelse, pending_path)

    walk(ua.body, None)
    return info


def _term_to_pattern(t: Term) -> Pattern:
    match t:
        case Ctor(sym, args):
            return CtorPat(sym, tuple(_term_to_pattern(a) for a in args))
        case Tuple(items):
            return TuplePat(tuple(_term_to_pattern(a) for a in items))
        case _:
            return Eq(t)


def _pattern_subsumes(specific: Pattern, general: Pattern) -> bool:
    """True if every constructor/equality constraint of `general` also
    appears (at the same position) in `specific`."""
    match general:
        case Bind(_, _):
            return True
        case Eq(_):
            return specific == general
        case CtorPat(sym, gargs):
            return (
                isinstance(specific, CtorPat)
                and specific.symbol == sym
                and len(specific.args) == len(gargs)
                and all(_pattern_subsumes(s, g) for s, g in zip(specific.args, gargs))
            )
        case TuplePat(gitems):
            return (
                isinstance(specific, TuplePat)
                and len(specific.items) == len(gitems)
                and all(_pattern_subsumes(s, g) for s, g in zip(specific.items, gitems))
            )
    raise TypeError(general)


@dataclass
class _SwBranch:
    path: str
    selector: Let
    checks: list[Let]  # residual per-branch checks, in order
    body: Process  # rewritten body below the dispatch


def a2m_sw(
    part: Participant,
    ua: Participant,
    spec: SystemSpec,
    *,
    optimize: bool = True,
    browser_var: str = "b",
) -> SwResult:
    """Derive the service-worker monitor for an ideal participant given the
    ideal user agent. Built on the proxy monitor: channels are rewritten to
    the fetch-interception vocabulary, branches the client cannot observe
    are deleted, cookie-derived session keys are replaced by the browser
    handle, and the user agent's checks on this participant's responses are
    spliced in."""
    proxy = a2m_proxy(part, spec, optimize=optimize)
    ua_info = _analyze_ua(ua, spec)
    warnings: list[str] = []
    used_tables: set[str] = set()
    b = Var(browser_var)

    # peel preamble lets, collect parallel branches
    preamble: list[Let] = []
    body = proxy.participant.body
    while isinstance(body, Let) and body.orelse is None:
        preamble.append(body)
        body = body.then

    def collect_branches(p: Process) -> list[Process]:
        if isinstance(p, Par):
            return collect_branches(p.left) + collect_branches(p.right)
        return [p]

    branches = collect_branches(body)

    def subst_cookie_terms(t: Term, cookie_vars: set[str]) -> Term:
        match t:
            case Ctor("getCookie", _):
                return b
            case Var(x) if x in cookie_vars:
                return b
            case Ctor(sym, args):
                return Ctor(sym, tuple(subst_cookie_terms(a, cookie_vars) for a in args))
            case Tuple(items):
                return Tuple(tuple(subst_cookie_terms(a, cookie_vars) for a in items))
            case _:
                return t

    def subst_cookie_pattern(p: Pattern, cookie_vars: set[str]) -> Pattern:
        match p:
            case Bind(_, _):
                return p
            case Eq(t):
                return Eq(subst_cookie_terms(t, cookie_vars))
            case CtorPat(sym, args):
                return CtorPat(sym, tuple(subst_cookie_pattern(a, cookie_vars) for a in args))
            case TuplePat(items):
                return TuplePat(tuple(subst_cookie_pattern(a, cookie_vars) for a in items))
        raise TypeError(p)

    def linearize(p: Process) -> list[Process]:
        """Branch bodies are linear chains; each node keeps its fields, the
        continuation is rebuilt afterwards."""
        ops: list[Process] = []
        while not isinstance(p, Nil):
            match p:
                case In(_, _, cont) | Out(_, _, cont) | Insert(_, _, cont) | Event(_, _, cont):
                    ops.append(p)
                    p = cont
                case Let(_, _, cont, None):
                    ops.append(p)
                    p = cont
                case Get(_, _, cont, None):
                    ops.append(p)
                    p = cont
                case Get(_, _, _, _):
                    ops.append(p)
                    return ops  # get-else terminates linearization
                case _:
                    raise TransformError(
                        f"service-worker rewrite requires linear monitor branches, got {type(p).__name__}"
                    )
        return ops

    def slot_type(comp: Pattern | Term, var_types: dict[str, str]) -> str | None:
        if isinstance(comp, Bind):
            return comp.type
        if isinstance(comp, Eq):
            return infer_type(comp.term, spec, var_types)
        if isinstance(comp, (Var, Name, Const, Ctor, Tuple)):
            return infer_type(comp, spec, var_types)
        return None

    sw_branches: list[_SwBranch] = []
    trigger_pat: TuplePat | None = None

    for branch in branches:
        if not isinstance(branch, In):
            raise TransformError("monitor branch does not start with a reception")
        ops = linearize(branch.body)
        # dispatch selector: first let on the trigger-bound variable
        if not ops or not isinstance(ops[0], Let) or not isinstance(ops[0].pattern, CtorPat):
            raise TransformError("monitor branch lacks a dispatch pattern")
        selector: Let = ops[0]
        path_pos = selector.pattern.args[2] if len(selector.pattern.args) == 4 else None
        path_sym = (
            path_pos.term.symbol
            if isinstance(path_pos, Eq) and isinstance(path_pos.term, Ctor)
            else None
        )
        if path_sym is None:
            raise TransformError("dispatch pattern has no path component")
        if path_sym not in ua_info.paths:
            warnings.append(
                f"branch `{path_sym}` deleted: not reachable from the client"
            )
            for op in ops:
                if isinstance(op, (Get, Insert)):
                    tbl = op.table
                    warnings.append(
                        f"check on table {tbl} in branch `{path_sym}` unobservable at client"
                    )
            continue

        var_types: dict[str, str] = {n: t for n, t in part.params}
        # trigger rewrite: drop headers and correlation slots, add fetch slots
        assert isinstance(branch.pattern, TuplePat)
        dropped: set[str] = set()
        cookie_vars: set[str] = set()
        trig_items: list[Pattern] = []
        for comp in branch.pattern.items:
            ty = slot_type(comp, var_types)
            if isinstance(comp, Bind) and comp.type:
                var_types[comp.ident] = comp.type
            if ty in ("Headers", "bitstring"):
                if isinstance(comp, Bind):
                    dropped.add(comp.ident)
                continue
            trig_items.append(comp)
        trig_items.extend(Bind(n, t) for n, t in SW_EXTRA_TRIGGER_SLOTS)
        new_trigger = TuplePat(tuple(trig_items))
        if trigger_pat is None:
            trigger_pat = new_trigger
        trigger_payload = Tuple(
            tuple(Var(q.ident) if isinstance(q, Bind) else q.term for q in trig_items)  # type: ignore[union-attr]
        )

        # classify remaining ops; find the reception feeding the final relay
        rest = ops[1:]
        final_out_idx = None
        for i in range(len(rest) - 1, -1, -1):
            op = rest[i]
            if isinstance(op, Out) and isinstance(op.channel, Name) and op.channel.ident not in (
                proxy.mch_out,
            ):
                final_out_idx = i
                break
        if final_out_idx is None:
            raise TransformError("monitor branch has no final relay")
        result_in_idx = None
        for i in range(final_out_idx - 1, -1, -1):
            op = rest[i]
            if isinstance(op, In) and isinstance(op.channel, Name) and op.channel.ident == proxy.mch_in:
                result_in_idx = i
                break
        if result_in_idx is None:
            raise TransformError("monitor branch has no application response reception")
        first_fwd_idx = None
        for i, op in enumerate(rest):
            if isinstance(op, Out) and isinstance(op.channel, Name) and op.channel.ident == proxy.mch_out:
                first_fwd_idx = i
                break
        if first_fwd_idx is None:
            raise TransformError("monitor branch never forwards the trigger")

        result_in = rest[result_in_idx]
        assert isinstance(result_in, In) and isinstance(result_in.pattern, TuplePat)
        res_items: list[Pattern] = []
        res_fwd: list[Term] = []
        for comp in result_in.pattern.items:
            ty = slot_type(comp, var_types)
            if isinstance(comp, Bind) and comp.type:
                var_types[comp.ident] = comp.type
            if ty == "CookiePair":
                if isinstance(comp, Bind):
                    cookie_vars.add(comp.ident)
                continue
            if ty == "bitstring":
                # correlation slot: the worker cannot know it beforehand
                ident = comp.term.ident if isinstance(comp, Eq) and isinstance(comp.term, Var) else (
                    comp.ident if isinstance(comp, Bind) else "corr"
                )
                res_items.append(Bind("corr", "bitstring"))
                res_fwd.append(Var("corr"))
                continue
            res_items.append(comp)
            res_fwd.append(Var(comp.ident) if isinstance(comp, Bind) else comp.term)  # type: ignore[union-attr]
        res_items.insert(len(res_items) - 1, Bind(SW_XDR_SLOT[0], SW_XDR_SLOT[1]))
        res_fwd.insert(len(res_fwd) - 1, Var(SW_XDR_SLOT[0]))
        result_pat = TuplePat(tuple(res_items))

        # variables bound by deleted interior operations are unobservable
        deleted_binds: set[str] = set(dropped)
        kept_mid: list[Process] = []
        pre_checks: list[Let] = []
        for i, op in enumerate(rest):
            if i == final_out_idx or i == result_in_idx or i == first_fwd_idx:
                continue
            if i < first_fwd_idx:
                if isinstance(op, Let):
                    pre_checks.append(op)
                    continue
                if isinstance(op, (Get, Insert, Event)):
                    kept_mid.append(("pre", op))  # type: ignore[arg-type]
                    continue
                raise TransformError("unexpected pre-forward operation")
            # interior segment between forward and result: deleted
            if isinstance(op, (In, Out)):
                for q in [op.pattern] if isinstance(op, In) else []:
                    deleted_binds.update(pattern_binds(q))
                continue
            kept_mid.append(("post", op))  # type: ignore[arg-type]

        def observable_term(t: Term) -> bool:
            # judge after session keys are rewritten to the browser handle
            return not (term_vars(subst_cookie_terms(t, cookie_vars)) & deleted_binds)

        def observable_pattern(q: Pattern) -> bool:
            return all(observable_term(t) for t in pattern_eq_terms(q))

        # rebuild the branch body
        checks: list[Let] = []
        for let_op in pre_checks:
            val = let_op.value
            if not observable_pattern(let_op.pattern) or not observable_term(val):
                warnings.append(f"check `{let_op.pattern}` unobservable at client")
                deleted_binds.update(pattern_binds(let_op.pattern))
                continue
            checks.append(
                Let(
                    subst_cookie_pattern(let_op.pattern, cookie_vars),
                    subst_cookie_terms(val, cookie_vars),
                    Nil(),
                )
            )

        post_ops: list[Process] = []
        pre_table_ops: list[Process] = []
        for phase, op in kept_mid:  # type: ignore[misc]
            target = pre_table_ops if phase == "pre" else post_ops
            if isinstance(op, Insert):
                if not all(observable_term(a) for a in op.args):
                    warnings.append(f"insert {op.table} unobservable at client")
                    continue
                used_tables.add(op.table)
                target.append(
                    Insert(op.table, tuple(subst_cookie_terms(a, cookie_vars) for a in op.args), Nil())
                )
            elif isinstance(op, Get):
                if op.orelse is not None:
                    raise TransformError("get/else not supported in service-worker branches")
                if not all(observable_pattern(q) for q in op.patterns):
                    warnings.append(f"get {op.table} unobservable at client")
                    continue
                used_tables.add(op.table)
                target.append(
                    Get(
                        op.table,
                        tuple(subst_cookie_pattern(q, cookie_vars) for q in op.patterns),
                        Nil(),
                        None,
                    )
                )
            elif isinstance(op, Event):
                if not all(observable_term(a) for a in op.args):
                    continue  # events on unobservable values are dropped
                target.append(
                    Event(op.symbol, tuple(subst_cookie_terms(a, cookie_vars) for a in op.args), Nil())
                )
            elif isinstance(op, Let):
                if observable_term(op.value) and observable_pattern(op.pattern):
                    target.append(
                        Let(
                            subst_cookie_pattern(op.pattern, cookie_vars),
                            subst_cookie_terms(op.value, cookie_vars),
                            Nil(),
                        )
                    )
                else:
                    deleted_binds.update(pattern_binds(op.pattern))
                    if _pattern_has_eq(op.pattern):
                        warnings.append(f"check `{op.pattern}` unobservable at client")

        # splice the user agent's checks on this participant's responses
        resp_binder = next(
            (q.ident for q in res_items if isinstance(q, Bind) and q.type == "HttpResponse"),
            None,
        )
        existing_checks = [
            c.pattern for c in post_ops + checks if isinstance(c, Let)
        ]
        spliced: list[Let] = []
        for ua_pat in ua_info.response_checks.get(path_sym, []):
            if any(_pattern_subsumes(e, ua_pat) for e in existing_checks):
                continue
            if resp_binder is not None:
                spliced.append(Let(ua_pat, Var(resp_binder), Nil()))
                existing_checks.append(ua_pat)

        final_out = rest[final_out_idx]
        assert isinstance(final_out, Out)
        relay = Out(Ctor(SW_SEND, (b,)), Tuple(tuple(res_fwd)), Nil())

        chain: Process = relay
        for node in reversed(spliced + post_ops):
            chain = _reattach(node, chain)
        chain = In(Ctor(SW_RESULT, (b,)), result_pat, chain)
        chain = Out(Ctor(SW_RAW, (b,)), trigger_payload, chain)
        for node in reversed(pre_table_ops):
            chain = _reattach(node, chain)

        sw_branches.append(
            _SwBranch(
                path=path_sym,
                selector=Let(
                    subst_cookie_pattern(selector.pattern, cookie_vars),
                    selector.value,
                    Nil(),
                ),
                checks=checks,
                body=chain,
            )
        )

    if not sw_branches:
        raise UnobservableCheckError("check unobservable at client", tuple(warnings))

    # hoist checks shared by every branch above the dispatch chain
    hoisted: list[Let] = []
    if sw_branches:
        first = sw_branches[0].checks
        for c in first:
            if all(
                any(c.pattern == d.pattern and c.value == d.value for d in br.checks)
                for br in sw_branches[1:]
            ):
                hoisted.append(c)
        for br in sw_branches:
            br.checks = [
                c for c in br.checks if not any(c.pattern == h.pattern and c.value == h.value for h in hoisted)
            ]

    # dispatch chain with else-linked selectors, hoisted checks above it
    chain: Process | None = None
    for br in reversed(sw_branches):
        body = br.body
        for c in reversed(br.checks):
            body = Let(c.pattern, c.value, body)
        chain = Let(br.selector.pattern, br.selector.value, body, chain)

    assert trigger_pat is not None and chain is not None
    inner_chain: Process = chain
    for h in reversed(hoisted):
        inner_chain = Let(h.pattern, h.value, inner_chain)
    out: Process = In(Ctor(SW_FETCH, (b,)), trigger_pat, inner_chain)

    for pre in reversed(preamble):
        if set(pattern_binds(pre.pattern)) & free_names(out):
            out = Let(pre.pattern, pre.value, out)

    out = _renumber_synth(out)
    if optimize:
        out = optimize_process(out)

    blocking = _count_blocking_checks(out, spec, {n: t for n, t in part.params} | {browser_var: "Browser"})
    if blocking == 0:
        raise UnobservableCheckError("check unobservable at client", tuple(warnings))

    params = ((browser_var, "Browser"),) + part.params
    name = _monitor_stem(part.name) + "ServiceWorker"
    return SwResult(
        participant=Participant(name, params, out, role=part.role),
        warnings=tuple(warnings),
        tables=tuple(sorted(used_tables)),
    )


def _reattach(node: Process, cont: Process) -> Process:
    match node:
        case Insert(tab, args, _):
            return Insert(tab, args, cont)
        case Event(sym, args, _):
            return Event(sym, args, cont)
        case Get(tab, pats, _, orelse):
            return Get(tab, pats, cont, orelse)
        case Let(pat, val, _, orelse):
            return Let(pat, val, cont, orelse)
    raise TypeError(node)


def _renumber_synth(p: Process) -> Process:
    """Renumber synthesized `cs_*` reception binders in document order so
    each reception gets its own century (cs_1000, cs_1100, cs_1200, ...)."""
    counter = itertools.count()

    def walk(p: Process) -> Process:
        from .calculus import subst_pattern, subst_process

        match p:
            case In(c, pat, b):
                idx = next(counter)
                mapping: dict[str, Term] = {}
                new_pat = _rename_pattern(pat, idx, mapping)
                body = subst_process(b, mapping) if mapping else b
                return In(c, new_pat, walk(body))
            case Nil():
                return p
            case Par(l, r):
                return Par(walk(l), walk(r))
            case Repl(b):
                return Repl(walk(b))
            case New(x, ty, b):
                return New(x, ty, walk(b))
            case Out(c, m, b):
                return Out(c, m, walk(b))
            case Let(pat, val, then, orelse):
                return Let(pat, val, walk(then), None if orelse is None else walk(orelse))
            case Insert(tab, args, b):
                return Insert(tab, args, walk(b))
            case Get(tab, pats, then, orelse):
                return Get(tab, pats, walk(then), None if orelse is None else walk(orelse))
            case Event(sym, args, b):
                return Event(sym, args, walk(b))
            case If(l, r, then, orelse):
                return If(l, r, walk(then), None if orelse is None else walk(orelse))
        raise TypeError(p)

    def _rename_pattern(pat: Pattern, idx: int, mapping: dict[str, Term]) -> Pattern:
        j = itertools.count()

        def ren(q: Pattern) -> Pattern:
            match q:
                case Bind(ident, ty) if ident.startswith("cs_"):
                    new = f"cs_{1000 + 100 * idx + next(j)}"
                    if new != ident:
                        mapping[ident] = Var(new)
                    return Bind(new, ty)
                case Bind(_, _):
                    return q
                case Eq(_):
                    return q
                case CtorPat(sym, args):
                    return CtorPat(sym, tuple(ren(a) for a in args))
                case TuplePat(items):
                    return TuplePat(tuple(ren(a) for a in items))
            raise TypeError(q)

        return ren(pat)

    return walk(p)


def _count_blocking_checks(
    p: Process, spec: SystemSpec, var_types: dict[str, str] | None = None
) -> int:
    """Constructs that can deny a request: table lookups, conditionals, and
    equality checks on protocol values (routing dispatch does not count)."""
    count = 0
    types = dict(var_types or {})

    def eq_is_blocking(t: Term) -> bool:
        return infer_type(t, spec, types) not in ROUTING_EQ_TYPES

    def note_binds(pat: Pattern) -> None:
        for ident, ty in _typed_binds(pat):
            types[ident] = ty

    def walk(q: Process) -> None:
        nonlocal count
        match q:
            case Nil():
                return
            case Par(l, r):
                walk(l)
                walk(r)
            case Repl(b) | New(_, _, b) | Out(_, _, b) | Insert(_, _, b) | Event(_, _, b):
                walk(b)
            case In(_, pat, b):
                note_binds(pat)
                walk(b)
            case Get(_, pats, then, orelse):
                count += 1
                for pat in pats:
                    note_binds(pat)
                walk(then)
                if orelse is not None:
                    walk(orelse)
            case If(_, _, then, orelse):
                count += 1
                walk(then)
                if orelse is not None:
                    walk(orelse)
            case Let(pat, _, then, orelse):
                if any(eq_is_blocking(t) for t in pattern_eq_terms(pat)):
                    count += 1
                note_binds(pat)
                walk(then)
                if orelse is not None:
                    walk(orelse)

    walk(p)
    return count


# ---------------------------------------------------------------------------
# Deployment search
# ---------------------------------------------------------------------------

PLACEMENTS = ("sw", "proxy", "both")
EASE_SCORE = {"sw": 1, "proxy": 2, "both": 3}


@dataclass(frozen=True)
class ThreatModel:
    client_trusted: bool = True
    network_attacker: bool = False


@dataclass(frozen=True)
class DeploymentOption:
    placements: tuple[tuple[str, str], ...]  # (participant, placement), sorted

    @property
    def ease_score(self) -> int:
        return sum(EASE_SCORE[kind] for _, kind in self.placements)

    def placement_of(self, participant: str) -> str | None:
        for name, kind in self.placements:
            if name == participant:
                return kind
        return None

    def describe(self) -> str:
        if not self.placements:
            return "no monitors"
        return ", ".join(f"{name}:{kind}" for name, kind in self.placements)


@dataclass(frozen=True)
class MonitoredSpec:
    base: SystemSpec
    inattentive: tuple[str, ...]
    option: DeploymentOption
    monitors: dict[tuple[str, str], Participant]  # (participant, "sw"|"proxy")
    sw_warnings: tuple[str, ...]
    rejected: tuple[tuple[DeploymentOption, str], ...]


VerifierHook = Callable[
    [SystemSpec, tuple[str, ...], DeploymentOption, dict[tuple[str, str], Participant], ThreatModel],
    tuple[bool, str | None],
]


def enumerate_options(inattentive: tuple[str, ...]) -> list[DeploymentOption]:
    parts = tuple(sorted(inattentive))
    combos = itertools.product(PLACEMENTS, repeat=len(parts))
    options = [
        DeploymentOption(tuple(zip(parts, combo))) for combo in combos
    ]
    options.sort(key=lambda o: o.ease_score)  # stable: ties keep product order
    return options


def build_monitors(
    spec: SystemSpec,
    inattentive: tuple[str, ...],
    option: DeploymentOption,
) -> tuple[dict[tuple[str, str], Participant], tuple[str, ...]]:
    """Synthesize the monitor set for one deployment option. Raises
    UnobservableCheckError when a required service worker cannot enforce
    any check."""
    ua = spec.by_role("UA")
    monitors: dict[tuple[str, str], Participant] = {}
    warnings: list[str] = []
    for idx, name in enumerate(sorted(inattentive), start=1):
        part = spec.participant(name)
        if part is None:
            raise ValueError(f"unknown participant `{name}`")
        kind = option.placement_of(name)
        if kind in ("proxy", "both"):
            monitors[(name, "proxy")] = a2m_proxy(part, spec, mch_index=idx).participant
        if kind in ("sw", "both"):
            if ua is None:
                raise ValueError("spec has no UA-role participant for sw synthesis")
            sw = a2m_sw(part, ua, spec)
            monitors[(name, "sw")] = sw.participant
            warnings.extend(sw.warnings)
    return monitors, tuple(warnings)


def search_deployment(
    spec: SystemSpec,
    inattentive: frozenset[str] | set[str],
    threat: ThreatModel,
    verify: VerifierHook,
) -> MonitoredSpec:
    """Enumerate placements by ascending ease of deployment and return the
    first one the verification oracle accepts."""
    inat = tuple(sorted(inattentive))
    if not inat:
        return MonitoredSpec(spec, (), DeploymentOption(()), {}, (), ())
    rejected: list[tuple[DeploymentOption, str]] = []
    for option in enumerate_options(inat):
        try:
            monitors, warnings = build_monitors(spec, inat, option)
        except TransformError as exc:
            rejected.append((option, f"monitor synthesis failed: {exc}"))
            continue
        effective = dict(monitors)
        if not threat.client_trusted:
            # client-side monitors can be tampered with or uninstalled
            effective = {k: v for k, v in effective.items() if k[1] != "sw"}
        ok, witness = verify(spec, inat, option, effective, threat)
        if ok:
            return MonitoredSpec(spec, inat, option, monitors, warnings, tuple(rejected))
        rejected.append((option, witness or "verification failed"))
    raise NoSecurePlacement(tuple(rejected))


# ---------------------------------------------------------------------------
# Monitor spec emission
# ---------------------------------------------------------------------------

SW_TYPES = ("XDR",)
SW_CHANNEL_CTORS = (SW_FETCH, SW_RAW, SW_RESULT, SW_SEND)


def emit_monitor_spec(
    base: SystemSpec,
    monitor: Participant,
    kind: str,
    mch_index: int = 1,
) -> SystemSpec:
    """Standalone spec for a synthesized monitor: the base declarations
    plus the monitor-side vocabulary (relay channels and monitor tables
    for proxies; fetch channels, the XDR type and browser-keyed tables
    for service workers)."""
    types = list(base.types)
    channels = list(base.channels)
    ctors = list(base.ctors)
    tables: list[TableDecl] = []
    events = list(base.events)
    if kind == "proxy":
        channels += [f"mC_{mch_index}_out", f"mC_{mch_index}_in"]
        for t in base.tables:
            mname = MONITOR_TABLE_PREFIX + t.name
            if _uses_table(monitor.body, mname):
                tables.append(TableDecl(mname, t.column_types))
    else:
        if "XDR" not in types:
            types.append("XDR")
        for sym in SW_CHANNEL_CTORS:
            if base.ctor(sym) is None:
                ctors.append(CtorDecl(sym, ("Browser",), "channel"))
        browserized = lambda cols: tuple(  # noqa: E731
            "Browser" if c == "CookiePair" else c for c in cols
        )
        for t in base.tables:
            mname = MONITOR_TABLE_PREFIX + t.name
            if _uses_table(monitor.body, mname):
                tables.append(TableDecl(mname, browserized(t.column_types)))
        events = [
            replace(e, arg_types=browserized(e.arg_types)) for e in base.events
        ]
    return SystemSpec(
        types=tuple(types),
        channels=tuple(channels),
        consts=base.consts,
        ctors=tuple(ctors),
        tables=tuple(tables),
        events=tuple(events),
        participants=(monitor,),
    )


def _uses_table(p: Process, table: str) -> bool:
    match p:
        case Nil():
            return False
        case Par(l, r):
            return _uses_table(l, table) or _uses_table(r, table)
        case Repl(b) | New(_, _, b) | In(_, _, b) | Out(_, _, b) | Event(_, _, b):
            return _uses_table(b, table)
        case Insert(tab, _, b):
            return tab == table or _uses_table(b, table)
        case Get(tab, _, then, orelse):
            return (
                tab == table
                or _uses_table(then, table)
                or (orelse is not None and _uses_table(orelse, table))
            )
        case Let(_, _, then, orelse) | If(_, _, then, orelse):
            return _uses_table(then, table) or (
                orelse is not None and _uses_table(orelse, table)
            )
    raise TypeError(p)
