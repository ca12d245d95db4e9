"""Bounded exhaustive interpreter for closed process systems.

Explores every schedule of a parallel composition up to a bound on the
number of recorded channel rendezvous, and returns the prefix-closed set
of traces. Synchronization is rendezvous with consumption: a message that
reaches a reception whose pattern then fails is consumed and the receiving
branch is dead from that point on, mirroring the reception-then-match
reading of pattern inputs.

Used to validate transformations: an inattentive participant must accept
a superset of the ideal traces, and the composition of the inattentive
participant with its proxy monitor (relay channels hidden) must be
trace-equivalent to the ideal participant.
"""

from __future__ import annotations

from dataclasses import dataclass
from .calculus import (
    Bind,
    Const,
    CtorPat,
    Ctor,
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
    Term,
    Tuple,
    TuplePat,
    Var,
    evaluate,
    subst_process,
)

FRESH_PREFIX = "~"

Action = tuple[str, str]  # (channel ident, canonical message text)
Trace = tuple[Action, ...]


@dataclass(frozen=True)
class Config:
    procs: tuple[Process, ...]
    tables: frozenset[tuple[str, tuple[Term, ...]]]
    fresh: int


def _flatten(p: Process, out: list[Process]) -> None:
    if isinstance(p, Par):
        _flatten(p.left, out)
        _flatten(p.right, out)
    elif not isinstance(p, Nil):
        out.append(p)


def match(pattern: Pattern, value: Term, spec: SystemSpec) -> dict[str, Term] | None:
    """Match a ground value against a pattern; equality terms must already
    be ground (the caller substitutes earlier bindings). Binds earlier in
    the pattern are visible to later equality terms."""
    match pattern:
        case Bind(ident, _):
            return {ident: value}
        case Eq(t):
            return {} if evaluate(t, spec) == value else None
        case CtorPat(symbol, args):
            if not isinstance(value, Ctor) or value.symbol != symbol:
                return None
            if len(args) != len(value.args):
                return None
            env: dict[str, Term] = {}
            for sub, val in zip(args, value.args):
                m = match(_subst_pattern_env(sub, env), val, spec)
                if m is None:
                    return None
                env.update(m)
            return env
        case TuplePat(items):
            if not isinstance(value, Tuple) or len(value.items) != len(items):
                return None
            env = {}
            for sub, val in zip(items, value.items):
                m = match(_subst_pattern_env(sub, env), val, spec)
                if m is None:
                    return None
                env.update(m)
            return env
    raise TypeError(pattern)


def _subst_pattern_env(p: Pattern, env: dict[str, Term]) -> Pattern:
    if not env:
        return p
    from .calculus import subst_pattern

    return subst_pattern(p, env)


class Interpreter:
    def __init__(
        self,
        spec: SystemSpec,
        *,
        hidden: frozenset[str] = frozenset(),
        repl_bound: int = 2,
    ):
        self.spec = spec
        self.hidden = hidden
        self.repl_bound = repl_bound

    # -- single-process silent steps -------------------------------------

    def _tau_steps(self, cfg: Config, i: int) -> list[Config] | None:
        """All silent successors obtained by advancing process i, or None
        if process i cannot take a silent step."""
        p = cfg.procs[i]
        spec = self.spec

        def with_proc(updated: Process, tables=None, fresh=None) -> Config:
            procs = list(cfg.procs)
            flat: list[Process] = []
            _flatten(updated, flat)
            procs[i : i + 1] = flat
            return Config(
                tuple(procs),
                cfg.tables if tables is None else tables,
                cfg.fresh if fresh is None else fresh,
            )

        match p:
            case New(x, _, body):
                fresh_name = Name(f"{FRESH_PREFIX}{cfg.fresh}")
                return [with_proc(subst_process(body, {x: fresh_name}), fresh=cfg.fresh + 1)]
            case Let(pat, val, then, orelse):
                value = evaluate(val, spec)
                m = match(pat, value, spec)
                if m is not None:
                    return [with_proc(subst_process(then, m))]
                if orelse is not None:
                    return [with_proc(orelse)]
                return [with_proc(Nil())]
            case Insert(tab, args, body):
                row = (tab, tuple(evaluate(a, spec) for a in args))
                return [with_proc(body, tables=cfg.tables | {row})]
            case Get(tab, pats, then, orelse):
                outs: list[Config] = []
                for name, row in sorted(cfg.tables, key=str):
                    if name != tab or len(row) != len(pats):
                        continue
                    env: dict[str, Term] = {}
                    ok = True
                    for q, v in zip(pats, row):
                        q = _subst_pattern_env(q, env)
                        m = match(q, v, spec)
                        if m is None:
                            ok = False
                            break
                        env.update(m)
                    if ok:
                        outs.append(with_proc(subst_process(then, env)))
                if outs:
                    return outs
                if orelse is not None:
                    return [with_proc(orelse)]
                return [with_proc(Nil())]
            case Event(_, _, body):
                return [with_proc(body)]
            case If(l, r, then, orelse):
                if evaluate(l, spec) == evaluate(r, spec):
                    return [with_proc(then)]
                return [with_proc(orelse if orelse is not None else Nil())]
            case Repl(body):
                if self.repl_bound <= 0:
                    return [with_proc(Nil())]
                copies: Process = Nil()
                for _ in range(self.repl_bound):
                    copies = Par(body, copies)
                return [with_proc(copies)]
            case _:
                return None

    def _comm_steps(self, cfg: Config) -> list[tuple[Action | None, Config]]:
        """All rendezvous between an emission and a reception on the same
        channel value. Pattern failure consumes the message and kills the
        receiving branch."""
        spec = self.spec
        outs: list[tuple[Action | None, Config]] = []
        for i, p in enumerate(cfg.procs):
            if not isinstance(p, Out):
                continue
            chan_i = evaluate(p.channel, spec)
            message = evaluate(p.message, spec)
            for j, q in enumerate(cfg.procs):
                if i == j or not isinstance(q, In):
                    continue
                if evaluate(q.channel, spec) != chan_i:
                    continue
                m = match(q.pattern, message, spec)
                receiver = subst_process(q.body, m) if m is not None else Nil()
                procs = list(cfg.procs)
                flat: list[Process] = []
                _flatten(p.body, flat)
                flat_r: list[Process] = []
                _flatten(receiver, flat_r)
                # replace both endpoints, preserving order
                replacement = {i: flat, j: flat_r}
                new_procs: list[Process] = []
                for k, proc in enumerate(procs):
                    if k in replacement:
                        new_procs.extend(replacement[k])
                    else:
                        new_procs.append(proc)
                chan_ident = chan_i.ident if isinstance(chan_i, Name) else str(chan_i)
                action: Action | None = None
                if chan_ident not in self.hidden:
                    action = (chan_ident, str(message))
                outs.append((action, Config(tuple(new_procs), cfg.tables, cfg.fresh)))
        return outs

    # -- trace sets --------------------------------------------------------

    def trace_set(self, procs: list[Process], depth: int) -> frozenset[Trace]:
        flat: list[Process] = []
        for p in procs:
            _flatten(p, flat)
        initial = Config(tuple(flat), frozenset(), 0)
        memo: dict[tuple[Config, int], frozenset[Trace]] = {}

        def explore(cfg: Config, d: int) -> frozenset[Trace]:
            key = (cfg, d)
            cached = memo.get(key)
            if cached is not None:
                return cached
            memo[key] = frozenset({()})  # cycle guard; configs strictly shrink
            traces: set[Trace] = {()}
            for i in range(len(cfg.procs)):
                succ = self._tau_steps(cfg, i)
                if succ is None:
                    continue
                for nxt in succ:
                    traces |= explore(nxt, d)
            for action, nxt in self._comm_steps(cfg):
                if action is None:
                    traces |= explore(nxt, d)
                elif d > 0:
                    traces |= {(action,) + t for t in explore(nxt, d - 1)}
                    traces.add((action,))
            result = frozenset(traces)
            memo[key] = result
            return result

        return canonicalize_traces(explore(initial, depth))


def canonicalize_traces(traces: frozenset[Trace]) -> frozenset[Trace]:
    """Rename fresh values in order of first appearance within each trace,
    so systems that allocate a different number of fresh values along the
    way still compare equal on identical observable behavior."""
    import re

    fresh_re = re.compile(r"~\d+")

    def canon(trace: Trace) -> Trace:
        mapping: dict[str, str] = {}

        def sub(m: re.Match[str]) -> str:
            name = m.group(0)
            if name not in mapping:
                mapping[name] = f"~t{len(mapping)}"
            return mapping[name]

        return tuple((chan, fresh_re.sub(sub, msg)) for chan, msg in trace)

    return frozenset(canon(t) for t in traces)


def instantiate(part: Participant, args: list[Term]) -> Process:
    """Close a participant body over concrete arguments."""
    if len(args) != len(part.params):
        raise ValueError(f"{part.name} expects {len(part.params)} arguments")
    mapping = {name: value for (name, _), value in zip(part.params, args)}
    return subst_process(part.body, mapping)


def instantiate_main(spec: SystemSpec) -> list[Process]:
    """Instantiate the spec's main composition."""
    procs: list[Process] = []
    for entry in spec.main:
        part = spec.participant(entry.participant)
        assert part is not None
        p = instantiate(part, list(entry.args))
        procs.append(Repl(p) if entry.replicated else p)
    return procs
