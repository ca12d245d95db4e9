"""Runtime state shared by monitors and the testbed: session tables, the
append-only event trace, and the correspondence checker that evaluates
authentication queries over recorded traces."""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field

from .calculus import Const, Correspondence, Ctor, EventAtom, Name, Query, Term, Var

DEFAULT_ROW_TTL = 3600.0


class SessionTable:
    """Multiset of string tuples with idempotent inserts, exact-match
    lookup on fixed columns and per-row expiry. With a persist path the
    table also appends rows to a log file and replays it on startup."""

    def __init__(self, name: str, ttl: float = DEFAULT_ROW_TTL, persist_path: str | None = None):
        self.name = name
        self.ttl = ttl
        self._rows: dict[tuple[str, ...], float] = {}
        self._lock = threading.Lock()
        self._persist_path = persist_path
        if persist_path and os.path.exists(persist_path):
            with open(persist_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        self._rows[tuple(json.loads(line))] = time.monotonic()

    def insert(self, row: tuple[str, ...]) -> None:
        with self._lock:
            fresh = row not in self._rows
            self._rows[row] = time.monotonic()
            if fresh and self._persist_path:
                with open(self._persist_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(list(row)) + "\n")

    def lookup(self, columns: list[str | None]) -> list[tuple[str, ...]]:
        """Rows matching the fixed columns (None is a wildcard)."""
        now = time.monotonic()
        with self._lock:
            live = {r: t for r, t in self._rows.items() if now - t <= self.ttl}
            self._rows = live
            out = []
            for row in live:
                if len(row) != len(columns):
                    continue
                if all(c is None or c == v for c, v in zip(columns, row)):
                    out.append(row)
            return out

    def rows(self) -> list[tuple[str, ...]]:
        with self._lock:
            return list(self._rows)


class TableStore:
    """Named session tables, created on first use. A persist directory
    gives each table an append-only log file keyed by its symbol."""

    def __init__(self, ttl: float = DEFAULT_ROW_TTL, persist_dir: str | None = None):
        self._tables: dict[str, SessionTable] = {}
        self._lock = threading.Lock()
        self._ttl = ttl
        self._persist_dir = persist_dir
        if persist_dir:
            os.makedirs(persist_dir, exist_ok=True)

    def table(self, name: str) -> SessionTable:
        with self._lock:
            if name not in self._tables:
                path = (
                    os.path.join(self._persist_dir, f"{name}.log")
                    if self._persist_dir
                    else None
                )
                self._tables[name] = SessionTable(name, self._ttl, persist_path=path)
            return self._tables[name]


@dataclass(frozen=True)
class TraceEvent:
    symbol: str
    args: tuple[str, ...]
    timestamp: float
    session: str

    def line(self) -> str:
        return f"{self.symbol}\t{self.session}\t{','.join(self.args)}"


class EventTrace:
    """Append-only, totally ordered event log for one runtime instance."""

    def __init__(self) -> None:
        self._events: list[TraceEvent] = []
        self._lock = threading.Lock()

    def append(self, symbol: str, args: tuple[str, ...], session: str = "") -> TraceEvent:
        with self._lock:
            ev = TraceEvent(symbol, args, time.monotonic(), session)
            self._events.append(ev)
            return ev

    def events(self) -> list[TraceEvent]:
        with self._lock:
            return list(self._events)

    def export(self) -> str:
        return "\n".join(ev.line() for ev in self.events())

    @staticmethod
    def parse(text: str) -> "EventTrace":
        trace = EventTrace()
        for line in text.splitlines():
            if not line.strip():
                continue
            symbol, session, args = line.split("\t")
            trace.append(symbol, tuple(args.split(",")) if args else (), session)
        return trace


# ---------------------------------------------------------------------------
# Correspondence checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    holds: bool
    witness: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def __bool__(self) -> bool:
        return self.holds


def _unify_atom(
    atom: EventAtom,
    event: TraceEvent,
    env: dict[str, str],
    symbols: dict[str, str],
) -> dict[str, str] | None:
    if atom.symbol != event.symbol or len(atom.args) != len(event.args):
        return None
    out = dict(env)
    for term, value in zip(atom.args, event.args):
        match term:
            case Var(x) | Name(x):
                if x in out:
                    if out[x] != value:
                        return None
                else:
                    out[x] = value
            case Const(sym):
                expected = symbols.get(sym, sym)
                if expected != value:
                    return None
            case Ctor(_, _):
                return None  # structured query arguments are out of scope
            case _:
                return None
    return out


def check_correspondence(
    trace: list[TraceEvent] | EventTrace,
    query: Query,
    symbols: dict[str, str] | None = None,
) -> Verdict:
    """Holds iff for every assignment of the premise atoms to trace events
    with consistently unified variables, a matching conclusion event occurs
    strictly earlier in the trace than every premise event. The returned
    witness is the offending premise assignment."""
    if not isinstance(query, Correspondence):
        raise TypeError("check_correspondence takes a correspondence query")
    events = trace.events() if isinstance(trace, EventTrace) else list(trace)
    symbols = symbols or {}

    def conclusion_before(pos: int, env: dict[str, str]) -> bool:
        for i in range(pos):
            if _unify_atom(query.conclusion, events[i], env, symbols) is not None:
                return True
        return False

    def assign(
        atoms: tuple[EventAtom, ...],
        env: dict[str, str],
        chosen: list[int],
    ) -> Verdict:
        if not atoms:
            if not conclusion_before(min(chosen) if chosen else 0, env):
                witness = tuple((events[i].symbol, events[i].args) for i in chosen)
                return Verdict(False, witness)
            return Verdict(True)
        head, rest = atoms[0], atoms[1:]
        for i, ev in enumerate(events):
            env2 = _unify_atom(head, ev, env, symbols)
            if env2 is None:
                continue
            verdict = assign(rest, env2, chosen + [i])
            if not verdict.holds:
                return verdict
        return Verdict(True)

    return assign(query.premise, {}, [])
