"""Correspondence checking over event traces, validated against a
brute-force all-assignments evaluator."""

from __future__ import annotations

import itertools
import random

import pytest

from bulwark.calculus import Correspondence, EventAtom, Var
from bulwark.parser import parse_query
from bulwark.runtime import EventTrace, TraceEvent, check_correspondence


def brute_force_holds(events: list[TraceEvent], query: Correspondence) -> bool:
    """Independent oracle: enumerate every tuple of trace positions for the
    premise atoms, unify naively, and scan every earlier position for a
    matching conclusion."""

    def unify(atom: EventAtom, ev: TraceEvent, env: dict[str, str]) -> dict[str, str] | None:
        if atom.symbol != ev.symbol or len(atom.args) != len(ev.args):
            return None
        env = dict(env)
        for term, val in zip(atom.args, ev.args):
            assert isinstance(term, Var)
            if term.ident in env and env[term.ident] != val:
                return None
            env[term.ident] = val
        return env

    n = len(events)
    for positions in itertools.product(range(n), repeat=len(query.premise)):
        env: dict[str, str] | None = {}
        for atom, pos in zip(query.premise, positions):
            env = unify(atom, events[pos], env)
            if env is None:
                break
        if env is None:
            continue
        earliest = min(positions)
        found = False
        for i in range(earliest):
            if unify(query.conclusion, events[i], env) is not None:
                found = True
                break
        if not found:
            return False
    return True


Q_SIMPLE = parse_query("query event(end(a, b)) ==> event(begin(a, b)).")
Q_JOIN = parse_query(
    "query event(ua(s, c)) && event(end(s, c)) ==> event(begin(s, c))."
)


def _trace(entries: list[tuple[str, tuple[str, ...]]]) -> list[TraceEvent]:
    return [TraceEvent(sym, args, float(i), "") for i, (sym, args) in enumerate(entries)]


def test_empty_trace_holds():
    assert check_correspondence([], Q_SIMPLE).holds


def test_direct_witness_holds():
    trace = _trace(
        [
            ("begin", ("h", "s1")),
            ("ua", ("h", "s1")),
            ("end", ("h", "s1")),
        ]
    )
    assert check_correspondence(trace, Q_JOIN).holds


def test_unmatched_end_violates():
    trace = _trace([("end", ("h", "s1"))])
    verdict = check_correspondence(trace, Q_SIMPLE)
    assert not verdict.holds
    assert verdict.witness == (("end", ("h", "s1")),)


def test_conclusion_must_be_strictly_earlier():
    trace = _trace([("end", ("h", "s1")), ("begin", ("h", "s1"))])
    assert not check_correspondence(trace, Q_SIMPLE).holds


def test_variable_unification_across_premise():
    # the session value differs between the two premise events: no joint
    # assignment exists, so the query holds vacuously
    trace = _trace([("ua", ("h", "s1")), ("end", ("h", "s2"))])
    assert check_correspondence(trace, Q_JOIN).holds


def test_session_swapping_trace_violates():
    """The recorded attack shape: the victim's completion carries the
    attacker's state, which no protocol start on the victim's session
    explains."""
    q = parse_query(
        "query event(ua_end(b, h, i, s, c)) && event(rp_end(h, i, sid, s, c)) "
        "==> event(rp_begin(h, i, sid, s))."
    )
    trace = _trace(
        [
            ("rp_begin", ("rp", "idp", "sid-attacker", "s-atk")),
            ("rp_begin", ("rp", "idp", "sid-victim", "s-victim")),
            ("rp_end", ("rp", "idp", "sid-victim", "s-atk", "code-atk")),
            ("ua_end", ("b-victim", "rp", "idp", "s-atk", "code-atk")),
        ]
    )
    verdict = check_correspondence(trace, q)
    assert not verdict.holds


# ---------------------------------------------------------------------------
# randomized agreement with the brute-force oracle
# ---------------------------------------------------------------------------

SYMBOLS = [("begin", 2), ("ua", 2), ("end", 2), ("other", 1)]
VALUES = ["v0", "v1", "v2"]


def random_trace(rng: random.Random, max_len: int = 12) -> list[TraceEvent]:
    n = rng.randint(0, max_len)
    out = []
    for i in range(n):
        sym, arity = rng.choice(SYMBOLS)
        args = tuple(rng.choice(VALUES) for _ in range(arity))
        out.append(TraceEvent(sym, args, float(i), ""))
    return out


@pytest.mark.parametrize("query", [Q_SIMPLE, Q_JOIN], ids=["single", "joined"])
def test_checker_agrees_with_brute_force(query):
    rng = random.Random(2026)
    disagreements = []
    violated = 0
    for i in range(200):
        trace = random_trace(rng)
        expected = brute_force_holds(trace, query)
        actual = check_correspondence(trace, query).holds
        if expected != actual:
            disagreements.append((i, trace))
        if not expected:
            violated += 1
    assert not disagreements
    assert violated > 10, "the random traces must exercise violations"


def test_trace_export_parse_roundtrip():
    trace = EventTrace()
    trace.append("rp_begin", ("h", "idp", "sid", "a", "r", "s"), session="sid")
    trace.append("ua_end", ("b", "h", "idp", "s", "c"), session="b")
    text = trace.export()
    lines = text.splitlines()
    assert lines[0] == "rp_begin\tsid\th,idp,sid,a,r,s"
    reparsed = EventTrace.parse(text)
    assert [(e.symbol, e.args) for e in reparsed.events()] == [
        (e.symbol, e.args) for e in trace.events()
    ]


# ---------------------------------------------------------------------------
# session tables
# ---------------------------------------------------------------------------


def test_session_table_ttl_expiry(monkeypatch):
    import bulwark.runtime as rt

    table = rt.SessionTable("T", ttl=10.0)
    now = [1000.0]
    monkeypatch.setattr(rt.time, "monotonic", lambda: now[0])
    table.insert(("a", "b"))
    assert table.lookup(["a", "b"]) == [("a", "b")]
    now[0] += 11.0
    assert table.lookup(["a", "b"]) == []


def test_session_table_idempotent_insert():
    from bulwark.runtime import SessionTable

    table = SessionTable("T")
    table.insert(("x", "y"))
    table.insert(("x", "y"))
    assert table.lookup(["x", None]) == [("x", "y")]


def test_table_store_persistence(tmp_path):
    from bulwark.runtime import TableStore

    store = TableStore(persist_dir=str(tmp_path))
    store.table("MRPSessions").insert(("sid", "state"))

    revived = TableStore(persist_dir=str(tmp_path))
    assert revived.table("MRPSessions").lookup(["sid", "state"]) == [("sid", "state")]
