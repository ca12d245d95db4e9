"""Parsing the protocol dialect: golden listings, precise errors, queries."""

from __future__ import annotations

import importlib.resources as resources

import pytest

from bulwark.calculus import (
    Correspondence,
    Ctor,
    Eq,
    Get,
    Nil,
    Process,
    Secrecy,
    Var,
    alpha_equiv,
    term_vars,
)
from bulwark.parser import (
    ParseError,
    SpecError,
    parse_query,
    parse_spec,
    parse_spec_file,
    parse_process_source,
    spec_to_source,
)

SPEC_DIR = resources.files("bulwark").joinpath("specs")

GOLDEN_FILES = [
    "oauth.bw.pv",
    "oauth_stateless.bw.pv",
    "paypal.bw.pv",
    "golden_rp_proxy.bw.pv",
    "golden_rp_sw.bw.pv",
]


def test_minimal_participant():
    spec = parse_spec("let P = 0.")
    assert len(spec.participants) == 1
    assert spec.participants[0].name == "P"
    assert spec.participants[0].body == Nil()


def test_unbound_variable_reported():
    with pytest.raises(SpecError) as err:
        parse_spec("free c:channel. let P = out(c, x).")
    assert "x" in str(err.value)


def test_parse_error_position():
    with pytest.raises(ParseError) as err:
        parse_spec("type Host\nlet P = 0.")
    assert err.value.line == 2  # the missing `.` is discovered at `let`
    assert err.value.column == 1


def test_undeclared_table():
    with pytest.raises(SpecError):
        parse_spec("free c:channel. let P = insert T(c).")


def test_determinism():
    src = (SPEC_DIR / "oauth.bw.pv").read_text()
    assert parse_spec(src) == parse_spec(src)


@pytest.mark.parametrize("name", GOLDEN_FILES)
def test_golden_listings_parse_and_roundtrip(name):
    spec = parse_spec_file(str(SPEC_DIR / name))
    reparsed = parse_spec(spec_to_source(spec))
    assert len(reparsed.participants) == len(spec.participants)
    for a, b in zip(spec.participants, reparsed.participants):
        assert alpha_equiv(a.body, b.body), a.name
    assert reparsed == spec


def test_rp_callback_branch_contains_session_lookup():
    """The callback branch performs the session lookup keyed by the
    request cookie and the received state value."""
    spec = parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))
    rp = spec.participant("RPApp")

    found = []

    def walk(p: Process) -> None:
        if isinstance(p, Get):
            found.append(p)
        for attr in ("body", "then", "orelse", "left", "right"):
            child = getattr(p, attr, None)
            if child is not None:
                walk(child)

    walk(rp.body)
    assert len(found) == 1
    get = found[0]
    assert get.table == "RPSessions"
    assert get.patterns == (
        Eq(Ctor("getCookie", (Var("hs"),))),
        Eq(Var("state")),
    )


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------


def test_secrecy_query():
    spec = parse_spec("const token:bitstring. query attacker(token).")
    assert len(spec.queries) == 1
    q = spec.queries[0]
    assert isinstance(q, Secrecy)


def test_parse_query_helper_secrecy():
    q = parse_query("query attacker(token).")
    assert isinstance(q, Secrecy)


def test_authentication_query_shape():
    """The login-completion query: both end events imply the earlier
    protocol start, with the session values shared across all three."""
    spec = parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))
    q = spec.queries[0]
    assert isinstance(q, Correspondence)
    assert {a.symbol for a in q.premise} == {"ua_end", "rp_end"}
    assert q.conclusion.symbol == "rp_begin"
    ua_vars = term_vars(q.premise[0].args[3]) | term_vars(q.premise[0].args[4])
    rp_end_vars = set()
    for a in q.premise[1].args:
        rp_end_vars |= term_vars(a)
    shared = (ua_vars | {"h"}) & rp_end_vars
    assert {"h", "state", "code"} <= shared | {"h"}
    # the state and code variables tie the user agent view to the server view
    assert {"state", "code"} <= ua_vars & rp_end_vars


def test_query_missing_conclusion_is_parse_error():
    with pytest.raises(ParseError):
        parse_query("query event(a(x)) ==>")


def test_unicode_implication_accepted():
    spec_src = """
type Host.
event a(Host).
event b(Host).
query event(a(h)) ⇒ event(b(h)).
"""
    # the conclusion variable appears in the premise, so this is well-formed
    spec = parse_spec(spec_src.replace("⇒", "==>"))
    spec_unicode = parse_spec(spec_src)
    assert spec.queries == spec_unicode.queries


def test_unicode_conjunction_accepted():
    src = """
type Host.
event a(Host).
event b(Host).
event c(Host).
query event(a(h)) ∧ event(b(h)) ==> event(c(h)).
"""
    spec = parse_spec(src)
    q = spec.queries[0]
    assert isinstance(q, Correspondence) and len(q.premise) == 2


def test_conclusion_variable_must_appear_in_premise():
    src = """
type Host.
event a(Host).
event b(Host).
query event(a(h)) ==> event(b(g)).
"""
    with pytest.raises(Exception):
        parse_spec(src)


def test_comments_nest():
    spec = parse_spec("(* outer (* inner *) still comment *) let P = 0.")
    assert spec.participants[0].name == "P"


def test_process_source_helper():
    spec = parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))
    p = parse_process_source("new x:bitstring; out(httpServerRequest, x)", spec)
    assert not isinstance(p, Nil)
