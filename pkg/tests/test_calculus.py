"""Structural utilities: alpha equivalence, free names, pretty printing."""

from __future__ import annotations

import importlib.resources as resources

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bulwark.calculus import (
    Bind,
    Const,
    Ctor,
    CtorPat,
    Eq,
    Get,
    In,
    Insert,
    Let,
    Name,
    New,
    Nil,
    Out,
    Par,
    Process,
    Repl,
    Tuple,
    TuplePat,
    Var,
    alpha_equiv,
    free_names,
    pretty_print,
    subst_process,
)
from bulwark.parser import parse_process_source, parse_spec_file

SPEC_DIR = resources.files("bulwark").joinpath("specs")


@pytest.fixture(scope="module")
def oauth_spec():
    return parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))


@pytest.fixture(scope="module")
def golden_proxy_spec():
    return parse_spec_file(str(SPEC_DIR / "golden_rp_proxy.bw.pv"))


# ---------------------------------------------------------------------------
# alpha_equiv
# ---------------------------------------------------------------------------


def test_alpha_nil_vs_nil():
    assert alpha_equiv(Nil(), Nil())


def test_alpha_bound_name_renaming():
    p = New("x", "bitstring", Out(Name("c"), Var("x"), Nil()))
    q = New("y", "bitstring", Out(Name("c"), Var("y"), Nil()))
    assert alpha_equiv(p, q)


def test_alpha_distinguishes_free_names():
    p = Out(Name("c"), Var("x"), Nil())
    q = Out(Name("c"), Var("y"), Nil())
    assert not alpha_equiv(p, q)


def test_alpha_golden_proxy_relay_channel_renaming(golden_proxy_spec):
    """Renaming the synthesized relay channel consistently preserves
    equivalence; renaming only some occurrences breaks it."""
    golden = golden_proxy_spec.participant("RPProxy").body
    renamed = subst_process(golden, {"mC_1_out": Name("mC_A_out")})
    assert alpha_equiv(golden, renamed)
    assert alpha_equiv(golden, renamed, synthesized=frozenset({"mC_1_out", "mC_A_out", "mC_1_in"}))

    # inconsistent renaming: one occurrence diverges
    def rename_first_out(p: Process, done=[False]) -> Process:
        match p:
            case Out(Name("mC_1_out"), m, b) if not done[0]:
                done[0] = True
                return Out(Name("mC_B_out"), m, b)
            case Par(l, r):
                return Par(rename_first_out(l), rename_first_out(r))
            case In(c, pat, b):
                return In(c, pat, rename_first_out(b))
            case Out(c, m, b):
                return Out(c, m, rename_first_out(b))
            case Let(pat, val, then, orelse):
                return Let(pat, val, rename_first_out(then), orelse)
            case Get(tab, pats, then, orelse):
                return Get(tab, pats, rename_first_out(then), orelse)
            case Insert(tab, args, b):
                return Insert(tab, args, rename_first_out(b))
            case _:
                return p

    broken = rename_first_out(golden)
    assert not alpha_equiv(golden, broken)


# ---------------------------------------------------------------------------
# free_names
# ---------------------------------------------------------------------------


def test_free_names_out():
    p = Out(Name("c"), Var("x"), Nil())
    assert free_names(p) == {"c", "x"}


def test_free_names_new_removes_binder():
    p = New("x", "bitstring", Out(Name("c"), Var("x"), Nil()))
    assert free_names(p) == {"c"}


def test_free_names_golden_rp_body(oauth_spec):
    """The protocol listing's body: channels and constants free, values
    bound by receptions and news absent."""
    rp = oauth_spec.participant("RPApp")
    names = free_names(rp.body)
    for expected in ("httpServerRequest", "httpServerResponse", "appid", "appsecret"):
        assert expected in names, expected
    for bound in ("state", "code", "u", "hs", "corr", "token", "ncorr"):
        assert bound not in names, bound
    # parameters are free in the body, bound at the participant head
    assert {"h", "fb"} <= names


# ---------------------------------------------------------------------------
# pretty printing round-trip
# ---------------------------------------------------------------------------


def test_pretty_print_nil():
    assert pretty_print(Nil()) == "0"


def test_pretty_print_new():
    p = New("state", "bitstring", Nil())
    assert pretty_print(p) == "new state:bitstring;\n0"


def test_roundtrip_golden_rp(oauth_spec):
    rp = oauth_spec.participant("RPApp")
    scope = {n for n, _ in rp.params}
    reparsed = parse_process_source(pretty_print(rp.body), oauth_spec, scope)
    assert alpha_equiv(rp.body, reparsed)
    assert reparsed == rp.body  # printing is faithful, not just alpha-faithful


# ---------------------------------------------------------------------------
# property tests over generated processes
# ---------------------------------------------------------------------------

IDENTS = st.sampled_from(["x", "y", "z", "w"])
CHANNELS = st.sampled_from(["c", "d"])


def terms(bound: tuple[str, ...]):
    leaves = [st.sampled_from([Name("c"), Name("d")]), st.builds(Const, st.just("k"))]
    if bound:
        leaves.append(st.builds(Var, st.sampled_from(list(bound))))
    leaf = st.one_of(*leaves)
    return st.recursive(
        leaf,
        lambda inner: st.builds(
            Ctor, st.sampled_from(["f", "g"]), st.tuples(inner)
        ),
        max_leaves=3,
    )


def processes(bound: tuple[str, ...] = (), depth: int = 3):
    if depth == 0:
        return st.just(Nil())
    sub = st.deferred(lambda: processes(bound, depth - 1))

    def with_binder(ident):
        return processes(bound + (ident,), depth - 1)

    return st.one_of(
        st.just(Nil()),
        st.builds(Out, st.builds(Name, CHANNELS), terms(bound), sub),
        IDENTS.flatmap(
            lambda x: st.builds(
                New, st.just(x), st.just("bitstring"), with_binder(x)
            )
        ),
        IDENTS.flatmap(
            lambda x: st.builds(
                In,
                st.builds(Name, CHANNELS),
                st.just(Bind(x, None)),
                with_binder(x),
            )
        ),
        st.builds(Par, sub, sub),
    )


@settings(max_examples=60, deadline=None)
@given(processes())
def test_alpha_reflexive(p):
    assert alpha_equiv(p, p)


@settings(max_examples=60, deadline=None)
@given(processes())
def test_alpha_symmetric_under_renaming(p):
    q = _rename_binders(p, "_r")
    assert alpha_equiv(p, q)
    assert alpha_equiv(q, p)


@settings(max_examples=60, deadline=None)
@given(processes())
def test_alpha_transitive_chain(p):
    q = _rename_binders(p, "_a")
    r = _rename_binders(q, "_b")
    assert alpha_equiv(p, q) and alpha_equiv(q, r)
    assert alpha_equiv(p, r)


@settings(max_examples=60, deadline=None)
@given(processes(), IDENTS)
def test_free_names_new_law(p, x):
    assert free_names(New(x, "bitstring", p)) == free_names(p) - {x}


def _rename_binders(p: Process, suffix: str) -> Process:
    """Consistent renaming of every binder (fresh names stay distinct)."""
    match p:
        case Nil():
            return p
        case Par(l, r):
            return Par(_rename_binders(l, suffix), _rename_binders(r, suffix))
        case Repl(b):
            return Repl(_rename_binders(b, suffix))
        case New(x, ty, b):
            nx = x + suffix
            return New(nx, ty, _rename_binders(subst_process(b, {x: Var(nx)}), suffix))
        case In(c, Bind(x, ty), b):
            nx = x + suffix
            return In(c, Bind(nx, ty), _rename_binders(subst_process(b, {x: Var(nx)}), suffix))
        case In(c, pat, b):
            return In(c, pat, _rename_binders(b, suffix))
        case Out(c, m, b):
            return Out(c, m, _rename_binders(b, suffix))
        case _:
            return p
