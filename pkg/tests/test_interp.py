"""Bounded-interpreter validation of the monitor transformations.

For every corpus spec with designated participant P and driver D:
  - the inattentive variant accepts at least the ideal traces:
    traces(D | I(P)) >= traces(D | P)
  - composing the inattentive variant with its proxy monitor over hidden
    relay channels restores exactly the ideal behavior:
    traces(D | (I(P) | M(P))) == traces(D | P)
"""

from __future__ import annotations

import importlib.resources as resources

import pytest

from bulwark.calculus import Const, Name
from bulwark.interp import Interpreter, instantiate, instantiate_main
from bulwark.parser import parse_spec, parse_spec_file
from bulwark.transform import a2m_proxy, make_inattentive, rewire_monitored

SPEC_DIR = resources.files("bulwark").joinpath("specs")

HEADER = """
free c:channel.
free c2:channel.
const k:bitstring.
const k2:bitstring.
fun f(bitstring):bitstring.
fun g(bitstring, bitstring):bitstring.
fun ok():bitstring.
fun no():bitstring.
table T(bitstring).
table T2(bitstring, bitstring).
event evt(bitstring).
"""


def corpus() -> list[tuple[str, str]]:
    """(name, source) pairs; participant P, driver D."""
    specs: list[tuple[str, str]] = []

    def add(name: str, body: str) -> None:
        specs.append((name, HEADER + body))

    # -- hand-written --------------------------------------------------------
    add(
        "echo",
        """
let P = in(c, x:bitstring); out(c, x).
let D = out(c, k); in(c, y:bitstring); 0.
""",
    )
    add(
        "fresh-reply",
        """
let P = in(c, x:bitstring); new s:bitstring; out(c, s).
let D = out(c, k); in(c, y:bitstring); 0.
""",
    )
    add(
        "eq-const-check",
        """
let P = in(c, (x:bitstring, =k)); out(c, x).
let D = (out(c, (k, k)); in(c, y:bitstring); 0) | (out(c, (k, k2)); in(c, z:bitstring); 0).
""",
    )
    add(
        "nested-eq-check",
        """
let P = in(c, g(x, =k)); out(c, x).
let D = (out(c, g(k2, k)); in(c, y:bitstring); 0) | (out(c, g(k2, k2)); in(c, z:bitstring); 0).
""",
    )
    add(
        "two-branch-echo",
        """
let P = (in(c, x:bitstring); out(c, f(x))) | (in(c2, y:bitstring); out(c2, g(y, k))).
let D = (out(c, k); in(c, a:bitstring); 0) | (out(c2, k2); in(c2, b:bitstring); 0).
""",
    )
    add(
        "session-table",
        """
let P =
  (in(c, x:bitstring); new s:bitstring; insert T2(x, s); out(c, s))
| (in(c2, (x2:bitstring, s2:bitstring)); get T2(=x2, =s2) in out(c2, ok())).
let D =
  out(c, k); in(c, sv:bitstring);
  (out(c2, (k, sv)); in(c2, r:bitstring); 0) | (out(c2, (k, k2)); in(c2, r2:bitstring); 0).
""",
    )
    add(
        "freshness-guard",
        """
let P = in(c, x:bitstring); get T(=x) in 0 else (insert T(x); out(c, ok())).
let D = out(c, k); in(c, y:bitstring); out(c, k); in(c, z:bitstring); 0.
""",
    )
    add(
        "conditional",
        """
let P = in(c, (x:bitstring, y:bitstring)); if x = y then out(c, ok()).
let D = (out(c, (k, k)); in(c, a:bitstring); 0) | (out(c, (k, k2)); in(c, b:bitstring); 0).
""",
    )
    add(
        "event-emission",
        """
let P = in(c, x:bitstring); event evt(x); out(c, f(x)).
let D = out(c, k); in(c, y:bitstring); 0.
""",
    )
    add(
        "delayed-construction",
        """
let P = in(c, x:bitstring); new s:bitstring; let m = g(x, s) in insert T2(x, s); out(c, m).
let D = out(c, k); in(c, y:bitstring); 0.
""",
    )

    # -- generated family ----------------------------------------------------
    # vary: payload arity, check kind, storage, reply freshness
    for arity in (1, 2):
        for check in ("none", "const", "nested"):
            for store in (False, True):
                name = f"gen-a{arity}-{check}-{'tbl' if store else 'plain'}"
                if arity == 1:
                    pat_ok, pat_bad, recv = "k", "k2", "x:bitstring"
                    if check == "const":
                        recv = "=k"
                    elif check == "nested":
                        recv = "f(x)"
                        pat_ok, pat_bad = "f(k)", "k2"
                    reply = "f(k)" if check == "const" else "f(x)"
                else:
                    pat_ok, pat_bad = "(k, k)", "(k, k2)"
                    recv = "(x:bitstring, y:bitstring)"
                    if check == "const":
                        recv = "(x:bitstring, =k)"
                    elif check == "nested":
                        recv = "g(x, =k)"
                        pat_ok, pat_bad = "g(k, k)", "g(k, k2)"
                    reply = "f(x)"
                bound_var = "x" if "x" in recv else "k"
                storage = f"insert T({bound_var}); " if store else ""
                body = f"""
let P = in(c, {recv}); {storage}out(c, {reply}).
let D = (out(c, {pat_ok}); in(c, a:bitstring); 0) | (out(c, {pat_bad}); in(c, b:bitstring); 0).
"""
                add(name, body)
    return specs


def _systems(source: str):
    spec = parse_spec(source)
    p = spec.participant("P")
    d = spec.participant("D")
    driver = instantiate(d, [])
    ideal = [driver, instantiate(p, [])]
    inattentive = make_inattentive(p, spec).participant
    i_only = [driver, instantiate(inattentive, [])]
    monitor = a2m_proxy(p, spec).participant
    monitored = [
        driver,
        rewire_monitored(instantiate(inattentive, []), frozenset(spec.channels), 1),
        instantiate(monitor, []),
    ]
    interp = Interpreter(spec, hidden=frozenset({"mC_1_out", "mC_1_in"}))
    return interp, ideal, i_only, monitored


CORPUS = corpus()


def test_corpus_size():
    assert len(CORPUS) >= 20


@pytest.mark.parametrize("name,source", CORPUS, ids=[n for n, _ in CORPUS])
def test_inattentive_superset(name, source):
    interp, ideal, i_only, _ = _systems(source)
    t_ideal = interp.trace_set(ideal, depth=10)
    t_inattentive = interp.trace_set(i_only, depth=10)
    assert t_ideal <= t_inattentive


@pytest.mark.parametrize("name,source", CORPUS, ids=[n for n, _ in CORPUS])
def test_monitored_trace_equivalence(name, source):
    interp, ideal, _, monitored = _systems(source)
    t_ideal = interp.trace_set(ideal, depth=10)
    t_monitored = interp.trace_set(monitored, depth=10)
    assert t_monitored == t_ideal


def test_relaxation_is_strict_somewhere():
    """The corpus is not vacuous: at least one spec has a strictly larger
    inattentive trace set."""
    strict = 0
    for _, source in CORPUS:
        interp, ideal, i_only, _ = _systems(source)
        if interp.trace_set(ideal, depth=10) < interp.trace_set(i_only, depth=10):
            strict += 1
    assert strict >= 5


def test_protocol_rp_inattentive_superset_depth8():
    """The full login protocol: the inattentive relying party composed with
    the ideal peers accepts at least the ideal traces at depth 8."""
    spec = parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))
    rp = spec.participant("RPApp")
    args = [Const("rphost"), Const("idphost")]
    peers = [
        instantiate(spec.participant("IdPApp"), [Const("idphost")]),
        instantiate(spec.participant("UAApp"), [Const("browser1"), Const("rphost"), Const("idphost")]),
    ]
    interp = Interpreter(spec, hidden=frozenset({"mC_1_out", "mC_1_in"}))
    t_ideal = interp.trace_set(peers + [instantiate(rp, args)], depth=8)
    inattentive = make_inattentive(rp, spec).participant
    t_inattentive = interp.trace_set(peers + [instantiate(inattentive, args)], depth=8)
    assert t_ideal <= t_inattentive


def test_protocol_rp_monitored_equivalence_depth10():
    """Monitored login protocol is trace-equivalent to the ideal one."""
    spec = parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))
    rp = spec.participant("RPApp")
    args = [Const("rphost"), Const("idphost")]
    peers = [
        instantiate(spec.participant("IdPApp"), [Const("idphost")]),
        instantiate(spec.participant("UAApp"), [Const("browser1"), Const("rphost"), Const("idphost")]),
    ]
    interp = Interpreter(spec, hidden=frozenset({"mC_1_out", "mC_1_in"}))
    t_ideal = interp.trace_set(peers + [instantiate(rp, args)], depth=10)
    inattentive = make_inattentive(rp, spec).participant
    monitor = a2m_proxy(rp, spec).participant
    composed = peers + [
        rewire_monitored(instantiate(inattentive, args), frozenset(spec.channels), 1),
        instantiate(monitor, args),
    ]
    t_monitored = interp.trace_set(composed, depth=10)
    assert t_monitored == t_ideal
