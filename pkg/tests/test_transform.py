"""Monitor synthesis: inattentive derivation, proxy and worker generation,
the optimizer, and the deployment search."""

from __future__ import annotations

import importlib.resources as resources

import pytest

from bulwark.calculus import (
    Bind,
    Ctor,
    CtorPat,
    Eq,
    Event,
    Get,
    In,
    Insert,
    Let,
    Name,
    New,
    Nil,
    Out,
    Par,
    Participant,
    Process,
    Var,
    alpha_equiv,
    check_process,
    free_names,
    pattern_binds,
    pattern_eq_terms,
    pretty_print,
)
from bulwark.parser import parse_spec, parse_spec_file
from bulwark.transform import (
    DeploymentOption,
    NoSecurePlacement,
    ThreatModel,
    UndischargeableError,
    UnobservableCheckError,
    a2m_proxy,
    a2m_sw,
    enumerate_options,
    make_inattentive,
    optimize_process,
    search_deployment,
    term_known,
)

SPEC_DIR = resources.files("bulwark").joinpath("specs")


@pytest.fixture(scope="module")
def oauth():
    return parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))


@pytest.fixture(scope="module")
def paypal():
    return parse_spec_file(str(SPEC_DIR / "paypal.bw.pv"))


def _walk(p: Process):
    yield p
    for attr in ("body", "then", "orelse", "left", "right"):
        child = getattr(p, attr, None)
        if child is not None:
            yield from _walk(child)


# ---------------------------------------------------------------------------
# make_inattentive
# ---------------------------------------------------------------------------


def test_inattentive_rp_drops_storage_keeps_dispatch(oauth):
    rp = oauth.participant("RPApp")
    result = make_inattentive(rp, oauth)
    body = result.participant.body

    assert not any(isinstance(n, (Insert, Get)) for n in _walk(body))
    kinds = {r.kind for r in result.removed}
    assert "insert" in kinds and "get" in kinds

    # both URL-path dispatches survive with their equality positions
    dispatches = [
        n
        for n in _walk(body)
        if isinstance(n, Let)
        and isinstance(n.pattern, CtorPat)
        and n.pattern.symbol == "uri"
    ]
    assert len(dispatches) == 2
    for d in dispatches:
        path_pos = d.pattern.args[2]
        assert isinstance(path_pos, Eq)

    # the method equality inside the receptions is relaxed to a bind
    for n in _walk(body):
        if isinstance(n, In):
            assert not pattern_eq_terms(n.pattern), "reception equality not relaxed"


def test_inattentive_nested_selector_eq_relaxed(oauth):
    """An equality nested below the path dispatch (inside the parameter
    pattern) is a value check, not routing, and is relaxed."""
    src = """
type Host. type Uri. type Scheme. type Path. type Params.
free c:channel.
const h0:Host.
fun https():Scheme.
fun p():Path.
fun uri(Scheme, Host, Path, Params):Uri.
fun params(bitstring, bitstring):Params.
const fixed:bitstring.
let P(h:Host) =
  in(c, u:Uri);
  let uri(=https(), =h, =p(), params(x, =fixed)) = u in
  out(c, x).
"""
    spec = parse_spec(src)
    result = make_inattentive(spec.participant("P"), spec)
    dispatch = next(
        n for n in _walk(result.participant.body) if isinstance(n, Let)
    )
    params_pat = dispatch.pattern.args[3]
    assert isinstance(params_pat, CtorPat)
    assert isinstance(params_pat.args[0], Bind)
    assert isinstance(params_pat.args[1], Bind), "nested value equality must relax"
    # routing equalities at the dispatch top level are retained
    assert isinstance(dispatch.pattern.args[2], Eq)


def test_inattentive_identity_when_no_checks():
    src = """
free c:channel.
let P =
  in(c, x:bitstring);
  new y:bitstring;
  out(c, y).
"""
    spec = parse_spec(src)
    p = spec.participant("P")
    result = make_inattentive(p, spec)
    assert alpha_equiv(result.participant.body, p.body)
    assert result.removed == ()


def test_inattentive_interoperable_io_sequence(oauth):
    """Reception/emission sequence per branch is unchanged."""
    rp = oauth.participant("RPApp")
    ina = make_inattentive(rp, oauth).participant

    def io_shape(p: Process) -> list[str]:
        out = []
        for n in _walk(p):
            if isinstance(n, In):
                out.append("in")
            elif isinstance(n, Out):
                out.append("out")
        return out

    assert io_shape(rp.body) == io_shape(ina.body)


# ---------------------------------------------------------------------------
# a2m proxy
# ---------------------------------------------------------------------------


def test_a2m_nil_is_nil():
    spec = parse_spec("let P = 0.")
    result = a2m_proxy(spec.participant("P"), spec)
    assert result.participant.body == Nil()


def test_a2m_proxy_matches_golden(oauth):
    golden = parse_spec_file(str(SPEC_DIR / "golden_rp_proxy.bw.pv"))
    result = a2m_proxy(oauth.participant("RPApp"), oauth)
    assert alpha_equiv(result.participant.body, golden.participant("RPProxy").body)


def test_a2m_proxy_check_ordering(oauth):
    """The session insert happens only after the monitor has received the
    state value from the application; the session lookup precedes the
    callback forward."""
    result = a2m_proxy(oauth.participant("RPApp"), oauth)
    branches = _branches(result.participant.body)

    login = branches[0]
    seq = [type(n).__name__ for n in _linear(login)]
    recv_idx = [i for i, n in enumerate(_linear(login)) if isinstance(n, In)]
    insert_idx = [i for i, n in enumerate(_linear(login)) if isinstance(n, Insert)]
    assert len(recv_idx) == 2 and len(insert_idx) == 1
    assert insert_idx[0] > recv_idx[1], "insert must follow the relayed response"

    callback = branches[1]
    linear = _linear(callback)
    get_idx = [i for i, n in enumerate(linear) if isinstance(n, Get)]
    fwd_idx = [
        i
        for i, n in enumerate(linear)
        if isinstance(n, Out) and isinstance(n.channel, Name) and n.channel.ident.startswith("mC_")
    ]
    assert get_idx and fwd_idx
    assert get_idx[0] < fwd_idx[0], "session lookup must precede the forward"


def _branches(p: Process) -> list[Process]:
    while isinstance(p, Let) and p.orelse is None:
        p = p.then
    out = []

    def collect(q: Process) -> None:
        if isinstance(q, Par):
            collect(q.left)
            collect(q.right)
        else:
            out.append(q)

    collect(p)
    return out


def _linear(p: Process) -> list[Process]:
    out = []
    while not isinstance(p, Nil):
        out.append(p)
        nxt = getattr(p, "body", None) or getattr(p, "then", None)
        if nxt is None:
            break
        p = nxt
    return out


def test_check_centralization_census(oauth):
    """Every insert/get/equality removed from the inattentive participant
    occurs, up to renaming, in the proxy monitor."""
    rp = oauth.participant("RPApp")
    removed = make_inattentive(rp, oauth).removed
    monitor = a2m_proxy(rp, oauth).participant.body

    inserts = [n for n in _walk(monitor) if isinstance(n, Insert)]
    gets = [n for n in _walk(monitor) if isinstance(n, Get)]
    eq_terms = []
    for n in _walk(monitor):
        if isinstance(n, Let):
            eq_terms.extend(str(t) for t in pattern_eq_terms(n.pattern))
        if isinstance(n, In):
            eq_terms.extend(str(t) for t in pattern_eq_terms(n.pattern))

    for r in removed:
        if r.kind == "insert":
            table = r.detail.split("(")[0]
            assert any(i.table == "M" + table for i in inserts), r
        elif r.kind == "get":
            table = r.detail.split("(")[0]
            assert any(g.table == "M" + table for g in gets), r
        elif r.kind == "eq":
            assert any(r.detail == t for t in eq_terms), r


def test_knowledge_soundness(oauth, paypal):
    """At every emitted check, the values the check needs are bound at that
    program point: the monitor is a well-formed process over the monitor
    vocabulary."""
    from bulwark.transform import emit_monitor_spec

    for spec, name in ((oauth, "RPApp"), (oauth, "IdPApp"), (paypal, "ShopApp")):
        result = a2m_proxy(spec.participant(name), spec)
        mon_spec = emit_monitor_spec(spec, result.participant, "proxy")
        bound = frozenset(n for n, _ in result.participant.params)
        check_process(mon_spec, result.participant.body, bound)


def test_keyed_signature_check_is_undischargeable(paypal):
    """The payment provider's own signature check needs the signing key,
    which no monitor can reproduce: synthesis reports the expression."""
    with pytest.raises(UndischargeableError) as err:
        a2m_proxy(paypal.participant("PayPalApp"), paypal)
    assert "mac" in str(err.value)


def test_delayed_order_preserved(oauth):
    """Expressions delayed together discharge in their original order:
    the session insert precedes the protocol-start event."""
    result = a2m_proxy(oauth.participant("RPApp"), oauth)
    login = _branches(result.participant.body)[0]
    linear = _linear(login)
    insert_idx = next(i for i, n in enumerate(linear) if isinstance(n, Insert))
    event_idx = next(i for i, n in enumerate(linear) if isinstance(n, Event))
    assert insert_idx < event_idx


def test_undischargeable_delayed_expression_reported():
    src = """
free c:channel.
fun secretbox(bitstring):bitstring [private].
table T(bitstring).
let P =
  in(c, x:bitstring);
  new k:bitstring;
  insert T(secretbox(k));
  out(c, x).
"""
    spec = parse_spec(src)
    with pytest.raises(UndischargeableError) as err:
        a2m_proxy(spec.participant("P"), spec)
    assert "insert T" in str(err.value)


def test_optimizer_removes_unused_and_fuses_aliases():
    src = """
free c:channel.
fun f(bitstring):bitstring.
let P =
  in(c, x:bitstring);
  let unused = f(x) in
  let alias = x in
  out(c, f(alias)).
"""
    spec = parse_spec(src)
    body = spec.participant("P").body
    opt = optimize_process(body)
    lets = [n for n in _walk(opt) if isinstance(n, Let)]
    assert not lets
    out = next(n for n in _walk(opt) if isinstance(n, Out))
    assert out.message == Ctor("f", (Var("x"),))


# ---------------------------------------------------------------------------
# a2m service worker
# ---------------------------------------------------------------------------


def test_a2m_sw_matches_golden(oauth):
    golden = parse_spec_file(str(SPEC_DIR / "golden_rp_sw.bw.pv"))
    result = a2m_sw(oauth.participant("RPApp"), oauth.participant("UAApp"), oauth)
    assert alpha_equiv(result.participant.body, golden.participant("RPServiceWorker").body)


def test_a2m_sw_browser_handle_keying(oauth):
    result = a2m_sw(oauth.participant("RPApp"), oauth.participant("UAApp"), oauth)
    body = result.participant.body
    inserts = [n for n in _walk(body) if isinstance(n, Insert)]
    gets = [n for n in _walk(body) if isinstance(n, Get)]
    assert inserts and inserts[0].args[0] == Var("b")
    assert gets and gets[0].patterns[0] == Eq(Var("b"))


def test_a2m_sw_no_back_channel(oauth):
    result = a2m_sw(oauth.participant("RPApp"), oauth.participant("UAApp"), oauth)
    body = result.participant.body
    for n in _walk(body):
        if isinstance(n, (In, Out)):
            chan = n.channel
            assert isinstance(chan, Ctor), f"non-fetch channel {chan}"
            assert chan.symbol in {
                "serviceWorkerFetch",
                "rawRequest",
                "serviceWorkerResult",
                "serviceWorkerSendHttpResponse",
            }
    # the token exchange is gone entirely
    assert "tokenpath" not in pretty_print(body)
    assert "appsecret" not in pretty_print(body)


def test_a2m_sw_splices_ua_success_check(oauth):
    result = a2m_sw(oauth.participant("RPApp"), oauth.participant("UAApp"), oauth)
    text = pretty_print(result.participant.body)
    assert "httpOk(success())" in text


def test_a2m_sw_back_channel_only_check_is_an_error():
    """A participant whose only check concerns a back-channel response
    cannot be monitored from the client."""
    src = """
type Uri. type Scheme. type Path. type Params. type Host.
type Headers. type HttpRequest. type HttpResponse. type CookiePair. type ReferrerPolicy.
type Browser. type Page. type Ajax.
free httpServerRequest:channel.
free httpServerResponse:channel.
const h0:Host.
const peer:Host.
const noneUri:Uri.
fun https():Scheme.
fun apath():Path.
fun ppath():Path.
fun nullParams():Params.
fun uri(Scheme, Host, Path, Params):Uri.
fun httpGet():HttpRequest.
fun httpOk(Page):HttpResponse.
fun okpage():Page.
fun verified():Page.
fun headers(Uri, CookiePair, Ajax):Headers.
fun notajax():Ajax.
fun nullCookiePair():CookiePair.
fun noReferrer():ReferrerPolicy.
let Server(h:Host) [role=RP] =
  in(httpServerRequest, (u:Uri, hs:Headers, =httpGet(), corr:bitstring));
  let uri(=https(), =h, =apath(), =nullParams()) = u in
  let vuri = uri(https(), peer, ppath(), nullParams()) in
  new vcorr:bitstring;
  out(httpServerRequest, (vuri, headers(noneUri, nullCookiePair(), notajax()), httpGet(), vcorr));
  in(httpServerResponse, (=vuri, =httpOk(verified()), vcp:CookiePair, vrp:ReferrerPolicy, =vcorr));
  out(httpServerResponse, (u, httpOk(okpage()), nullCookiePair(), noReferrer(), corr)).
let Client(b:Browser, h:Host) [role=UA] =
  new corr1:bitstring;
  out(httpServerRequest, (uri(https(), h, apath(), nullParams()), headers(noneUri, nullCookiePair(), notajax()), httpGet(), corr1));
  in(httpServerResponse, (u2:Uri, r2:HttpResponse, cp2:CookiePair, rp2:ReferrerPolicy, =corr1));
  0.
"""
    spec = parse_spec(src)
    with pytest.raises(UnobservableCheckError) as err:
        a2m_sw(spec.participant("Server"), spec.participant("Client"), spec)
    assert "unobservable at client" in str(err.value)


def test_a2m_sw_reports_code_binding_unobservable(oauth):
    """The provider's code-to-redirect-URI binding lives on the token
    endpoint, which the client never fetches: the worker builds but the
    binding lookup is reported unobservable."""
    result = a2m_sw(oauth.participant("IdPApp"), oauth.participant("UAApp"), oauth)
    assert any("tokenpath" in w or "MCodeBindings" in w for w in result.warnings)
    body_text = pretty_print(result.participant.body)
    assert "MCodeBindings(=code" not in body_text


# ---------------------------------------------------------------------------
# deployment search
# ---------------------------------------------------------------------------


def test_search_empty_inattentive_returns_no_monitors(oauth):
    def boom(*args):
        raise AssertionError("verifier must not run")

    result = search_deployment(oauth, frozenset(), ThreatModel(), boom)
    assert result.monitors == {}
    assert result.option.placements == ()


def test_enumerate_options_orders_by_ease():
    options = enumerate_options(("A",))
    assert [o.placements[0][1] for o in options] == ["sw", "proxy", "both"]
    options2 = enumerate_options(("A", "B"))
    scores = [o.ease_score for o in options2]
    assert scores == sorted(scores)
    assert options2[0].placements == (("A", "sw"), ("B", "sw"))


def test_search_returns_minimum_score_acceptance(oauth):
    """Monotonicity: with an oracle accepting a known set of options, the
    search returns the accepted option with the least ease score."""
    accepted = {(("RPApp", "proxy"),), (("RPApp", "both"),)}

    calls = []

    def oracle(spec, inattentive, option, monitors, threat):
        calls.append(option.placements)
        return option.placements in accepted, "nope"

    result = search_deployment(oauth, {"RPApp"}, ThreatModel(), oracle)
    assert result.option.placements == (("RPApp", "proxy"),)
    min_score = min(
        DeploymentOption(p).ease_score for p in accepted
    )
    assert result.option.ease_score == min_score
    assert result.rejected[0][0].placements == (("RPApp", "sw"),)


def test_search_no_secure_placement(oauth):
    def oracle(spec, inattentive, option, monitors, threat):
        return False, "always rejected"

    with pytest.raises(NoSecurePlacement):
        search_deployment(oauth, {"RPApp"}, ThreatModel(), oracle)


def test_untrusted_client_elides_sw_monitors(oauth):
    seen = []

    def oracle(spec, inattentive, option, monitors, threat):
        seen.append((option.placements, tuple(sorted(monitors))))
        return option.placement_of("RPApp") == "proxy", None

    result = search_deployment(
        oauth, {"RPApp"}, ThreatModel(client_trusted=False), oracle
    )
    sw_only_run = next(s for s in seen if s[0] == (("RPApp", "sw"),))
    assert sw_only_run[1] == (), "sw monitors must be elided under an untrusted client"
    assert result.option.placements == (("RPApp", "proxy"),)
