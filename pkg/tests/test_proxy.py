"""Reverse-proxy runtime behavior against a live upstream."""

from __future__ import annotations

import importlib.resources as resources
import threading
from dataclasses import replace

import httpx
import pytest

from bulwark.parser import parse_spec_file
from bulwark.proxy import run_proxy
from bulwark.runtime import EventTrace
from bulwark.testbed.httpbase import SimRequest, SimResponse, SimService
from bulwark.testbed.runner import oauth_monitor_config
from bulwark.transform import a2m_proxy

SPEC_DIR = resources.files("bulwark").joinpath("specs")


@pytest.fixture()
def proxy():
    """Fake relying party + token endpoint behind the synthesized proxy."""
    spec = parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))
    monitor = a2m_proxy(spec.participant("RPApp"), spec).participant

    idp = SimService("idp")
    idp.route("GET", "/token", lambda req: SimResponse.json({"access_token": "tok-1"}))
    idp.start()

    upstream = SimService("upstream")
    seen: list[str] = []
    public_box = [""]

    def login(req: SimRequest) -> SimResponse:
        seen.append(req.path)
        link = (
            f"https://{idp.host}/dialog?client_id=390639"
            f"&redirect_uri=https%3A%2F%2F{public_box[0]}%2Ffb-callback&state=s-123"
        )
        return SimResponse.json(
            {"link": link}, headers=[("Set-Cookie", "session=sid-1; Path=/")]
        )

    def callback(req: SimRequest) -> SimResponse:
        seen.append(req.path)
        return SimResponse.text("Logged in")

    def other(req: SimRequest) -> SimResponse:
        seen.append(req.path)
        return SimResponse.text("static asset")

    upstream.route("GET", "/login", login)
    upstream.route("GET", "/fb-callback", callback)
    upstream.route("GET", "/other", other)
    upstream.start()
    upstream.seen = seen  # type: ignore[attr-defined]

    trace = EventTrace()
    cfg = oauth_monitor_config("placeholder", idp.host, stateless=False)
    cfg = replace(cfg, upstream=("127.0.0.1", upstream.port))
    handle = run_proxy(monitor.body, cfg, trace=trace)
    public = f"127.0.0.1:{handle.port}"
    public_box[0] = public
    cfg.symbols["h"] = public  # the dispatch host is the proxy's own address
    yield handle, public, upstream, trace
    handle.stop()
    upstream.stop()
    idp.stop()


def test_unmonitored_path_passes_through(proxy):
    handle, public, upstream, _ = proxy
    r = httpx.get(f"http://{public}/other")
    assert r.status_code == 200 and r.text == "static asset"
    assert upstream.seen == ["/other"]


def test_honest_login_and_callback_relayed(proxy):
    handle, public, upstream, trace = proxy
    client = httpx.Client()
    r1 = client.get(f"http://{public}/login")
    assert r1.status_code == 200
    assert "link" in r1.json()
    sid = r1.cookies.get("session")
    assert sid == "sid-1"
    # the monitor learned the state from the relayed response
    rows = handle.engine.tables.table("MRPSessions").rows()
    assert ("sid-1", "s-123") in rows

    r2 = client.get(
        f"http://{public}/fb-callback",
        params={"code": "c-1", "state": "s-123"},
        cookies={"session": "sid-1"},
    )
    assert r2.status_code == 200 and r2.text == "Logged in"
    assert upstream.seen == ["/login", "/fb-callback"]
    symbols = [e.symbol for e in trace.events()]
    assert "rp_begin" in symbols and "rp_end" in symbols


def test_stale_state_blocked_fail_closed(proxy):
    handle, public, upstream, _ = proxy
    client = httpx.Client()
    client.get(f"http://{public}/login")
    r = client.get(
        f"http://{public}/fb-callback",
        params={"code": "c-1", "state": "someone-elses"},
        cookies={"session": "sid-1"},
    )
    assert r.status_code == 403
    assert r.headers.get("X-Bulwark-Check", "").startswith("failed ")
    assert r.text == "request blocked"
    # fail closed: the callback never reached the application
    assert "/fb-callback" not in upstream.seen


def test_table_isolation(proxy):
    """Sessions with distinct cookies never satisfy each other's lookup."""
    handle, public, upstream, _ = proxy
    client = httpx.Client()
    client.get(f"http://{public}/login")  # stores (sid-1, s-123)
    r = client.get(
        f"http://{public}/fb-callback",
        params={"code": "c-1", "state": "s-123"},
        cookies={"session": "other-session"},
    )
    assert r.status_code == 403


def test_upstream_unreachable_is_502():
    spec = parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))
    monitor = a2m_proxy(spec.participant("RPApp"), spec).participant
    cfg = oauth_monitor_config("placeholder", "idp.example", stateless=False)
    cfg = replace(cfg, upstream=("127.0.0.1", 1))  # nothing listens there
    handle = run_proxy(monitor.body, cfg)
    try:
        cfg.symbols["h"] = f"127.0.0.1:{handle.port}"
        r = httpx.get(f"http://127.0.0.1:{handle.port}/login")
        assert r.status_code == 502
    finally:
        handle.stop()


def test_concurrent_requests(proxy):
    handle, public, upstream, _ = proxy
    errors: list[Exception] = []

    def worker():
        try:
            r = httpx.get(f"http://{public}/other")
            assert r.status_code == 200
        except Exception as exc:  # noqa: BLE001
            errors.append(exc)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
