"""HTTP reverse proxy executing a synthesized proxy-monitor process.

The proxy owns the monitored application's listen endpoint: it decodes
each request, dispatches on the monitor's branch patterns, runs the
pre-forward checks (table lookups, equality checks, self-issued
revalidation subrequests), forwards to the upstream application only on
a failure-free path, discharges the response-dependent checks and table
writes, and relays the response. Any failed check yields a generic 403
with an opaque check id in the `X-Bulwark-Check` header; unmonitored
paths pass through unchanged.
"""

from __future__ import annotations

import logging
import threading
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlsplit

import httpx

from .calculus import Process
from .config import AbstractHttpMessage, ProtocolConfig, parse_carrier
from .monitor_exec import Blocked, ProxyEngine
from .runtime import EventTrace, TableStore

log = logging.getLogger("bulwark.proxy")

HOP_HEADERS = {
    "connection",
    "keep-alive",
    "transfer-encoding",
    "te",
    "upgrade",
    "proxy-authorization",
    "proxy-authenticate",
    "host",
    "content-length",
}


def request_to_message(
    method: str,
    url: str,
    headers: list[tuple[str, str]],
    body: bytes,
    host_override: str | None = None,
    session_cookie: str = "session",
) -> AbstractHttpMessage:
    parts = urlsplit(url)
    cookies: list[tuple[str, str]] = []
    for name, value in headers:
        if name.lower() == "cookie":
            try:
                cookies.extend(parse_carrier("cookie", value))
            except Exception:  # noqa: BLE001 - tolerate odd cookie strings
                pass
    return AbstractHttpMessage(
        direction="request",
        method=method,
        scheme="https",
        host=host_override or parts.netloc,
        path=parts.path or "/",
        query=tuple(parse_carrier("query-string", parts.query)) if parts.query else (),
        headers=tuple(headers),
        cookies=tuple(cookies),
        body=body,
        correlation_id=str(uuid.uuid4()),
    )


def response_to_message(
    request: AbstractHttpMessage,
    status: int,
    headers: list[tuple[str, str]],
    body: bytes,
) -> AbstractHttpMessage:
    """Response message carrying the request's address and correlation id,
    with cookies taken from Set-Cookie headers."""
    cookies: list[tuple[str, str]] = []
    for name, value in headers:
        if name.lower() == "set-cookie":
            first = value.split(";", 1)[0]
            if "=" in first:
                k, _, v = first.partition("=")
                cookies.append((k.strip(), v.strip()))
    return AbstractHttpMessage(
        direction="response",
        method=request.method,
        scheme=request.scheme,
        host=request.host,
        path=request.path,
        query=request.query,
        headers=tuple(headers),
        cookies=tuple(cookies),
        body=body,
        status=status,
        correlation_id=request.correlation_id,
    )


class ProxyHandle:
    """A running reverse proxy; stop() shuts it down."""

    def __init__(self, server: ThreadingHTTPServer, engine: ProxyEngine, thread: threading.Thread):
        self._server = server
        self.engine = engine
        self._thread = thread

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def trace(self) -> EventTrace:
        return self.engine.trace

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)


def run_proxy(
    monitor: Process,
    cfg: ProtocolConfig,
    tables: TableStore | None = None,
    trace: EventTrace | None = None,
) -> ProxyHandle:
    """Start the reverse proxy for a monitor process; returns a handle with
    the bound port, the shared tables and the event trace. A table backend
    id of the form `file:<dir>` enables append-only persistence there."""
    if tables is None:
        persist = next(
            (v.split(":", 1)[1] for v in cfg.tables.values() if v.startswith("file:")),
            None,
        )
        if persist:
            tables = TableStore(persist_dir=persist)
    engine = ProxyEngine(monitor, cfg, tables=tables, trace=trace)
    upstream_host, upstream_port = cfg.upstream
    client = httpx.Client(timeout=10.0)

    def forward(msg: AbstractHttpMessage) -> AbstractHttpMessage:
        url = f"http://{upstream_host}:{upstream_port}{msg.path}"
        if msg.query:
            url += "?" + msg.query_string()
        headers = [(k, v) for k, v in msg.headers if k.lower() not in HOP_HEADERS]
        headers.append(("Host", f"{upstream_host}:{upstream_port}"))
        resp = client.request(msg.method, url, headers=headers, content=msg.body)
        return response_to_message(
            msg, resp.status_code, list(resp.headers.multi_items()), resp.content
        )

    def subrequest(msg: AbstractHttpMessage) -> AbstractHttpMessage:
        url = f"http://{msg.host}{msg.path}"
        if msg.query:
            url += "?" + msg.query_string()
        resp = client.request(msg.method, url, headers=list(msg.headers), content=msg.body)
        return response_to_message(
            msg, resp.status_code, list(resp.headers.multi_items()), resp.content
        )

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt: str, *args) -> None:  # noqa: A003
            log.debug("proxy: " + fmt, *args)

        def _handle(self) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            url = f"http://{self.headers.get('Host', '')}{self.path}"
            msg = request_to_message(
                self.command,
                url,
                [(k, v) for k, v in self.headers.items()],
                body,
                session_cookie=cfg.session_cookie,
            )
            try:
                result = engine.handle(msg, forward, subrequest)
            except httpx.HTTPError as exc:
                log.warning("upstream failure: %s", exc)
                self.send_response(502)
                self.send_header("Content-Length", "0")
                self.end_headers()
                return
            if isinstance(result, Blocked):
                check_id = uuid.uuid4().hex[:8]
                log.warning("blocked request %s %s: %s (%s)", msg.method, msg.path, result.reason, result.check_id)
                payload = b"request blocked"
                self.send_response(403)
                self.send_header("X-Bulwark-Check", f"failed {check_id}")
                self.send_header("Content-Type", "text/plain")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)
                return
            if result is None:
                result = forward(msg)  # pass-through for unmonitored paths
            self.send_response(result.status or 200)
            sent = set()
            for k, v in result.headers:
                if k.lower() in HOP_HEADERS or k.lower() == "date":
                    continue
                self.send_header(k, v)
                sent.add(k.lower())
            if "content-length" not in sent:
                self.send_header("Content-Length", str(len(result.body)))
            self.end_headers()
            self.wfile.write(result.body)

        do_GET = _handle
        do_POST = _handle

    server = ThreadingHTTPServer((cfg.listen[0], cfg.listen[1]), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return ProxyHandle(server, engine, thread)
