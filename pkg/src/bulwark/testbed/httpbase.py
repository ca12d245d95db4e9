"""Minimal in-process HTTP services for the testbed participants."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable
from urllib.parse import parse_qsl, urlsplit

log = logging.getLogger("bulwark.testbed")


@dataclass
class SimRequest:
    method: str
    path: str
    query: dict[str, str]
    form: dict[str, str]
    cookies: dict[str, str]
    headers: dict[str, str]
    body: bytes


@dataclass
class SimResponse:
    status: int = 200
    body: bytes = b""
    headers: list[tuple[str, str]] = field(default_factory=list)

    @staticmethod
    def json(data: dict, status: int = 200, headers: list[tuple[str, str]] | None = None) -> "SimResponse":
        import json as _json

        return SimResponse(
            status,
            _json.dumps(data, separators=(",", ":")).encode(),
            [("Content-Type", "application/json")] + (headers or []),
        )

    @staticmethod
    def text(body: str, status: int = 200, headers: list[tuple[str, str]] | None = None) -> "SimResponse":
        return SimResponse(status, body.encode(), [("Content-Type", "text/plain")] + (headers or []))

    @staticmethod
    def redirect(location: str) -> "SimResponse":
        return SimResponse(302, b"", [("Location", location)])


Handler = Callable[[SimRequest], SimResponse]


class SimService:
    """Loopback HTTP service with path-based routing."""

    def __init__(self, name: str, port: int = 0):
        self.name = name
        self.routes: dict[tuple[str, str], Handler] = {}
        outer = self

        class _Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt: str, *args) -> None:  # noqa: A003
                log.debug(f"{outer.name}: " + fmt, *args)

            def _serve(self) -> None:
                parts = urlsplit(self.path)
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                cookies: dict[str, str] = {}
                for chunk in (self.headers.get("Cookie") or "").split(";"):
                    if "=" in chunk:
                        k, _, v = chunk.partition("=")
                        cookies[k.strip()] = v.strip()
                form: dict[str, str] = {}
                ctype = self.headers.get("Content-Type") or ""
                if ctype.startswith("application/x-www-form-urlencoded"):
                    form = dict(parse_qsl(body.decode("utf-8", "replace")))
                req = SimRequest(
                    method=self.command,
                    path=parts.path,
                    query=dict(parse_qsl(parts.query)),
                    form=form,
                    cookies=cookies,
                    headers={k: v for k, v in self.headers.items()},
                    body=body,
                )
                handler = outer.routes.get((self.command, parts.path))
                if handler is None:
                    resp = SimResponse.text("not found", 404)
                else:
                    try:
                        resp = handler(req)
                    except Exception:  # noqa: BLE001
                        log.exception("%s handler error on %s", outer.name, parts.path)
                        resp = SimResponse.text("internal error", 500)
                self.send_response(resp.status)
                for k, v in resp.headers:
                    self.send_header(k, v)
                self.send_header("Content-Length", str(len(resp.body)))
                self.end_headers()
                self.wfile.write(resp.body)

            do_GET = _serve
            do_POST = _serve

        self._server = ThreadingHTTPServer(("127.0.0.1", port), _Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def route(self, method: str, path: str, handler: Handler) -> None:
        self.routes[(method, path)] = handler

    def start(self) -> None:
        self._thread.start()

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def host(self) -> str:
        return f"127.0.0.1:{self.port}"

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)
