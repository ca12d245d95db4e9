"""Scripted user agent: cookie jar, redirect following, and per-origin
service-worker monitors wrapped around its fetches."""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field
from urllib.parse import urlsplit

import httpx

from ..config import AbstractHttpMessage, parse_carrier
from ..monitor_exec import Blocked, SwEngine, SwPending
from ..proxy import response_to_message


@dataclass
class FetchResult:
    status: int
    body: str
    url: str
    headers: dict[str, str] = field(default_factory=dict)
    blocked: bool = False

    def json(self) -> dict:
        import json

        return json.loads(self.body)


class Browser:
    """One browser session: isolated cookie jar, service workers keyed by
    registered origin host."""

    def __init__(self, browser_id: str | None = None):
        self.id = browser_id or f"b-{uuid.uuid4().hex[:8]}"
        self.jar: dict[str, dict[str, str]] = {}
        self.workers: dict[str, SwEngine] = {}
        self._client = httpx.Client(timeout=10.0)

    def register_worker(self, origin_host: str, engine: SwEngine) -> None:
        self.workers[origin_host] = engine

    def close(self) -> None:
        self._client.close()

    # -- fetching -----------------------------------------------------------

    def fetch(
        self,
        method: str,
        url: str,
        data: dict[str, str] | None = None,
        follow_redirects: bool = True,
        max_hops: int = 5,
    ) -> FetchResult:
        result = self._fetch_once(method, url, data)
        hops = 0
        while follow_redirects and result.status in (301, 302, 303, 307, 308) and hops < max_hops:
            location = result.headers.get("location")
            if not location:
                break
            result = self._fetch_once("GET", location, None)
            hops += 1
        return result

    def _fetch_once(self, method: str, url: str, data: dict[str, str] | None) -> FetchResult:
        parts = urlsplit(url)
        host = parts.netloc
        body = b""
        headers: dict[str, str] = {}
        if data is not None:
            body = str(httpx.QueryParams(data)).encode()
            headers["Content-Type"] = "application/x-www-form-urlencoded"

        engine = self.workers.get(host)
        pending: SwPending | None = None
        if engine is not None:
            msg = self._as_message(method, parts, body)
            decision = engine.process_request(msg)
            if isinstance(decision, Blocked):
                return FetchResult(403, "blocked by service worker", url, blocked=True)
            if isinstance(decision, SwPending):
                pending = decision

        cookies = self.jar.get(host, {})
        if cookies:
            headers["Cookie"] = "; ".join(f"{k}={v}" for k, v in cookies.items())
        target = url.replace("https://", "http://", 1)
        resp = self._client.request(method, target, headers=headers, content=body)
        for value in resp.headers.get_list("set-cookie"):
            first = value.split(";", 1)[0]
            if "=" in first:
                k, _, v = first.partition("=")
                self.jar.setdefault(host, {})[k.strip()] = v.strip()

        if pending is not None and engine is not None:
            req_msg = self._as_message(method, parts, body)
            resp_msg = response_to_message(
                req_msg, resp.status_code, list(resp.headers.multi_items()), resp.content
            )
            outcome = engine.process_response(pending, resp_msg)
            if isinstance(outcome, Blocked):
                return FetchResult(403, "blocked by service worker", url, blocked=True)
        return FetchResult(
            resp.status_code,
            resp.text,
            url,
            {k.lower(): v for k, v in resp.headers.items()},
        )

    def _as_message(self, method: str, parts, body: bytes) -> AbstractHttpMessage:
        return AbstractHttpMessage(
            direction="request",
            method=method,
            scheme="https",
            host=parts.netloc,
            path=parts.path or "/",
            query=tuple(parse_carrier("query-string", parts.query)) if parts.query else (),
            headers=(("Content-Type", "application/x-www-form-urlencoded"),) if body else (),
            body=body,
            correlation_id=str(uuid.uuid4()),
        )
