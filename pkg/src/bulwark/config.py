"""Protocol configuration and wire codecs.

A ProtocolConfig maps the abstract vocabulary of a monitor process to a
concrete HTTP shape: symbols to literal strings (hosts, paths, constants),
constructors to carrier codecs (where the fields travel and how each is
transformed), plus the session cookie name, table storage ids and the
listen/upstream endpoints.

The carrier serializations are the cross-language contract shared with
the browser-side runtime; the conformance corpus pins them byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from urllib.parse import quote, unquote, urlsplit

from .calculus import (
    Bind,
    Const,
    Ctor,
    CtorPat,
    Eq,
    Name,
    Pattern,
    SystemSpec,
    Term,
    Tuple,
    TuplePat,
    Var,
)

CARRIERS = ("query-string", "form-body", "json-body", "path-segment", "header", "cookie")
TRANSFORMS = ("string", "url", "integer")

# symbols every deployment shares unless overridden
BUILTIN_SYMBOLS = {
    "httpGet": "GET",
    "httpPost": "POST",
    "https": "https",
    "nullParams": "",
    "noneUri": "",
    "nullCookiePair": "",
    "notajax": "",
    "unsafeUrl": "unsafe-url",
    "noReferrer": "no-referrer",
}


class CodecError(Exception):
    """Malformed carrier data or an unencodable term."""


class MatchFailure(Exception):
    """A pattern did not match the concrete message (non-fatal: the caller
    tries the next branch or blocks, depending on context)."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


@dataclass(frozen=True)
class Codec:
    carrier: str
    fields: tuple[tuple[str, str], ...]  # (wire-name, transform)

    def __post_init__(self) -> None:
        if self.carrier not in CARRIERS:
            raise CodecError(f"unknown carrier `{self.carrier}`")
        for _, transform in self.fields:
            if transform not in TRANSFORMS:
                raise CodecError(f"unknown transform `{transform}`")


@dataclass(frozen=True)
class ProtocolConfig:
    symbols: dict[str, str] = field(default_factory=dict)
    constructors: dict[str, Codec] = field(default_factory=dict)
    session_cookie: str = "session"
    tables: dict[str, str] = field(default_factory=dict)
    listen: tuple[str, int] = ("127.0.0.1", 0)
    upstream: tuple[str, int] = ("127.0.0.1", 0)
    request_channel: str = "httpServerRequest"
    response_channel: str = "httpServerResponse"

    def symbol(self, name: str) -> str | None:
        if name in self.symbols:
            return self.symbols[name]
        return BUILTIN_SYMBOLS.get(name)

    def codec(self, ctor: str) -> Codec | None:
        return self.constructors.get(ctor)

    @staticmethod
    def from_dict(data: dict) -> "ProtocolConfig":
        ctors = {
            name: Codec(spec["carrier"], tuple((w, t) for w, t in spec["fields"]))
            for name, spec in data.get("constructors", {}).items()
        }
        listen = data.get("listen", {})
        upstream = data.get("upstream", {})
        return ProtocolConfig(
            symbols=dict(data.get("symbols", {})),
            constructors=ctors,
            session_cookie=data.get("session_cookie", "session"),
            tables=dict(data.get("tables", {})),
            listen=(listen.get("host", "127.0.0.1"), int(listen.get("port", 0))),
            upstream=(upstream.get("host", "127.0.0.1"), int(upstream.get("port", 0))),
        )

    def to_dict(self) -> dict:
        return {
            "symbols": dict(self.symbols),
            "constructors": {
                name: {"carrier": c.carrier, "fields": [list(f) for f in c.fields]}
                for name, c in self.constructors.items()
            },
            "session_cookie": self.session_cookie,
            "tables": dict(self.tables),
            "listen": {"host": self.listen[0], "port": self.listen[1]},
            "upstream": {"host": self.upstream[0], "port": self.upstream[1]},
        }

    @staticmethod
    def load(path: str) -> "ProtocolConfig":
        with open(path, encoding="utf-8") as fh:
            return ProtocolConfig.from_dict(json.load(fh))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# HTTP message model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AbstractHttpMessage:
    direction: str  # "request" | "response"
    method: str = "GET"
    scheme: str = "https"
    host: str = ""
    path: str = "/"
    query: tuple[tuple[str, str], ...] = ()  # ordered, repeated keys allowed
    headers: tuple[tuple[str, str], ...] = ()
    cookies: tuple[tuple[str, str], ...] = ()
    body: bytes = b""
    status: int = 0
    correlation_id: str = ""

    def query_string(self) -> str:
        return serialize_carrier("query-string", list(self.query))

    def url(self) -> str:
        qs = self.query_string()
        return f"{self.scheme}://{self.host}{self.path}" + (f"?{qs}" if qs else "")

    def header(self, name: str) -> str | None:
        for k, v in self.headers:
            if k.lower() == name.lower():
                return v
        return None

    def cookie(self, name: str) -> str | None:
        for k, v in self.cookies:
            if k == name:
                return v
        return None


# ---------------------------------------------------------------------------
# Carrier serialization (cross-language contract)
# ---------------------------------------------------------------------------


def _enc(value: str) -> str:
    return quote(value, safe="")


def serialize_carrier(kind: str, items: list[tuple[str, str]]) -> str:
    if kind in ("query-string", "form-body"):
        return "&".join(f"{_enc(k)}={_enc(v)}" for k, v in items)
    if kind == "json-body":
        # raw utf-8, no ascii escaping: the browser-side serializer's shape
        return json.dumps({k: v for k, v in items}, separators=(",", ":"), ensure_ascii=False)
    if kind == "path-segment":
        return "".join("/" + _enc(v) for _, v in items)
    if kind in ("header", "cookie"):
        return "; ".join(f"{k}={_enc(v)}" for k, v in items)
    raise CodecError(f"unknown carrier `{kind}`")


def parse_carrier(kind: str, raw: str, names: list[str] | None = None) -> list[tuple[str, str]]:
    """Parse a carrier's serialized form into an ordered name/value list.
    For path-segment carriers the wire holds only values, so the expected
    field names must be supplied."""
    if kind in ("query-string", "form-body"):
        if raw == "":
            return []
        out = []
        for part in raw.split("&"):
            if "=" not in part:
                raise CodecError(f"malformed pair `{part}`")
            k, _, v = part.partition("=")
            out.append((unquote(k), unquote(v)))
        return out
    if kind == "json-body":
        try:
            data = json.loads(raw) if raw else {}
        except json.JSONDecodeError as exc:
            raise CodecError(f"malformed json body: {exc}") from exc
        if not isinstance(data, dict):
            raise CodecError("json body is not an object")
        return [(k, str(v)) for k, v in data.items()]
    if kind == "path-segment":
        if raw == "":
            parts: list[str] = []
        elif raw.startswith("/"):
            parts = raw.split("/")[1:]
        else:
            parts = raw.split("/")
        segs = [unquote(s) for s in parts]
        if names is None:
            names = [f"seg{i}" for i in range(len(segs))]
        if len(names) != len(segs):
            raise CodecError(f"expected {len(names)} path segments, got {len(segs)}")
        return list(zip(names, segs))
    if kind in ("header", "cookie"):
        if raw.strip() == "":
            return []
        out = []
        for part in raw.split(";"):
            part = part.strip()
            if "=" not in part:
                raise CodecError(f"malformed pair `{part}`")
            k, _, v = part.partition("=")
            out.append((k.strip(), unquote(v)))
        return out
    raise CodecError(f"unknown carrier `{kind}`")


def apply_transform(value: str, transform: str) -> str:
    if transform == "string":
        return value
    if transform == "url":
        if any(c.isspace() for c in value):
            raise CodecError(f"invalid url `{value}`")
        parts = urlsplit(value if "://" in value else f"https://{value}")
        if not parts.netloc:
            raise CodecError(f"invalid url `{value}`")
        return value
    if transform == "integer":
        if not value.lstrip("-").isdigit():
            raise CodecError(f"invalid integer `{value}`")
        return str(int(value))
    raise CodecError(f"unknown transform `{transform}`")


# ---------------------------------------------------------------------------
# Term encoding
# ---------------------------------------------------------------------------

Env = dict[str, object]  # str values and AbstractHttpMessage responses


def term_to_wire(term: Term, env: Env, cfg: ProtocolConfig) -> str:
    """Encode a term to its wire string. Variables come from the binding
    environment; symbols from the configuration."""
    match term:
        case Var(x) | Name(x):
            if x in env:
                value = env[x]
                if not isinstance(value, str):
                    raise CodecError(f"`{x}` is not a scalar value")
                return value
            sym = cfg.symbol(x)
            if sym is None:
                raise CodecError(f"no symbol mapping for `{x}`")
            return sym
        case Const(sym):
            mapped = cfg.symbol(sym)
            if mapped is None:
                raise CodecError(f"no symbol mapping for constant `{sym}`")
            return mapped
        case Ctor("uri", (s, h, p, q)):
            scheme = term_to_wire(s, env, cfg)
            host = term_to_wire(h, env, cfg)
            path = term_to_wire(p, env, cfg)
            query = ""
            if isinstance(q, Ctor) and cfg.codec(q.symbol) is not None:
                codec = cfg.codec(q.symbol)
                if codec.carrier == "query-string":
                    query = encode_fields(q, env, cfg)
                elif codec.carrier == "path-segment":
                    path = path.rstrip("/") + encode_fields(q, env, cfg)
                # body carriers contribute nothing to the url
            else:
                query = term_to_wire(q, env, cfg)
            base = f"{scheme}://{host}{path}"
            return base + (f"?{query}" if query else "")
        case Ctor("getCookie", (arg,)):
            return term_to_wire(arg, env, cfg)
        case Ctor(sym, ()):
            mapped = cfg.symbol(sym)
            if mapped is None:
                raise CodecError(f"no symbol mapping for `{sym}()`")
            return mapped
        case Ctor(sym, _):
            codec = cfg.codec(sym)
            if codec is not None:
                return encode_fields(term, env, cfg)
            raise CodecError(f"cannot encode constructor `{sym}`")
        case Tuple(_):
            raise CodecError("cannot encode a bare tuple to a wire string")
    raise TypeError(term)


def encode_fields(term: Ctor, env: Env, cfg: ProtocolConfig) -> str:
    codec = cfg.codec(term.symbol)
    if codec is None:
        raise CodecError(f"constructor `{term.symbol}` has no codec")
    if len(codec.fields) != len(term.args):
        raise CodecError(
            f"codec for `{term.symbol}` has {len(codec.fields)} fields, "
            f"constructor has {len(term.args)} arguments"
        )
    items = []
    for (wire, transform), arg in zip(codec.fields, term.args):
        items.append((wire, apply_transform(term_to_wire(arg, env, cfg), transform)))
    return serialize_carrier(codec.carrier, items)


def encode(env: Env, term: Term, cfg: ProtocolConfig) -> AbstractHttpMessage:
    """Build a concrete request message from a request tuple
    (uri, headers, method, correlation) or a bare uri term."""
    if isinstance(term, Tuple) and len(term.items) == 4:
        uri_t, _headers_t, method_t, corr_t = term.items
        method = _resolve_method(method_t, env, cfg)
        corr = _maybe_wire(corr_t, env, cfg)
    else:
        uri_t, method, corr = term, "GET", ""
    if isinstance(uri_t, (Var, Name)) and isinstance(env.get(uri_t.ident), str):
        # a uri learned as a wire string: rebuild the request address from it
        parts = urlsplit(str(env[uri_t.ident]))
        return AbstractHttpMessage(
            direction="request",
            method=method,
            scheme=parts.scheme or "https",
            host=parts.netloc,
            path=parts.path or "/",
            query=tuple(parse_carrier("query-string", parts.query)) if parts.query else (),
            correlation_id=corr,
        )
    if not isinstance(uri_t, Ctor) or uri_t.symbol != "uri":
        raise CodecError("request term has no uri constructor")
    scheme = term_to_wire(uri_t.args[0], env, cfg)
    host = term_to_wire(uri_t.args[1], env, cfg)
    path = term_to_wire(uri_t.args[2], env, cfg)
    query: tuple[tuple[str, str], ...] = ()
    headers: list[tuple[str, str]] = []
    body = b""
    q = uri_t.args[3]
    if isinstance(q, Ctor) and cfg.codec(q.symbol) is not None:
        codec = cfg.codec(q.symbol)
        raw = encode_fields(q, env, cfg)
        if codec.carrier == "query-string":
            query = tuple(parse_carrier("query-string", raw))
        elif codec.carrier == "form-body":
            body = raw.encode()
            headers.append(("Content-Type", "application/x-www-form-urlencoded"))
            if method == "GET":
                method = "POST"
        elif codec.carrier == "json-body":
            body = raw.encode()
            headers.append(("Content-Type", "application/json"))
            if method == "GET":
                method = "POST"
        elif codec.carrier == "path-segment":
            path = path.rstrip("/") + raw
        elif codec.carrier == "header":
            headers.append(("X-Params", raw))
        elif codec.carrier == "cookie":
            headers.append(("Cookie", raw))
    elif isinstance(q, (Var, Name)) and str(env.get(_ident(q), "")):
        query = tuple(parse_carrier("query-string", str(env[_ident(q)])))
    return AbstractHttpMessage(
        direction="request",
        method=method,
        scheme=scheme,
        host=host,
        path=path,
        query=query,
        headers=tuple(headers),
        body=body,
        correlation_id=corr,
    )


def _ident(t: Term) -> str:
    assert isinstance(t, (Var, Name))
    return t.ident


def _maybe_wire(t: Term, env: Env, cfg: ProtocolConfig) -> str:
    try:
        return term_to_wire(t, env, cfg)
    except CodecError:
        return ""


def _resolve_method(t: Term, env: Env, cfg: ProtocolConfig) -> str:
    try:
        return term_to_wire(t, env, cfg) or "GET"
    except CodecError:
        return "GET"


# ---------------------------------------------------------------------------
# Pattern decoding
# ---------------------------------------------------------------------------

REQUEST_SLOTS = ("uri", "headers", "method", "corr")
RESPONSE_SLOTS = ("uri", "response", "cookie", "refpol", "corr")


def decode(msg: AbstractHttpMessage, pattern: Pattern, cfg: ProtocolConfig, env: Env | None = None) -> Env:
    """Bind pattern variables from a concrete message (the full request or
    response tuple pattern of a monitor reception). Raises MatchFailure if
    an equality component disagrees with the message."""
    env = dict(env or {})
    if not isinstance(pattern, TuplePat):
        raise CodecError("message pattern must be a tuple pattern")
    slots = REQUEST_SLOTS if msg.direction == "request" else RESPONSE_SLOTS
    if len(pattern.items) != len(slots):
        raise MatchFailure(
            f"pattern has {len(pattern.items)} slots, {msg.direction} has {len(slots)}"
        )
    for slot, comp in zip(slots, pattern.items):
        _decode_slot(msg, slot, comp, cfg, env)
    return env


def _decode_slot(
    msg: AbstractHttpMessage, slot: str, comp: Pattern, cfg: ProtocolConfig, env: Env
) -> None:
    if slot == "uri":
        match_component(msg, msg.url(), comp, cfg, env)
    elif slot == "headers":
        if isinstance(comp, Bind):
            env[comp.ident] = msg.cookie(cfg.session_cookie) or ""
        # equality on raw headers is not a monitored field
    elif slot == "method":
        match_scalar(msg.method, comp, cfg, env, "method")
    elif slot == "corr":
        if isinstance(comp, Bind):
            env[comp.ident] = msg.correlation_id
        elif isinstance(comp, Eq):
            try:
                expected = term_to_wire(comp.term, env, cfg)
            except CodecError:
                expected = ""  # underivable correlation is implicit per request
            if expected and msg.correlation_id and expected != msg.correlation_id:
                raise MatchFailure("correlation mismatch")
    elif slot == "response":
        if isinstance(comp, Bind):
            env[comp.ident] = msg
        else:
            pat = comp.term if isinstance(comp, Eq) else comp
            match_component(msg, msg, _as_pattern(pat), cfg, env)
    elif slot == "cookie":
        if isinstance(comp, Bind):
            env[comp.ident] = msg.cookie(cfg.session_cookie) or ""
    elif slot == "refpol":
        if isinstance(comp, Bind):
            env[comp.ident] = msg.header("Referrer-Policy") or ""
    else:
        raise CodecError(f"unknown slot `{slot}`")


def _as_pattern(p) -> Pattern:
    if isinstance(p, (Bind, Eq, CtorPat, TuplePat)):
        return p
    return _term_pattern(p)


def _term_pattern(t: Term) -> Pattern:
    match t:
        case Ctor(sym, args):
            return CtorPat(sym, tuple(_term_pattern(a) for a in args))
        case _:
            return Eq(t)


def match_scalar(value: str, comp: Pattern, cfg: ProtocolConfig, env: Env, what: str) -> None:
    if isinstance(comp, Bind):
        env[comp.ident] = value
        return
    if isinstance(comp, Eq):
        expected = term_to_wire(comp.term, env, cfg)
        if expected != value:
            raise MatchFailure(f"{what}: expected `{expected}`, got `{value}`")
        return
    raise MatchFailure(f"{what}: unsupported pattern {comp}")


def match_component(
    msg: AbstractHttpMessage | None,
    value: object,
    comp: Pattern,
    cfg: ProtocolConfig,
    env: Env,
) -> None:
    """Match one decoded component. `value` is a wire string, or an
    AbstractHttpMessage when the component is a response body pattern."""
    if isinstance(comp, Bind):
        env[comp.ident] = value
        return
    if isinstance(comp, Eq):
        if isinstance(value, AbstractHttpMessage):
            match_component(msg, value, _term_pattern(comp.term), cfg, env)
            return
        expected = term_to_wire(comp.term, env, cfg)
        if expected != value:
            raise MatchFailure(f"expected `{expected}`, got `{value}`")
        return
    if isinstance(comp, CtorPat):
        _match_ctor(msg, value, comp, cfg, env)
        return
    raise MatchFailure(f"unsupported pattern {comp}")


def _match_ctor(
    msg: AbstractHttpMessage | None,
    value: object,
    comp: CtorPat,
    cfg: ProtocolConfig,
    env: Env,
) -> None:
    sym = comp.symbol
    if sym == "uri":
        if not isinstance(value, str):
            raise MatchFailure("uri pattern against non-url value")
        parts = urlsplit(value if "://" in value else f"//{value}", scheme="https")
        scheme, host = parts.scheme, parts.netloc
        path, qs = parts.path or "/", parts.query
        match_component(msg, scheme, comp.args[0], cfg, env)
        match_component(msg, host, comp.args[1], cfg, env)
        qpat = comp.args[3]
        path_pat = comp.args[2]
        # path-segment params ride on the path itself
        if isinstance(qpat, CtorPat) and (codec := cfg.codec(qpat.symbol)) and codec.carrier == "path-segment":
            base = _expected_path(path_pat, cfg, env)
            if base is not None:
                if not path.startswith(base.rstrip("/") + "/") and path != base:
                    raise MatchFailure(f"path: expected prefix `{base}`, got `{path}`")
                raw = path[len(base.rstrip("/")):]
                match_params(msg, raw, qpat, cfg, env)
                return
        match_component(msg, path, path_pat, cfg, env)
        if isinstance(qpat, CtorPat):
            match_params(msg, qs, qpat, cfg, env)
        else:
            match_component(msg, qs, qpat, cfg, env)
        return
    if sym == "httpOk":
        if not isinstance(value, AbstractHttpMessage):
            raise MatchFailure("status pattern against non-response value")
        if value.status != 200:
            raise MatchFailure(f"expected status 200, got {value.status}")
        _match_page(value, comp.args[0], cfg, env)
        return
    if sym == "httpRedirect":
        if not isinstance(value, AbstractHttpMessage):
            raise MatchFailure("status pattern against non-response value")
        if value.status not in (301, 302, 303, 307, 308):
            raise MatchFailure(f"expected redirect status, got {value.status}")
        location = value.header("Location") or ""
        match_component(None, location, comp.args[0], cfg, env)
        return
    if cfg.codec(sym) is not None:
        if not isinstance(value, str):
            raise MatchFailure(f"params pattern `{sym}` against non-string value")
        match_params(msg, value, comp, cfg, env)
        return
    if not comp.args:
        # zero-argument constructor matched as a literal
        expected = cfg.symbol(sym)
        if expected is None:
            raise CodecError(f"no symbol mapping for `{sym}()`")
        if value != expected:
            raise MatchFailure(f"expected `{expected}`, got `{value}`")
        return
    raise CodecError(f"constructor `{sym}` has no codec")


def _expected_path(path_pat: Pattern, cfg: ProtocolConfig, env: Env) -> str | None:
    if isinstance(path_pat, Eq):
        try:
            return term_to_wire(path_pat.term, env, cfg)
        except CodecError:
            return None
    return None


def _match_page(msg: AbstractHttpMessage, page_pat: Pattern, cfg: ProtocolConfig, env: Env) -> None:
    if isinstance(page_pat, Bind):
        env[page_pat.ident] = msg.body.decode("utf-8", "replace")
        return
    if isinstance(page_pat, Eq):
        expected = term_to_wire(page_pat.term, env, cfg)
        if msg.body.decode("utf-8", "replace") != expected:
            raise MatchFailure("body mismatch")
        return
    assert isinstance(page_pat, CtorPat)
    codec = cfg.codec(page_pat.symbol)
    if codec is None:
        if not page_pat.args:
            expected = cfg.symbol(page_pat.symbol)
            if expected is None:
                raise CodecError(f"no symbol mapping for page `{page_pat.symbol}()`")
            if msg.body.decode("utf-8", "replace") != expected:
                raise MatchFailure(
                    f"body: expected `{expected}`, got `{msg.body.decode('utf-8', 'replace')[:64]}`"
                )
            return
        raise CodecError(f"page constructor `{page_pat.symbol}` has no codec")
    match_params(msg, msg.body.decode("utf-8", "replace"), page_pat, cfg, env)


def match_params(
    msg: AbstractHttpMessage | None,
    raw: str,
    comp: CtorPat,
    cfg: ProtocolConfig,
    env: Env,
) -> None:
    """Decode a params/page constructor from its carrier and match each
    field sub-pattern in order."""
    codec = cfg.codec(comp.symbol)
    if codec is None:
        if not comp.args:
            expected = cfg.symbol(comp.symbol)
            if expected is not None:
                if raw != expected:
                    raise MatchFailure(f"expected `{expected}`, got `{raw}`")
                return
        raise CodecError(f"constructor `{comp.symbol}` has no codec")
    if len(codec.fields) != len(comp.args):
        raise CodecError(
            f"codec for `{comp.symbol}` has {len(codec.fields)} fields, "
            f"pattern has {len(comp.args)}"
        )
    source = raw
    if msg is not None and codec.carrier in ("form-body", "json-body") and msg.direction == "request":
        source = msg.body.decode("utf-8", "replace")
    if msg is not None and codec.carrier == "header":
        source = msg.header("X-Params") or ""
    if msg is not None and codec.carrier == "cookie":
        source = serialize_carrier("cookie", list(msg.cookies))
    try:
        items = parse_carrier(codec.carrier, source, [w for w, _ in codec.fields])
    except CodecError:
        raise
    values = dict(items)
    missing = [w for w, _ in codec.fields if w not in values]
    if missing:
        raise MatchFailure(f"missing fields {missing} in `{comp.symbol}`")
    for (wire, transform), sub in zip(codec.fields, comp.args):
        value = apply_transform(values[wire], transform)
        match_component(msg, value, sub, cfg, env)
