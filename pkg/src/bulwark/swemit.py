"""Service-worker code generation.

Compiles a service-worker monitor process plus its protocol configuration
into a self-contained fetch-interception script. Codegen is template
based: one emission rule per pipeline construct, all data handling
delegated to the browser-side support library (carrier codecs, the
persistent table shim, the blocked-response builder) loaded via
importScripts.

Dispatch semantics match the abstract interpreter: a request that fails
the route conditions (method, host, path, parameter structure) falls
through to a plain fetch; a request inside a monitored branch that fails
any check is answered with a synthetic blocked response without
contacting the server.
"""

from __future__ import annotations

import json

from .calculus import Bind, Const, Ctor, CtorPat, Eq, Name, Pattern, Process, Term, TuplePat, Var
from .config import BUILTIN_SYMBOLS, ProtocolConfig
from .monitor_exec import (
    CheckOp,
    CompiledSwBranch,
    EventOp,
    GetOp,
    InsertOp,
    MonitorCompileError,
    PipelineOp,
    compile_sw,
)

SUPPORT_GLOBAL = "BulwarkSW"
DEFAULT_WORKER_NAME = "bulwark-sw.js"
DEFAULT_SUPPORT_NAME = "bulwark-sw-support.js"


class UnsupportedConstruct(MonitorCompileError):
    """The monitor references channels outside the service-worker set."""


class _Emitter:
    def __init__(self, cfg: ProtocolConfig):
        self.cfg = cfg
        self.counter = 0
        self.lines: list[str] = []

    def fresh(self, prefix: str) -> str:
        self.counter += 1
        return f"{prefix}_{self.counter}"

    def emit(self, line: str, indent: int) -> None:
        self.lines.append("  " * indent + line)

    # -- terms ----------------------------------------------------------------

    def term_js(self, t: Term) -> str:
        match t:
            case Var(x) | Name(x):
                if self.cfg.symbol(x) is not None and x != "b":
                    return f"SYMBOLS[{json.dumps(x)}]"
                return f"ctx[{json.dumps(x)}]"
            case Const(sym):
                return f"SYMBOLS[{json.dumps(sym)}]"
            case Ctor("uri", (s, h, p, q)):
                base = f"{self.term_js(s)} + {json.dumps('://')} + {self.term_js(h)} + {self.term_js(p)}"
                if isinstance(q, Ctor) and self.cfg.codec(q.symbol) is not None:
                    codec = self.cfg.codec(q.symbol)
                    if codec.carrier == "query-string":
                        return f"({base} + S.encodeQuery({self.fields_js(q)}))"
                    return f"({base})"
                return f"({base} + S.maybeQuery({self.term_js(q)}))"
            case Ctor("getCookie", (arg,)):
                return self.term_js(arg)
            case Ctor(sym, ()):
                return f"SYMBOLS[{json.dumps(sym)}]"
            case Ctor(sym, _):
                codec = self.cfg.codec(sym)
                if codec is None:
                    raise UnsupportedConstruct(f"cannot encode constructor `{sym}`")
                return f"S.serializeCarrier({json.dumps(codec.carrier)}, {self.fields_js(t)})"
        raise UnsupportedConstruct(f"cannot emit term {t}")

    def fields_js(self, t: Ctor) -> str:
        codec = self.cfg.codec(t.symbol)
        assert codec is not None
        pairs = ", ".join(
            f"[{json.dumps(wire)}, {self.term_js(arg)}]"
            for (wire, _), arg in zip(codec.fields, t.args)
        )
        return f"[{pairs}]"

    # -- patterns ----------------------------------------------------------------

    def match_pattern(
        self,
        value_expr: str,
        pattern: Pattern,
        indent: int,
        on_fail: str,
        is_url: bool = False,
    ) -> None:
        """Emit statements binding ctx entries and guarding equalities."""
        match pattern:
            case Bind(x, _):
                self.emit(f"ctx[{json.dumps(x)}] = {value_expr};", indent)
            case Eq(t):
                self.emit(f"if (!S.eq({value_expr}, {self.term_js(t)})) {on_fail}", indent)
            case CtorPat("uri", args):
                u = self.fresh("u")
                self.emit(f"const {u} = S.parseUrl({value_expr});", indent)
                self.emit(f"if ({u} === null) {on_fail}", indent)
                self.match_pattern(f"{u}.scheme", args[0], indent, on_fail)
                self.match_pattern(f"{u}.host", args[1], indent, on_fail)
                self.match_pattern(f"{u}.path", args[2], indent, on_fail)
                qpat = args[3]
                if isinstance(qpat, CtorPat) and self.cfg.codec(qpat.symbol):
                    self.match_params(f"{u}.query", qpat, indent, on_fail)
                else:
                    self.match_pattern(f"{u}.query", qpat, indent, on_fail)
            case CtorPat(sym, args) if self.cfg.codec(sym) is not None:
                self.match_params(value_expr, pattern, indent, on_fail)
            case CtorPat(sym, ()):
                self.emit(
                    f"if (!S.eq({value_expr}, SYMBOLS[{json.dumps(sym)}])) {on_fail}", indent
                )
            case CtorPat(sym, _):
                raise UnsupportedConstruct(f"pattern constructor `{sym}` has no codec")
            case TuplePat(_):
                raise UnsupportedConstruct("tuple pattern outside a reception")

    def emit_params_check(self, branch, indent: int, on_fail: str) -> None:
        """Match the dispatch's parameter pattern against the bound query
        string (the routing guard bound it under __params)."""
        params = branch.params_check
        if isinstance(params, Bind):
            return
        raw = 'ctx["__params"]'
        if isinstance(params, CtorPat) and self.cfg.codec(params.symbol) is not None:
            codec = self.cfg.codec(params.symbol)
            if codec.carrier in ("form-body", "json-body"):
                self.emit(f"const reqBody = await request.clone().text();", indent)
                raw = "reqBody"
            self.match_params(raw, params, indent, on_fail)
            return
        self.match_pattern(raw, params, indent, on_fail)

    def match_params(self, raw_expr: str, pattern: CtorPat, indent: int, on_fail: str) -> None:
        codec = self.cfg.codec(pattern.symbol)
        assert codec is not None
        f = self.fresh("f")
        self.emit(
            f"const {f} = S.decodeFields(CODECS[{json.dumps(pattern.symbol)}], {raw_expr});",
            indent,
        )
        self.emit(f"if ({f} === null) {on_fail}", indent)
        for (wire, _), sub in zip(codec.fields, pattern.args):
            self.match_pattern(f"{f}[{json.dumps(wire)}]", sub, indent, on_fail)

    # -- response patterns ---------------------------------------------------------

    def match_response(self, pattern: Pattern, indent: int, on_fail: str) -> None:
        """Match an httpOk/httpRedirect pattern against `response`/`bodyText`."""
        match pattern:
            case CtorPat("httpOk", (page,)):
                self.emit(f"if (response.status !== 200) {on_fail}", indent)
                self.match_page(page, indent, on_fail)
            case CtorPat("httpRedirect", (target,)):
                self.emit(f"if (![301,302,303,307,308].includes(response.status)) {on_fail}", indent)
                loc = self.fresh("loc")
                self.emit(f"const {loc} = response.headers.get('Location') || '';", indent)
                self.match_pattern(loc, target, indent, on_fail)
            case Eq(Ctor("httpOk", (page,))):
                self.match_response(CtorPat("httpOk", (self._to_pat(page),)), indent, on_fail)
            case Bind(x, _):
                self.emit(f"ctx[{json.dumps(x)}] = response;", indent)
            case _:
                raise UnsupportedConstruct(f"unsupported response pattern {pattern}")

    def _to_pat(self, t: Term) -> Pattern:
        match t:
            case Ctor(sym, args):
                return CtorPat(sym, tuple(self._to_pat(a) for a in args))
            case _:
                return Eq(t)

    def match_page(self, page: Pattern, indent: int, on_fail: str) -> None:
        match page:
            case Bind(x, _):
                self.emit(f"ctx[{json.dumps(x)}] = bodyText;", indent)
            case CtorPat(sym, ()) if self.cfg.codec(sym) is None:
                self.emit(f"if (!S.eq(bodyText, SYMBOLS[{json.dumps(sym)}])) {on_fail}", indent)
            case CtorPat(sym, _) if self.cfg.codec(sym) is not None:
                self.match_params("bodyText", page, indent, on_fail)
            case Eq(t):
                self.emit(f"if (!S.eq(bodyText, {self.term_js(t)})) {on_fail}", indent)
            case _:
                raise UnsupportedConstruct(f"unsupported page pattern {page}")

    # -- ops --------------------------------------------------------------------------

    def emit_op(
        self, op: PipelineOp, indent: int, blocked: str, resp_binder: str | None = None
    ) -> None:
        if isinstance(op, CheckOp):
            value = op.value
            if (
                resp_binder is not None
                and isinstance(value, (Var, Name))
                and value.ident == resp_binder
            ):
                # a check against the bound response object
                self.match_response(op.pattern, indent, blocked)
                return
            self.match_pattern(self.term_js(value), op.pattern, indent, blocked)
            return
        if isinstance(op, GetOp):
            cols = []
            binds: list[tuple[int, str]] = []
            for i, q in enumerate(op.patterns):
                if isinstance(q, Eq):
                    cols.append(self.term_js(q.term))
                elif isinstance(q, Bind):
                    cols.append("null")
                    binds.append((i, q.ident))
                else:
                    raise UnsupportedConstruct(f"get column pattern {q}")
            rows = self.fresh("rows")
            self.emit(
                f"const {rows} = await S.tableLookup({json.dumps(op.table)}, [{', '.join(cols)}]);",
                indent,
            )
            if op.block_if_found:
                self.emit(f"if ({rows}.length > 0) {blocked}", indent)
            else:
                self.emit(f"if ({rows}.length === 0) {blocked}", indent)
                for i, ident in binds:
                    self.emit(f"ctx[{json.dumps(ident)}] = {rows}[0][{i}];", indent)
            return
        if isinstance(op, InsertOp):
            values = ", ".join(self.term_js(a) for a in op.args)
            self.emit(f"await S.tableInsert({json.dumps(op.table)}, [{values}]);", indent)
            return
        if isinstance(op, EventOp):
            values = ", ".join(self.term_js(a) for a in op.args)
            self.emit(f"S.event({json.dumps(op.symbol)}, [{values}]);", indent)
            return
        raise UnsupportedConstruct(f"unsupported pipeline op {type(op).__name__}")


def emit_service_worker(
    monitor: Process,
    cfg: ProtocolConfig,
    support_script: str = DEFAULT_SUPPORT_NAME,
) -> str:
    """Emit the fetch-intercepting worker script for a service-worker
    monitor process."""
    try:
        compiled = compile_sw(monitor)
    except UnsupportedConstruct:
        raise
    except MonitorCompileError as exc:
        # a process outside the service-worker channel vocabulary means the
        # worker transformation was skipped
        raise UnsupportedConstruct(str(exc)) from exc
    em = _Emitter(cfg)
    symbols = dict(BUILTIN_SYMBOLS)
    symbols.update(cfg.symbols)
    codecs = {
        name: {"carrier": c.carrier, "fields": [list(f) for f in c.fields]}
        for name, c in cfg.constructors.items()
    }

    out: list[str] = []
    out.append("/* Generated security-monitor service worker. */")
    out.append(f"importScripts({json.dumps(support_script)});")
    out.append(f"const S = self.{SUPPORT_GLOBAL};")
    out.append(f"const SYMBOLS = {json.dumps(symbols, sort_keys=True)};")
    out.append(f"const CODECS = {json.dumps(codecs, sort_keys=True)};")
    out.append(f"S.init({json.dumps(sorted(cfg.tables))});")
    out.append("")
    out.append("self.addEventListener('install', () => self.skipWaiting());")
    out.append("self.addEventListener('activate', (e) => e.waitUntil(self.clients.claim()));")
    out.append("self.addEventListener('fetch', (event) => {")
    out.append("  event.respondWith(handle(event.request));")
    out.append("});")
    out.append("")
    out.append("async function handle(request) {")
    out.append("  const url = S.parseUrl(request.url);")
    out.append("  if (url === null) { return fetch(request); }")
    for i in range(len(compiled.branches)):
        out.append(f"  {{ const ctx = route_{i}(request, url);")
        out.append(f"    if (ctx !== null) {{ return branch_{i}(request, url, ctx); }} }}")
    out.append("  return fetch(request);")
    out.append("}")

    # route guards: address only (scheme, host, path); a routed request
    # commits to its branch and every further mismatch blocks
    trigger_binds = _trigger_bind_names(compiled.trigger)
    for i, branch in enumerate(compiled.branches):
        em.lines = []
        em.emit(f"function route_{i}(request, url) {{", 0)
        em.emit("const ctx = { b: S.browserHandle() };", 1)
        em.emit(f"ctx[{json.dumps(trigger_binds['uri'])}] = url.href;", 1)
        em.emit(f"ctx[{json.dumps(trigger_binds['method'])}] = request.method;", 1)
        fail = "{ return null; }"
        for pre in compiled.preamble:
            em.match_pattern(em.term_js(pre.value), pre.pattern, 1, fail)
        sel_value = branch.selector_value
        if not isinstance(sel_value, (Var, Name)):
            raise UnsupportedConstruct("dispatch value is not a variable")
        em.match_pattern(f"ctx[{json.dumps(sel_value.ident)}]", branch.route_pattern, 1, fail)
        em.emit("return ctx;", 1)
        em.emit("}", 0)
        out.append("")
        out.extend(em.lines)

    for i, branch in enumerate(compiled.branches):
        em.lines = []
        em.emit(f"async function branch_{i}(request, url, ctx) {{", 0)
        # everything inside a monitored branch fails closed, including
        # storage errors from the table shim
        em.emit("try {", 1)
        blocked = "{ return S.blockedResponse(); }"
        for h in compiled.hoisted:
            em.emit_op(h, 2, blocked)
        em.emit_params_check(branch, 2, blocked)
        for op in branch.pre_ops:
            em.emit_op(op, 2, blocked)
        em.emit("let response;", 2)
        em.emit("try { response = await fetch(request); }", 2)
        em.emit("catch (err) { return S.blockedResponse('upstream unreachable'); }", 2)
        em.emit("const bodyText = await response.clone().text();", 2)
        resp_binder = _bind_result_slots(em, branch, 2)
        for op in branch.post_ops:
            em.emit_op(op, 2, blocked, resp_binder=resp_binder)
        em.emit("return response;", 2)
        em.emit("} catch (err) { return S.blockedResponse('monitor failure'); }", 1)
        em.emit("}", 0)
        out.append("")
        out.extend(em.lines)

    return "\n".join(out) + "\n"


def _trigger_bind_names(trigger: TuplePat) -> dict[str, str]:
    names = {}
    slots = ("uri", "method", "referrer", "page", "ajax")
    for slot, comp in zip(slots, trigger.items):
        if isinstance(comp, Bind):
            names[slot] = comp.ident
    if "uri" not in names or "method" not in names:
        raise UnsupportedConstruct("fetch trigger does not bind url and method")
    return names


def _bind_result_slots(em: _Emitter, branch: CompiledSwBranch, indent: int) -> str | None:
    slots = ("uri", "response", "refpol", "xdr", "corr")
    values = {
        "uri": "url.href",
        "response": "response",
        "refpol": "response.headers.get('Referrer-Policy') || ''",
        "xdr": "''",
        "corr": "S.freshId()",
    }
    resp_binder: str | None = None
    for slot, comp in zip(slots, branch.result_pattern.items):
        if isinstance(comp, Bind):
            if slot == "response":
                resp_binder = comp.ident
            else:
                em.emit(f"ctx[{json.dumps(comp.ident)}] = {values[slot]};", indent)
        elif isinstance(comp, Eq) and slot == "uri":
            em.emit(
                f"if (!S.eq(url.href, {em.term_js(comp.term)})) {{ return S.blockedResponse(); }}",
                indent,
            )
        # equality on other result slots is satisfied per fetch
    return resp_binder


def emit_registration_snippet(cfg: ProtocolConfig, worker_path: str = "/" + DEFAULT_WORKER_NAME, scope: str = "/") -> str:
    """Page snippet registering the monitor worker; installation happens
    transparently on the first visit."""
    return f"""<script>
if ('serviceWorker' in navigator) {{
  navigator.serviceWorker.register({json.dumps(worker_path)}, {{ scope: {json.dumps(scope)} }})
    .then(function (reg) {{ console.log('security monitor registered', reg.scope); }})
    .catch(function (err) {{ console.error('security monitor registration failed', err); }});
}}
</script>
"""
