"""Execution engines for synthesized monitors.

The proxy engine compiles a proxy-monitor process into per-branch
pipelines: decode the request, dispatch on the URL pattern, run every
check that depends only on request knowledge (including self-issued
back-channel subrequests such as notification revalidation), forward to
the upstream application only on a failure-free path, then discharge the
response-dependent checks, table writes and events, and relay.

The service-worker engine interprets a service-worker monitor process
against the same decoded messages, with tables implicitly keyed by the
browser handle; it produces the allow/block/forward decisions that the
scripted user agent (and the emitted worker, in the browser suite)
must reproduce.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field
from typing import Callable

from .calculus import (
    Bind,
    CtorPat,
    Eq,
    Event,
    Get,
    In,
    Insert,
    Let,
    Name,
    Nil,
    Out,
    Par,
    Pattern,
    Process,
    Term,
    Tuple,
    TuplePat,
    Var,
    pattern_binds,
    term_vars,
)
from .config import (
    AbstractHttpMessage,
    CodecError,
    Env,
    MatchFailure,
    ProtocolConfig,
    decode,
    encode,
    match_component,
    term_to_wire,
)
from .runtime import EventTrace, TableStore


class MonitorCompileError(Exception):
    """The process does not have the shape synthesized monitors have."""


def split_selector(pattern: Pattern) -> tuple[Pattern, Pattern]:
    """Split a dispatch pattern into the routing part (scheme, host, path;
    the parameter position widened to a wildcard) and the parameter
    pattern. Requests are routed by address; a routed request whose
    parameters do not fit the protocol shape is blocked, not forwarded."""
    if not (isinstance(pattern, CtorPat) and pattern.symbol == "uri" and len(pattern.args) == 4):
        raise MonitorCompileError(f"dispatch pattern is not a uri pattern: {pattern}")
    route = CtorPat("uri", pattern.args[:3] + (Bind("__params", None),))
    return route, pattern.args[3]


class CheckFailed(Exception):
    def __init__(self, check_id: str, reason: str):
        self.check_id = check_id
        self.reason = reason
        super().__init__(f"{check_id}: {reason}")


# -- pipeline ops -----------------------------------------------------------


@dataclass(frozen=True)
class CheckOp:
    pattern: Pattern
    value: Term


@dataclass(frozen=True)
class GetOp:
    table: str
    patterns: tuple[Pattern, ...]
    block_if_found: bool = False


@dataclass(frozen=True)
class InsertOp:
    table: str
    args: tuple[Term, ...]


@dataclass(frozen=True)
class EventOp:
    symbol: str
    args: tuple[Term, ...]


@dataclass(frozen=True)
class SubRequestOp:
    """Self-issued back-channel exchange: the reverse proxy cannot observe
    the application's own outbound requests, so when the monitored flow
    requires one whose content is fully known, the monitor performs it
    itself and checks the answer."""

    request: Term
    elided_binds: tuple[tuple[str, str | None], ...]  # (ident, type)
    response_pattern: TuplePat


PipelineOp = CheckOp | GetOp | InsertOp | EventOp | SubRequestOp


@dataclass(frozen=True)
class CompiledBranch:
    trigger: TuplePat
    route_pattern: Pattern  # scheme/host/path of the dispatch
    params_check: Pattern  # parameter shape: blocking once routed
    selector_value: Term
    pre_ops: tuple[PipelineOp, ...]
    response_pattern: TuplePat | None
    post_ops: tuple[PipelineOp, ...]
    relays: bool


@dataclass
class Blocked:
    check_id: str
    reason: str


# -- compilation --------------------------------------------------------------


def _linearize(p: Process) -> list[Process]:
    """Flatten a monitor branch into an op list. A get with an else branch
    whose then-side never relays compiles to a block-if-found lookup."""
    ops: list[Process] = []
    while not isinstance(p, Nil):
        match p:
            case In(_, _, cont) | Out(_, _, cont) | Insert(_, _, cont) | Event(_, _, cont):
                ops.append(p)
                p = cont
            case Let(_, _, cont, None):
                ops.append(p)
                p = cont
            case Get(_, _, then, orelse):
                if orelse is None:
                    ops.append(p)
                    p = then
                else:
                    if _relays(then):
                        raise MonitorCompileError(
                            "get/else with a relaying then-branch is not supported"
                        )
                    ops.append(p)
                    p = orelse
            case _:
                raise MonitorCompileError(
                    f"unsupported construct in monitor branch: {type(p).__name__}"
                )
    return ops


def _relays(p: Process) -> bool:
    match p:
        case Nil():
            return False
        case Out(Name(c), _, cont):
            if not c.startswith("mC_"):
                return True
            return _relays(cont)
        case Out(_, _, cont) | In(_, _, cont) | Insert(_, _, cont) | Event(_, _, cont):
            return _relays(cont)
        case Let(_, _, then, orelse) | Get(_, _, then, orelse):
            return _relays(then) or (orelse is not None and _relays(orelse))
        case Par(l, r):
            return _relays(l) or _relays(r)
        case _:
            return False


def compile_proxy(monitor: Process, cfg: ProtocolConfig) -> list[CompiledBranch]:
    """Compile the body of a proxy-monitor participant."""
    # peel preamble lets into every branch
    preamble: list[Let] = []
    body = monitor
    while isinstance(body, Let) and body.orelse is None:
        preamble.append(body)
        body = body.then

    def branches_of(p: Process) -> list[Process]:
        if isinstance(p, Par):
            return branches_of(p.left) + branches_of(p.right)
        return [p]

    compiled: list[CompiledBranch] = []
    for branch in branches_of(body):
        if not isinstance(branch, In):
            raise MonitorCompileError("monitor branch does not start with a reception")
        if not isinstance(branch.pattern, TuplePat):
            raise MonitorCompileError("monitor trigger is not a tuple pattern")
        ops = _linearize(branch.body)
        if not ops or not isinstance(ops[0], Let) or not isinstance(ops[0].pattern, CtorPat):
            raise MonitorCompileError("monitor branch lacks a dispatch pattern")
        selector = ops[0]
        rest = ops[1:]

        pre: list[PipelineOp] = [CheckOp(lt.pattern, lt.value) for lt in preamble]
        post: list[PipelineOp] = []
        phase = pre
        response_pattern: TuplePat | None = None
        relays = False
        let_defs: dict[str, Term] = {
            lt.pattern.ident: lt.value
            for lt in preamble
            if isinstance(lt.pattern, Bind)
        }
        i = 0
        while i < len(rest):
            op = rest[i]
            match op:
                case Let(pat, val, _, _):
                    if isinstance(pat, Bind) and not isinstance(val, Var):
                        let_defs[pat.ident] = val
                    phase.append(CheckOp(pat, val))
                case Insert(tab, args, _):
                    phase.append(InsertOp(tab, args))
                case Event(sym, args, _):
                    phase.append(EventOp(sym, args))
                case Get(tab, pats, _, orelse):
                    phase.append(GetOp(tab, pats, block_if_found=orelse is not None))
                case Out(Name(c), _, _) if c.startswith("mC_"):
                    pass  # relaying to the application is implicit at runtime
                case Out(Name(c), _, _) if c == cfg.response_channel:
                    relays = True
                case In(Name(c), pat, _) if c.startswith("mC_"):
                    # reception from the application: either its own outbound
                    # request (next op sends it to the network) or its response
                    nxt = rest[i + 1] if i + 1 < len(rest) else None
                    if (
                        isinstance(nxt, Out)
                        and isinstance(nxt.channel, Name)
                        and nxt.channel.ident == cfg.request_channel
                    ):
                        after = rest[i + 2] if i + 2 < len(rest) else None
                        if not (
                            isinstance(after, In)
                            and isinstance(after.channel, Name)
                            and after.channel.ident == cfg.response_channel
                        ):
                            raise MonitorCompileError(
                                "outbound subrequest without a response reception"
                            )
                        assert isinstance(after.pattern, TuplePat)
                        from .calculus import subst_term

                        request = subst_term(nxt.message, let_defs)
                        binds = []
                        if isinstance(pat, TuplePat):
                            for comp in pat.items:
                                if isinstance(comp, Bind):
                                    binds.append((comp.ident, comp.type))
                        phase.append(
                            SubRequestOp(
                                request=request,
                                elided_binds=tuple(binds),
                                response_pattern=after.pattern,
                            )
                        )
                        i += 3
                        continue
                    if not isinstance(pat, TuplePat):
                        raise MonitorCompileError("application response is not a tuple")
                    response_pattern = pat
                    phase = post
                case _:
                    raise MonitorCompileError(
                        f"unsupported op in monitor branch: {type(op).__name__}"
                    )
            i += 1
        route, params = split_selector(selector.pattern)
        compiled.append(
            CompiledBranch(
                trigger=branch.pattern,
                route_pattern=route,
                params_check=params,
                selector_value=selector.value,
                pre_ops=tuple(pre),
                response_pattern=response_pattern,
                post_ops=tuple(post),
                relays=relays,
            )
        )
    return compiled


# -- execution -----------------------------------------------------------------

SubRequestFn = Callable[[AbstractHttpMessage], AbstractHttpMessage]


class ProxyEngine:
    """Transport-independent proxy monitor: the HTTP layer supplies the
    decoded request, a forwarding function and a subrequest function."""

    def __init__(
        self,
        monitor: Process,
        cfg: ProtocolConfig,
        tables: TableStore | None = None,
        trace: EventTrace | None = None,
    ):
        self.cfg = cfg
        self.branches = compile_proxy(monitor, cfg)
        self.tables = tables or TableStore()
        self.trace = trace or EventTrace()

    # dispatch: route by address; a routed request commits to its branch
    def _dispatch(self, msg: AbstractHttpMessage) -> tuple[CompiledBranch, Env] | None:
        for branch in self.branches:
            try:
                env = decode(msg, branch.trigger, self.cfg, {})
                sel_value = env.get(_selector_ident(branch.selector_value))
                match_component(msg, sel_value, branch.route_pattern, self.cfg, env)
            except (MatchFailure, CodecError, KeyError):
                continue
            return branch, env
        return None

    def _run_op(self, op: PipelineOp, env: Env, msg: AbstractHttpMessage, subrequest: SubRequestFn | None) -> None:
        cfg = self.cfg
        if isinstance(op, CheckOp):
            value = _resolve_value(op.value, env, cfg, msg)
            try:
                match_component(
                    msg if not isinstance(value, AbstractHttpMessage) else value,
                    value,
                    op.pattern,
                    cfg,
                    env,
                )
            except MatchFailure as exc:
                raise CheckFailed(f"check:{op.pattern}", exc.reason) from exc
            except CodecError as exc:
                raise CheckFailed(f"check:{op.pattern}", str(exc)) from exc
        elif isinstance(op, GetOp):
            columns: list[str | None] = []
            binds: list[str | None] = []
            for q in op.patterns:
                if isinstance(q, Eq):
                    columns.append(term_to_wire(q.term, env, cfg))
                    binds.append(None)
                elif isinstance(q, Bind):
                    columns.append(None)
                    binds.append(q.ident)
                else:
                    raise MonitorCompileError(f"unsupported get column pattern {q}")
            rows = self.tables.table(op.table).lookup(columns)
            if op.block_if_found:
                if rows:
                    raise CheckFailed(f"get:{op.table}", "replayed value")
                return
            if not rows:
                raise CheckFailed(f"get:{op.table}", "no matching session row")
            row = rows[0]
            for ident, value in zip(binds, row):
                if ident is not None:
                    env[ident] = value
        elif isinstance(op, InsertOp):
            row = tuple(term_to_wire(a, env, self.cfg) for a in op.args)
            self.tables.table(op.table).insert(row)
        elif isinstance(op, EventOp):
            args = tuple(term_to_wire(a, env, self.cfg) for a in op.args)
            self.trace.append(op.symbol, args, session=str(env.get("__session", "")))
        elif isinstance(op, SubRequestOp):
            if subrequest is None:
                raise CheckFailed("subrequest", "no subrequest transport available")
            for ident, ty in op.elided_binds:
                # the application's own correlation values are unobservable;
                # the self-issued exchange generates fresh ones
                if ty == "bitstring" and ident not in env:
                    env[ident] = uuid.uuid4().hex
            req = encode(env, op.request, self.cfg)
            try:
                resp = subrequest(req)
            except Exception as exc:  # noqa: BLE001 - fail closed on transport errors
                raise CheckFailed("subrequest", f"verification round-trip failed: {exc}") from exc
            try:
                sub_env = decode(resp, op.response_pattern, self.cfg, dict(env))
            except (MatchFailure, CodecError) as exc:
                reason = getattr(exc, "reason", str(exc))
                raise CheckFailed("subrequest", reason) from exc
            env.update(sub_env)

    def handle(
        self,
        msg: AbstractHttpMessage,
        forward: Callable[[AbstractHttpMessage], AbstractHttpMessage],
        subrequest: SubRequestFn | None = None,
    ) -> AbstractHttpMessage | Blocked | None:
        """Run the pipeline for one request. Returns the upstream response
        to relay, a Blocked decision, or None for pass-through (no branch
        matched)."""
        dispatched = self._dispatch(msg)
        if dispatched is None:
            return None
        branch, env = dispatched
        env["__session"] = msg.cookie(self.cfg.session_cookie) or ""
        try:
            # parameter shape is a check, not a routing condition: a
            # monitored endpoint reached with non-protocol parameters is
            # blocked rather than forwarded
            try:
                match_component(msg, env.get("__params", ""), branch.params_check, self.cfg, env)
            except (MatchFailure, CodecError) as exc:
                reason = getattr(exc, "reason", str(exc))
                raise CheckFailed("params", reason) from exc
            for op in branch.pre_ops:
                self._run_op(op, env, msg, subrequest)
        except CheckFailed as exc:
            return Blocked(exc.check_id, exc.reason)
        response = forward(msg)
        if branch.response_pattern is not None:
            try:
                env2 = decode(response, branch.response_pattern, self.cfg, dict(env))
                env.update(env2)
                for op in branch.post_ops:
                    self._run_op(op, env, response, subrequest)
            except (MatchFailure, CheckFailed, CodecError) as exc:
                reason = exc.reason if hasattr(exc, "reason") else str(exc)
                return Blocked("response-check", reason)
        if not branch.relays:
            return Blocked("no-relay", "branch completed without relaying")
        return response


def _selector_ident(value: Term) -> str:
    if isinstance(value, (Var, Name)):
        return value.ident
    raise MonitorCompileError(f"selector value is not a variable: {value}")


def _resolve_value(value: Term, env: Env, cfg: ProtocolConfig, msg: AbstractHttpMessage):
    if isinstance(value, (Var, Name)) and value.ident in env:
        return env[value.ident]
    return term_to_wire(value, env, cfg)


# ---------------------------------------------------------------------------
# Service-worker engine
# ---------------------------------------------------------------------------

SW_TRIGGER_SLOTS = ("uri", "method", "referrer", "page", "ajax")
SW_RESULT_SLOTS = ("uri", "response", "refpol", "xdr", "corr")


@dataclass
class SwPending:
    branch: "CompiledSwBranch"
    env: Env


@dataclass(frozen=True)
class CompiledSwBranch:
    route_pattern: Pattern
    params_check: Pattern
    selector_value: Term
    pre_ops: tuple[PipelineOp, ...]
    result_pattern: TuplePat
    post_ops: tuple[PipelineOp, ...]


@dataclass(frozen=True)
class CompiledSw:
    preamble: tuple[CheckOp, ...]
    trigger: TuplePat
    hoisted: tuple[CheckOp, ...]
    branches: tuple[CompiledSwBranch, ...]


def compile_sw(monitor: Process) -> CompiledSw:
    """Compile a service-worker monitor process: preamble definitions, the
    fetch trigger, hoisted (shared) checks, and the dispatch branches."""
    preamble: list[CheckOp] = []
    body = monitor
    while isinstance(body, Let) and body.orelse is None and not _is_dispatch(body):
        preamble.append(CheckOp(body.pattern, body.value))
        body = body.then
    if not isinstance(body, In):
        raise MonitorCompileError("service worker does not start with a fetch reception")
    if not isinstance(body.pattern, TuplePat) or len(body.pattern.items) != 5:
        raise MonitorCompileError("fetch reception is not the five-slot tuple")
    trigger = body.pattern
    inner = body.body
    hoisted: list[CheckOp] = []
    while isinstance(inner, Let) and inner.orelse is None and not _is_dispatch(inner):
        hoisted.append(CheckOp(inner.pattern, inner.value))
        inner = inner.then
    branches: list[CompiledSwBranch] = []
    while isinstance(inner, Let):
        branches.append(_compile_sw_branch(inner))
        if inner.orelse is None:
            break
        inner = inner.orelse
    return CompiledSw(tuple(preamble), trigger, tuple(hoisted), tuple(branches))


def _compile_sw_branch(dispatch: Let) -> CompiledSwBranch:
    ops = _linearize(dispatch.then)
    pre: list[PipelineOp] = []
    post: list[PipelineOp] = []
    phase = pre
    result_pattern: TuplePat | None = None
    for op in ops:
        match op:
            case Let(pat, val, _, _):
                phase.append(CheckOp(pat, val))
            case Insert(tab, args, _):
                phase.append(InsertOp(tab, args))
            case Event(sym, args, _):
                phase.append(EventOp(sym, args))
            case Get(tab, pats, _, orelse):
                phase.append(GetOp(tab, pats, block_if_found=orelse is not None))
            case Out(chan, _, _) if _sw_channel(chan) == "rawRequest":
                pass  # the surrounding runtime performs the actual fetch
            case Out(chan, _, _) if _sw_channel(chan) == "serviceWorkerSendHttpResponse":
                pass
            case In(chan, pat, _) if _sw_channel(chan) == "serviceWorkerResult":
                if not isinstance(pat, TuplePat):
                    raise MonitorCompileError("fetch result is not a tuple pattern")
                result_pattern = pat
                phase = post
            case _:
                raise MonitorCompileError(
                    f"unsupported op in service-worker branch: {type(op).__name__}"
                )
    if result_pattern is None:
        raise MonitorCompileError("service-worker branch never fetches")
    route, params = split_selector(dispatch.pattern)
    return CompiledSwBranch(
        route_pattern=route,
        params_check=params,
        selector_value=dispatch.value,
        pre_ops=tuple(pre),
        result_pattern=result_pattern,
        post_ops=tuple(post),
    )


class SwEngine:
    """Interprets a service-worker monitor process over abstract messages.
    Route-level mismatches (trigger, shared method checks, dispatch
    patterns) pass through; in-branch check failures block."""

    def __init__(
        self,
        monitor: Process,
        cfg: ProtocolConfig,
        browser_id: str,
        tables: TableStore | None = None,
        trace: EventTrace | None = None,
    ):
        self.cfg = cfg
        self.browser_id = browser_id
        self.tables = tables or TableStore()
        self.trace = trace or EventTrace()
        compiled = compile_sw(monitor)
        self.preamble = list(compiled.preamble)
        self.trigger = compiled.trigger
        self.hoisted = list(compiled.hoisted)
        self.branches = list(compiled.branches)

    def _base_env(self) -> Env:
        return {"b": self.browser_id}

    def _decode_trigger(self, msg: AbstractHttpMessage, env: Env) -> None:
        values = (msg.url(), msg.method, "", "", "")
        for comp, value in zip(self.trigger.items, values):
            if isinstance(comp, Bind):
                env[comp.ident] = value
            elif isinstance(comp, Eq):
                match_component(msg, value, comp, self.cfg, env)

    def _run_op(self, op: PipelineOp, env: Env, msg: AbstractHttpMessage) -> None:
        if isinstance(op, SubRequestOp):
            raise MonitorCompileError("service workers cannot issue back-channel requests")
        if isinstance(op, CheckOp):
            value = _resolve_value(op.value, env, self.cfg, msg)
            try:
                match_component(
                    msg if not isinstance(value, AbstractHttpMessage) else value,
                    value,
                    op.pattern,
                    self.cfg,
                    env,
                )
            except MatchFailure as exc:
                raise CheckFailed(f"check:{op.pattern}", exc.reason) from exc
            except CodecError as exc:
                raise CheckFailed(f"check:{op.pattern}", str(exc)) from exc
            return
        if isinstance(op, GetOp):
            columns: list[str | None] = []
            binds: list[str | None] = []
            for q in op.patterns:
                if isinstance(q, Eq):
                    columns.append(term_to_wire(q.term, env, self.cfg))
                    binds.append(None)
                elif isinstance(q, Bind):
                    columns.append(None)
                    binds.append(q.ident)
                else:
                    raise MonitorCompileError(f"unsupported get column pattern {q}")
            rows = self.tables.table(op.table).lookup(columns)
            if op.block_if_found:
                if rows:
                    raise CheckFailed(f"get:{op.table}", "replayed value")
                return
            if not rows:
                raise CheckFailed(f"get:{op.table}", "no matching session row")
            for ident, value in zip(binds, rows[0]):
                if ident is not None:
                    env[ident] = value
            return
        if isinstance(op, InsertOp):
            row = tuple(term_to_wire(a, env, self.cfg) for a in op.args)
            self.tables.table(op.table).insert(row)
            return
        if isinstance(op, EventOp):
            args = tuple(term_to_wire(a, env, self.cfg) for a in op.args)
            self.trace.append(op.symbol, args, session=self.browser_id)
            return
        raise TypeError(op)

    def process_request(self, msg: AbstractHttpMessage) -> SwPending | Blocked | None:
        """Decide before the network fetch: Blocked, a pending fetch, or
        None when the request's address is outside the monitored branches.
        Once routed, method and parameter shape are blocking checks."""
        env = self._base_env()
        try:
            self._decode_trigger(msg, env)
            for c in self.preamble:
                self._run_op(c, env, msg)
        except (MatchFailure, CodecError, CheckFailed):
            return None
        for branch in self.branches:
            branch_env = dict(env)
            try:
                sel_value = branch_env.get(_selector_ident(branch.selector_value))
                match_component(msg, sel_value, branch.route_pattern, self.cfg, branch_env)
            except (MatchFailure, CodecError):
                continue
            try:
                for c in self.hoisted:
                    self._run_op(c, branch_env, msg)
                try:
                    match_component(
                        msg, branch_env.get("__params", ""), branch.params_check, self.cfg, branch_env
                    )
                except (MatchFailure, CodecError) as exc:
                    reason = getattr(exc, "reason", str(exc))
                    raise CheckFailed("params", reason) from exc
                for op in branch.pre_ops:
                    self._run_op(op, branch_env, msg)
            except CheckFailed as exc:
                return Blocked(exc.check_id, exc.reason)
            return SwPending(branch, branch_env)
        return None

    def process_response(
        self, pending: SwPending, response: AbstractHttpMessage
    ) -> AbstractHttpMessage | Blocked:
        env = pending.env
        values = {
            "uri": response.url(),
            "response": response,
            "refpol": response.header("Referrer-Policy") or "",
            "xdr": "",
            "corr": response.correlation_id or str(uuid.uuid4()),
        }
        try:
            for slot, comp in zip(SW_RESULT_SLOTS, pending.branch.result_pattern.items):
                value = values[slot]
                if isinstance(comp, Bind):
                    env[comp.ident] = value
                elif isinstance(comp, Eq) and isinstance(value, str):
                    expected = term_to_wire(comp.term, env, self.cfg)
                    if expected != value:
                        raise MatchFailure(f"{slot}: expected `{expected}`, got `{value}`")
                elif isinstance(comp, Eq):
                    match_component(response, value, comp, self.cfg, env)
            for op in pending.branch.post_ops:
                self._run_op(op, env, response)
        except (MatchFailure, CheckFailed, CodecError) as exc:
            reason = getattr(exc, "reason", str(exc))
            return Blocked("response-check", reason)
        return response


def _is_dispatch(node: Let) -> bool:
    return (
        isinstance(node.pattern, CtorPat)
        and node.pattern.symbol == "uri"
        and isinstance(node.value, (Var, Name))
    )


def _sw_channel(chan: Term) -> str | None:
    from .calculus import Ctor

    if isinstance(chan, Ctor):
        return chan.symbol
    return None
