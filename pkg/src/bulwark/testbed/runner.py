"""Scenario orchestration: boots the simulated applications with their
monitors, drives honest flows and attack scripts, and realizes the
verification oracle used by the deployment search."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from urllib.parse import parse_qsl, urlsplit

from ..calculus import Participant, SystemSpec
from ..config import Codec, ProtocolConfig
from ..monitor_exec import SwEngine
from ..proxy import ProxyHandle, run_proxy
from ..runtime import EventTrace, check_correspondence
from ..transform import DeploymentOption, ThreatModel
from . import attacks as attack_mod
from . import oauth as oauth_mod
from . import paypal as paypal_mod
from .httpbase import SimService
from .scenarios import Scenario, free_port
from .ua import Browser

# ---------------------------------------------------------------------------
# Monitor configurations
# ---------------------------------------------------------------------------


def oauth_monitor_config(rp_host: str, ttp_host: str, stateless: bool) -> ProtocolConfig:
    state_field = [] if stateless else [["state", "string"]]

    def c(carrier: str, fields: list[list[str]]) -> Codec:
        return Codec(carrier, tuple((w, t) for w, t in fields))

    return ProtocolConfig(
        symbols={
            "h": rp_host,
            "fb": ttp_host,
            "idph": ttp_host,
            "appid": oauth_mod.APP_ID,
            "appsecret": oauth_mod.APP_SECRET,
            "loginpath": oauth_mod.LOGIN_PATH,
            "callbackpath": oauth_mod.CALLBACK_PATH,
            "oauthpath": oauth_mod.DIALOG_PATH,
            "oauthformpath": oauth_mod.AUTH_FORM_PATH,
            "tokenpath": oauth_mod.TOKEN_PATH,
            "success": "Logged in",
        },
        constructors={
            "codereqparams": c(
                "query-string",
                [["client_id", "string"], ["redirect_uri", "url"]] + state_field,
            ),
            "coderesparams": c("query-string", [["code", "string"]] + state_field),
            "tokenreqparams": c(
                "query-string",
                [
                    ["client_id", "string"],
                    ["redirect_uri", "url"],
                    ["client_secret", "string"],
                    ["code", "string"],
                ],
            ),
            "loginformparams": c(
                "query-string",
                [["client_id", "string"], ["redirect_uri", "url"]] + state_field,
            ),
            "credparams": c(
                "form-body",
                [["username", "string"], ["password", "string"], ["redirect_uri", "url"]]
                + state_field,
            ),
            "pagewithlink": c("json-body", [["link", "url"]]),
            "loginform": c("json-body", [["action", "url"]]),
            "tokenresjson": c("json-body", [["access_token", "string"]]),
        },
        session_cookie=oauth_mod.SESSION_COOKIE,
        tables={"MRPSessions": "mem", "MCodeBindings": "mem"},
    )


def paypal_monitor_config(shop_host: str, pp_host: str) -> ProtocolConfig:
    def c(carrier: str, fields: list[list[str]]) -> Codec:
        return Codec(carrier, tuple((w, t) for w, t in fields))

    pay_fields = [
        ["business", "string"],
        ["amount", "string"],
        ["invoice", "string"],
        ["return", "url"],
        ["notify_url", "url"],
    ]
    ipn_fields = [
        ["business", "string"],
        ["amount", "string"],
        ["invoice", "string"],
        ["payer_id", "string"],
        ["signature", "string"],
    ]
    return ProtocolConfig(
        symbols={
            "h": shop_host,
            "pp": pp_host,
            "merchant": paypal_mod.MERCHANT_ID,
            "price": paypal_mod.PRICE_STANDARD,
            "checkoutpath": paypal_mod.CHECKOUT_PATH,
            "returnpath": paypal_mod.RETURN_PATH,
            "notifypath": paypal_mod.NOTIFY_PATH,
            "paypath": paypal_mod.PAY_PATH,
            "verifypath": paypal_mod.VERIFY_PATH,
            "verifiedpage": "VERIFIED",
            "ackpage": "OK",
            "processing": "Processing Order",
        },
        constructors={
            "buyparams": c("query-string", [["amount", "string"]]),
            "payparams": c("form-body", pay_fields),
            "retparams": c("query-string", [["invoice", "string"]]),
            "ipnparams": c("form-body", ipn_fields),
            "payform": c("json-body", pay_fields),
        },
        session_cookie="session",
        tables={"MInvoices": "mem", "MUsedPayments": "mem", "MPayedInvoices": "mem"},
    )


def detect_protocol(spec: SystemSpec) -> tuple[str, bool]:
    """(protocol, stateless) from the spec's vocabulary."""
    if spec.participant("ShopApp") is not None or spec.ctor("ipnparams") is not None:
        return "paypal-ipn", False
    ctor = spec.ctor("codereqparams")
    stateless = ctor is not None and ctor.arity == 2
    return "oauth-explicit", stateless


# ---------------------------------------------------------------------------
# Scenario runtime
# ---------------------------------------------------------------------------


@dataclass
class _SwDeployment:
    origin_host: str
    monitor: Participant
    cfg: ProtocolConfig


class ScenarioRuntime:
    """One isolated scenario instance: fresh ports, fresh tables, a shared
    event trace, applications and optional monitors."""

    def __init__(
        self,
        scenario: Scenario,
        monitors: dict[tuple[str, str], Participant] | None = None,
        spec: SystemSpec | None = None,
    ):
        self.scenario = scenario
        self.trace = EventTrace()
        self.proxies: list[ProxyHandle] = []
        self.sw_deployments: list[_SwDeployment] = []
        self.browsers: list[Browser] = []
        monitors = monitors or {}

        role_placements: dict[str, dict[str, Participant]] = {}
        for (name, kind), participant in monitors.items():
            role = participant.role or (spec.participant(name).role if spec else None)
            if role is None:
                raise ValueError(f"monitor for `{name}` has no role")
            role_placements.setdefault(role, {})[kind] = participant

        rp_proxied = "proxy" in role_placements.get("RP", {})
        ttp_proxied = "proxy" in role_placements.get("TTP", {})
        rp_pub_port = free_port() if rp_proxied else None
        ttp_pub_port = free_port() if ttp_proxied else None

        if scenario.protocol == "oauth-explicit":
            self.idp = oauth_mod.IdpApp(self.trace, flags=scenario.flags & {"no-reduri-binding"})
            ttp_public = f"127.0.0.1:{ttp_pub_port or self.idp.service.port}"
            self.idp.public_host = ttp_public
            self.rp = oauth_mod.RpApp(
                self.trace,
                idp_base=ttp_public,
                stateless=scenario.stateless,
                flags=scenario.flags & {"no-state-check", "stateless-rp"},
            )
            rp_public = f"127.0.0.1:{rp_pub_port or self.rp.service.port}"
            self.rp.public_host = rp_public
            self.rp_public, self.ttp_public = rp_public, ttp_public
            self.rp.start()
            self.idp.start()
            cfg = lambda: oauth_monitor_config(rp_public, ttp_public, scenario.stateless)  # noqa: E731
            self._deploy_monitors(
                role_placements,
                cfg,
                rp_upstream=self.rp.service.port,
                ttp_upstream=self.idp.service.port,
                rp_pub_port=rp_pub_port,
                ttp_pub_port=ttp_pub_port,
            )
            self.shop = self.pp = None
        else:
            self.pp = paypal_mod.PayPalApp(self.trace)
            ttp_public = f"127.0.0.1:{ttp_pub_port or self.pp.service.port}"
            self.pp.public_host = ttp_public
            self.shop = paypal_mod.ShopApp(
                self.trace,
                pp_base=ttp_public,
                flags=scenario.flags,
            )
            rp_public = f"127.0.0.1:{rp_pub_port or self.shop.service.port}"
            self.shop.public_host = rp_public
            self.rp_public, self.ttp_public = rp_public, ttp_public
            self.shop.start()
            self.pp.start()
            cfg = lambda: paypal_monitor_config(rp_public, ttp_public)  # noqa: E731
            self._deploy_monitors(
                role_placements,
                cfg,
                rp_upstream=self.shop.service.port,
                ttp_upstream=self.pp.service.port,
                rp_pub_port=rp_pub_port,
                ttp_pub_port=ttp_pub_port,
            )
            self.rp = self.idp = None

    def _deploy_monitors(
        self,
        role_placements: dict[str, dict[str, Participant]],
        cfg_factory,
        rp_upstream: int,
        ttp_upstream: int,
        rp_pub_port: int | None,
        ttp_pub_port: int | None,
    ) -> None:
        for role, kinds in role_placements.items():
            for kind, participant in kinds.items():
                if kind == "proxy":
                    pub = rp_pub_port if role == "RP" else ttp_pub_port
                    upstream = rp_upstream if role == "RP" else ttp_upstream
                    from dataclasses import replace as dc_replace

                    cfg = dc_replace(
                        cfg_factory(),
                        listen=("127.0.0.1", pub),
                        upstream=("127.0.0.1", upstream),
                    )
                    self.proxies.append(
                        run_proxy(participant.body, cfg, trace=self.trace)
                    )
                else:
                    origin = self.rp_public if role == "RP" else self.ttp_public
                    self.sw_deployments.append(
                        _SwDeployment(origin, participant, cfg_factory())
                    )

    # -- browsers ------------------------------------------------------------

    def new_browser(self, browser_id: str | None = None) -> Browser:
        browser = Browser(browser_id)
        for dep in self.sw_deployments:
            engine = SwEngine(
                dep.monitor.body,
                dep.cfg,
                browser_id=browser.id,
                trace=self.trace,
            )
            browser.register_worker(dep.origin_host, engine)
        self.browsers.append(browser)
        return browser

    # -- honest flows ----------------------------------------------------------

    def oauth_login_steps(
        self, browser: Browser, user: str, stop_before_callback: bool = False
    ):
        r1 = browser.fetch("GET", f"https://{self.rp_public}{oauth_mod.LOGIN_PATH}")
        if r1.status != 200:
            return None
        link = r1.json()["link"]
        r2 = browser.fetch("GET", link)
        if r2.status != 200:
            return None
        action = r2.json()["action"]
        hidden = dict(parse_qsl(urlsplit(action).query))
        form = {
            "username": user,
            "password": oauth_mod.USERS[user],
            "redirect_uri": hidden.get("redirect_uri", ""),
        }
        if "state" in hidden:
            form["state"] = hidden["state"]
        r3 = browser.fetch("POST", action, data=form, follow_redirects=False)
        location = r3.headers.get("location", "")
        if r3.status not in (301, 302, 303, 307, 308) or not location:
            return None
        params = dict(parse_qsl(urlsplit(location).query))
        code, state = params.get("code", ""), params.get("state", "")
        if stop_before_callback:
            return location, code, state
        r4 = browser.fetch("GET", location)
        if r4.status != 200 or r4.body != "Logged in":
            return None
        if state:
            args = (browser.id, self.rp_public, self.ttp_public, state, code)
        else:
            args = (browser.id, self.rp_public, self.ttp_public, code)
        self.trace.append("ua_end", args, session=browser.id)
        return location, code, state

    def oauth_honest_flow(self, browser: Browser, user: str = "alice") -> bool:
        return self.oauth_login_steps(browser, user) is not None

    def paypal_honest_flow(self, browser: Browser, amount: str | None = None) -> bool:
        amount = amount or paypal_mod.PRICE_STANDARD
        r1 = browser.fetch(
            "GET", f"https://{self.rp_public}{paypal_mod.CHECKOUT_PATH}?amount={amount}"
        )
        if r1.status != 200:
            return False
        form = r1.json()
        r2 = browser.fetch(
            "POST",
            f"https://{self.ttp_public}{paypal_mod.PAY_PATH}",
            data={
                "business": form["business"],
                "amount": form["amount"],
                "invoice": form["invoice"],
                "return": form["return"],
                "notify_url": form["notify_url"],
            },
            follow_redirects=True,
        )
        if r2.status != 200 or r2.body != "Processing Order":
            return False
        if form["invoice"] not in self.shop.payed_invoices():
            return False
        self.trace.append(
            "ua_payed",
            (browser.id, self.rp_public, self.ttp_public, form["invoice"]),
            session=browser.id,
        )
        return True

    def honest_flow(self, browser: Browser) -> bool:
        if self.scenario.protocol == "oauth-explicit":
            return self.oauth_honest_flow(browser)
        return self.paypal_honest_flow(browser)

    def stop(self) -> None:
        for browser in self.browsers:
            browser.close()
        for handle in self.proxies:
            handle.stop()
        for app in (self.rp, self.idp, self.shop, self.pp):
            if app is not None:
                app.stop()


# ---------------------------------------------------------------------------
# Reports, run_scenario, the oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunReport:
    scenario: str
    completed: bool
    attack: str | None
    attack_succeeded: bool | None
    attack_detail: str | None
    trace_export: str

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "completed": self.completed,
            "attack": self.attack,
            "attack_succeeded": self.attack_succeeded,
            "attack_detail": self.attack_detail,
            "trace": self.trace_export.splitlines(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def run_scenario(
    scenario: Scenario,
    monitors: dict[tuple[str, str], Participant] | None = None,
    attack: str | None = None,
    spec: SystemSpec | None = None,
) -> RunReport:
    """Execute the honest flow (and optionally an attack script) against a
    fresh scenario instance; protocol failures are data, not errors."""
    rt = ScenarioRuntime(scenario, monitors or {}, spec)
    try:
        completed = rt.honest_flow(rt.new_browser("b-honest"))
        attack_succeeded = None
        attack_detail = None
        if attack is not None:
            result = attack_mod.ATTACKS[attack](rt)
            attack_succeeded = result.succeeded
            attack_detail = result.detail
        return RunReport(
            scenario=scenario.name,
            completed=completed,
            attack=attack,
            attack_succeeded=attack_succeeded,
            attack_detail=attack_detail,
            trace_export=rt.trace.export(),
        )
    finally:
        rt.stop()


ROLE_FLAGS = {
    ("oauth-explicit", False, "RP"): frozenset({"no-state-check"}),
    ("oauth-explicit", True, "RP"): frozenset({"stateless-rp"}),
    ("oauth-explicit", False, "TTP"): frozenset({"no-reduri-binding"}),
    ("oauth-explicit", True, "TTP"): frozenset({"no-reduri-binding"}),
    ("paypal-ipn", False, "RP"): frozenset(
        {"no-ipn-revalidation", "no-merchant-check", "no-token-freshness"}
    ),
}


class MissingScenario(Exception):
    """The spec has no registered testbed realization."""


def oracle_verify(
    spec: SystemSpec,
    inattentive: tuple[str, ...],
    option: DeploymentOption,
    monitors: dict[tuple[str, str], Participant],
    threat: ThreatModel,
) -> tuple[bool, str | None]:
    """Desk-scale verification: instantiate the scenario with the option's
    monitors, run the honest flow and every attack relevant to the
    inattentive set, and evaluate the spec's queries over the traces."""
    protocol, stateless = detect_protocol(spec)
    flags: set[str] = set()
    for name in inattentive:
        part = spec.participant(name)
        if part is None or part.role is None:
            raise MissingScenario(f"participant `{name}` has no testbed role")
        key = (protocol, stateless, part.role)
        if key not in ROLE_FLAGS:
            raise MissingScenario(f"no scenario realization for {key}")
        flags |= ROLE_FLAGS[key]
    scenario = Scenario("oracle", protocol, frozenset(flags), threat)

    honest = run_scenario(scenario, monitors, attack=None, spec=spec)
    if not honest.completed:
        return False, "honest flow does not complete under this placement"
    verdict = _queries_hold(spec, honest.trace_export)
    if verdict is not None:
        return False, verdict

    for flag in sorted(flags):
        attack = attack_mod.FLAG_ATTACKS[flag]
        report = run_scenario(scenario, monitors, attack=attack, spec=spec)
        if not report.completed:
            return False, f"honest flow broke during `{attack}` run"
        if report.attack_succeeded:
            return False, f"attack `{attack}` succeeded: {report.attack_detail}"
        verdict = _queries_hold(spec, report.trace_export)
        if verdict is not None:
            return False, f"after `{attack}`: {verdict}"
    return True, None


def _queries_hold(spec: SystemSpec, trace_export: str) -> str | None:
    from ..calculus import Correspondence

    trace = EventTrace.parse(trace_export)
    for q in spec.queries:
        if not isinstance(q, Correspondence):
            continue
        verdict = check_correspondence(trace, q)
        if not verdict.holds:
            return f"query violated: {q} (witness {verdict.witness})"
    return None


def testbed_verifier():
    """VerifierHook backed by the scenario testbed (the default oracle)."""
    return oracle_verify
