"""Simulated PayPal-style checkout: a shop and a payment provider with
instant payment notifications on the back channel.

The notification signature is a keyed MAC over merchant, amount and payer
id; the invoice id travels outside the signed body (real notification
bodies carry merchant-chosen fields the gateway does not vouch for, which
is what the replay script exploits)."""

from __future__ import annotations

import hashlib
import hmac
import threading
import uuid
from dataclasses import dataclass, field

import httpx

from ..runtime import EventTrace
from .httpbase import SimRequest, SimResponse, SimService

CHECKOUT_PATH = "/checkout"
RETURN_PATH = "/return"
NOTIFY_PATH = "/notify"
PAY_PATH = "/pay"
VERIFY_PATH = "/verify"

MERCHANT_ID = "shop-account-77"
ATTACKER_MERCHANT_ID = "mallory-account-66"
IPN_KEY = b"ipn-mac-key"

PRICE_STANDARD = "50"
PRICE_CHEAP = "5"


def ipn_signature(merchant: str, amount: str, payer: str) -> str:
    body = f"{merchant}|{amount}|{payer}".encode()
    return hmac.new(IPN_KEY, body, hashlib.sha256).hexdigest()


@dataclass
class ShopState:
    invoices: dict[str, tuple[str, str]] = field(default_factory=dict)  # iid -> (amount, status)
    used_payments: set[str] = field(default_factory=set)
    lock: threading.Lock = field(default_factory=threading.Lock)


class ShopApp:
    """Vulnerability flags:
    no-ipn-revalidation - skips the verification round-trip with the provider
    no-merchant-check   - does not compare the notification's merchant id
                          with its own account
    no-token-freshness  - does not bind the payment to a pending invoice of
                          the same amount, nor reject reused payment ids
    """

    def __init__(
        self,
        trace: EventTrace,
        pp_base: str,
        flags: frozenset[str] = frozenset(),
        port: int = 0,
    ):
        self.trace = trace
        self.pp_base = pp_base
        self.flags = flags
        self.st = ShopState()
        self.service = SimService("shop", port)
        self.service.route("GET", CHECKOUT_PATH, self.checkout)
        self.service.route("GET", RETURN_PATH, self.ret)
        self.service.route("POST", NOTIFY_PATH, self.notify)
        self.public_host: str | None = None

    @property
    def host(self) -> str:
        return self.public_host or self.service.host

    def start(self) -> None:
        self.service.start()

    def stop(self) -> None:
        self.service.stop()

    def checkout(self, req: SimRequest) -> SimResponse:
        amount = req.query.get("amount", PRICE_STANDARD)
        iid = uuid.uuid4().hex[:10]
        with self.st.lock:
            self.st.invoices[iid] = (amount, "created")
        self.trace.append("rp_checkout", (self.host, MERCHANT_ID, amount, iid), session=iid)
        return SimResponse.json(
            {
                "business": MERCHANT_ID,
                "amount": amount,
                "invoice": iid,
                "return": f"https://{self.host}{RETURN_PATH}",
                "notify_url": f"https://{self.host}{NOTIFY_PATH}",
            }
        )

    def ret(self, req: SimRequest) -> SimResponse:
        iid = req.query.get("invoice", "")
        with self.st.lock:
            entry = self.st.invoices.get(iid)
            if entry is None:
                return SimResponse.text("unknown invoice", 404)
            amount, _status = entry
            if self.st.invoices[iid][1] == "created":
                self.st.invoices[iid] = (amount, "processing")
        return SimResponse.text("Processing Order")

    def notify(self, req: SimRequest) -> SimResponse:
        merchant = req.form.get("business", "")
        amount = req.form.get("amount", "")
        iid = req.form.get("invoice", "")
        payer = req.form.get("payer_id", "")
        signature = req.form.get("signature", "")
        if "no-ipn-revalidation" not in self.flags:
            if not self._revalidate(req.form):
                return SimResponse.text("notification not verified", 403)
        if "no-merchant-check" not in self.flags:
            if merchant != MERCHANT_ID:
                return SimResponse.text("wrong merchant account", 403)
        if "no-token-freshness" not in self.flags:
            with self.st.lock:
                entry = self.st.invoices.get(iid)
                if entry is None or entry[0] != amount or entry[1] == "payed":
                    return SimResponse.text("payment does not match a pending invoice", 403)
                if payer and payer in self.st.used_payments:
                    return SimResponse.text("payment id replayed", 403)
        with self.st.lock:
            amount_now = self.st.invoices.get(iid, (amount, ""))[0]
            self.st.invoices[iid] = (amount_now, "payed")
            self.st.used_payments.add(payer)
        self.trace.append("rp_payed", (self.host, merchant, amount, iid, payer), session=iid)
        return SimResponse.text("OK")

    def _revalidate(self, fields: dict[str, str]) -> bool:
        try:
            resp = httpx.post(
                f"http://{self.pp_base}{VERIFY_PATH}",
                data={
                    "business": fields.get("business", ""),
                    "amount": fields.get("amount", ""),
                    "invoice": fields.get("invoice", ""),
                    "payer_id": fields.get("payer_id", ""),
                    "signature": fields.get("signature", ""),
                },
                timeout=10,
            )
        except httpx.HTTPError:
            return False
        return resp.status_code == 200 and resp.text == "VERIFIED"

    def payed_invoices(self) -> set[str]:
        with self.st.lock:
            return {i for i, (_, s) in self.st.invoices.items() if s == "payed"}


@dataclass
class PayPalState:
    payments: list[tuple[str, str, str]] = field(default_factory=list)  # (merchant, amount, payid)
    sent_ipns: list[dict[str, str]] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


class PayPalApp:
    """Payment provider: processes payments, notifies the shop's
    notification endpoint, and answers verification echoes."""

    def __init__(self, trace: EventTrace, port: int = 0):
        self.trace = trace
        self.st = PayPalState()
        self.service = SimService("paypal", port)
        self.service.route("POST", PAY_PATH, self.pay)
        self.service.route("POST", VERIFY_PATH, self.verify)
        self.public_host: str | None = None

    @property
    def host(self) -> str:
        return self.public_host or self.service.host

    def start(self) -> None:
        self.service.start()

    def stop(self) -> None:
        self.service.stop()

    def pay(self, req: SimRequest) -> SimResponse:
        merchant = req.form.get("business", "")
        amount = req.form.get("amount", "")
        iid = req.form.get("invoice", "")
        return_url = req.form.get("return", "")
        notify_url = req.form.get("notify_url", "")
        payid = uuid.uuid4().hex[:12]
        with self.st.lock:
            self.st.payments.append((merchant, amount, payid))
        self.trace.append("ttp_paid", (merchant, amount, payid), session=payid)
        ipn = {
            "business": merchant,
            "amount": amount,
            "invoice": iid,
            "payer_id": payid,
            "signature": ipn_signature(merchant, amount, payid),
        }
        with self.st.lock:
            self.st.sent_ipns.append(dict(ipn))
        self._send_ipn(notify_url, ipn)
        sep = "&" if "?" in return_url else "?"
        return SimResponse.redirect(f"{return_url}{sep}invoice={iid}")

    def _send_ipn(self, notify_url: str, fields: dict[str, str]) -> None:
        target = notify_url.replace("https://", "http://", 1)
        try:
            httpx.post(target, data=fields, timeout=10)
        except httpx.HTTPError:
            pass  # notification delivery failures are the shop's problem

    def verify(self, req: SimRequest) -> SimResponse:
        expected = ipn_signature(
            req.form.get("business", ""),
            req.form.get("amount", ""),
            req.form.get("payer_id", ""),
        )
        if hmac.compare_digest(expected, req.form.get("signature", "")):
            return SimResponse.text("VERIFIED")
        return SimResponse.text("INVALID", 403)
