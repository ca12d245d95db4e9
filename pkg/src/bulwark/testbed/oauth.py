"""Simulated OAuth 2.0 explicit-mode participants: a relying party and an
identity provider, with seedable vulnerabilities.

Wire shape mirrors common provider integrations: the login page returns a
JSON page `{"link": ...}` pointing at the provider's dialog; the dialog
returns `{"action": ...}`; the authorization form posts credentials; the
provider redirects back to the relying party's callback with `code` (and
`state` unless the stateless variant is active); the relying party
exchanges the code server-to-server and answers `Logged in`.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field

import httpx

from ..runtime import EventTrace
from .httpbase import SimRequest, SimResponse, SimService

SESSION_COOKIE = "session"
LOGIN_PATH = "/login"
CALLBACK_PATH = "/fb-callback"
DIALOG_PATH = "/dialog"
AUTH_FORM_PATH = "/authorize"
TOKEN_PATH = "/token"

APP_ID = "390639"
APP_SECRET = "s3cr3t-rp"

USERS = {"alice": "alice-pw", "mallory": "mallory-pw"}


@dataclass
class RpState:
    sessions: dict[str, str] = field(default_factory=dict)  # sid -> state ("" when stateless)
    logins: dict[str, str] = field(default_factory=dict)  # sid -> access token
    lock: threading.Lock = field(default_factory=threading.Lock)


class RpApp:
    """Relying party. `stateless` selects the protocol variant without a
    state parameter. Vulnerability flags:
    no-state-check  - accepts any state at the callback
    stateless-rp    - (stateless variant) skips the login-in-progress check
    """

    def __init__(
        self,
        trace: EventTrace,
        idp_base: str,
        stateless: bool = False,
        flags: frozenset[str] = frozenset(),
        port: int = 0,
    ):
        self.trace = trace
        self.idp_base = idp_base
        self.flags = flags
        self.stateless = stateless
        self.state_mode = not self.stateless
        self.st = RpState()
        self.service = SimService("rp", port)
        self.service.route("GET", LOGIN_PATH, self.login)
        self.service.route("GET", CALLBACK_PATH, self.callback)
        self.public_host: str | None = None  # set when fronted by a proxy

    @property
    def host(self) -> str:
        return self.public_host or self.service.host

    @property
    def reduri(self) -> str:
        return f"https://{self.host}{CALLBACK_PATH}"

    def start(self) -> None:
        self.service.start()

    def stop(self) -> None:
        self.service.stop()

    def _vulnerable(self, flag: str) -> bool:
        return flag in self.flags

    def login(self, req: SimRequest) -> SimResponse:
        sid = uuid.uuid4().hex
        state = uuid.uuid4().hex[:12] if self.state_mode else ""
        with self.st.lock:
            self.st.sessions[sid] = state
        params = {"client_id": APP_ID, "redirect_uri": self.reduri}
        if self.state_mode:
            params["state"] = state
        qs = "&".join(f"{k}={v}" for k, v in params.items())
        link = f"https://{self.idp_base}{DIALOG_PATH}?{qs}"
        args = (self.host, self.idp_base, sid, APP_ID, self.reduri) + (
            (state,) if self.state_mode else ()
        )
        self.trace.append("rp_begin", args, session=sid)
        return SimResponse.json(
            {"link": link},
            headers=[("Set-Cookie", f"{SESSION_COOKIE}={sid}; Path=/")],
        )

    def callback(self, req: SimRequest) -> SimResponse:
        sid = req.cookies.get(SESSION_COOKIE, "")
        code = req.query.get("code", "")
        state = req.query.get("state", "")
        if self.state_mode:
            if not self._vulnerable("no-state-check"):
                with self.st.lock:
                    expected = self.st.sessions.get(sid)
                if not sid or expected is None or expected != state:
                    return SimResponse.text("state mismatch", 403)
        else:
            if not self._vulnerable("stateless-rp"):
                with self.st.lock:
                    initiated = sid in self.st.sessions
                if not initiated:
                    return SimResponse.text("no login in progress", 403)
        token = self._exchange_code(code)
        if token is None:
            return SimResponse.text("code exchange failed", 502)
        with self.st.lock:
            self.st.logins[sid] = token
        args = (self.host, self.idp_base, sid, APP_ID, self.reduri, APP_SECRET) + (
            (state,) if self.state_mode else ()
        ) + (code, token)
        self.trace.append("rp_end", args, session=sid)
        return SimResponse.text("Logged in")

    def _exchange_code(self, code: str) -> str | None:
        params = {
            "client_id": APP_ID,
            "redirect_uri": self.reduri,
            "client_secret": APP_SECRET,
            "code": code,
        }
        try:
            resp = httpx.get(f"http://{self.idp_base}{TOKEN_PATH}", params=params, timeout=10)
        except httpx.HTTPError:
            return None
        if resp.status_code != 200:
            return None
        return resp.json().get("access_token")


@dataclass
class IdpState:
    codes: dict[str, tuple[str, str]] = field(default_factory=dict)  # code -> (reduri, user)
    tokens: dict[str, str] = field(default_factory=dict)  # token -> user
    lock: threading.Lock = field(default_factory=threading.Lock)


class IdpApp:
    """Identity provider. Vulnerability flag:
    no-reduri-binding - the token endpoint does not check that the code was
                        issued for the presented redirect URI
    """

    def __init__(
        self,
        trace: EventTrace,
        flags: frozenset[str] = frozenset(),
        port: int = 0,
    ):
        self.trace = trace
        self.flags = flags
        self.st = IdpState()
        self.service = SimService("idp", port)
        self.service.route("GET", DIALOG_PATH, self.dialog)
        self.service.route("POST", AUTH_FORM_PATH, self.authorize)
        self.service.route("GET", TOKEN_PATH, self.token)
        self.public_host: str | None = None

    @property
    def host(self) -> str:
        return self.public_host or self.service.host

    def start(self) -> None:
        self.service.start()

    def stop(self) -> None:
        self.service.stop()

    def dialog(self, req: SimRequest) -> SimResponse:
        if req.query.get("client_id") != APP_ID:
            return SimResponse.text("unknown client", 403)
        reduri = req.query.get("redirect_uri", "")
        state = req.query.get("state", "")
        params = {"client_id": APP_ID, "redirect_uri": reduri}
        if state:
            params["state"] = state
        qs = "&".join(f"{k}={v}" for k, v in params.items())
        action = f"https://{self.host}{AUTH_FORM_PATH}?{qs}"
        return SimResponse.json({"action": action})

    def authorize(self, req: SimRequest) -> SimResponse:
        user = req.form.get("username", "")
        password = req.form.get("password", "")
        if USERS.get(user) != password:
            return SimResponse.text("bad credentials", 403)
        reduri = req.form.get("redirect_uri", "")
        state = req.form.get("state", "")
        code = uuid.uuid4().hex[:16]
        with self.st.lock:
            self.st.codes[code] = (reduri, user)
        self.trace.append("ttp_begin", (self.host, reduri, code), session=user)
        sep = "&" if "?" in reduri else "?"
        target = f"{reduri}{sep}code={code}"
        if state:
            target += f"&state={state}"
        return SimResponse.redirect(target)

    def token(self, req: SimRequest) -> SimResponse:
        if req.query.get("client_id") != APP_ID or req.query.get("client_secret") != APP_SECRET:
            return SimResponse.text("bad client credentials", 403)
        code = req.query.get("code", "")
        reduri = req.query.get("redirect_uri", "")
        with self.st.lock:
            entry = self.st.codes.get(code)
        if entry is None:
            return SimResponse.text("unknown code", 403)
        bound_reduri, user = entry
        if "no-reduri-binding" not in self.flags and bound_reduri != reduri:
            return SimResponse.text("code not bound to this redirect uri", 403)
        token = uuid.uuid4().hex
        with self.st.lock:
            self.st.tokens[token] = user
        self.trace.append("ttp_end", (self.host, reduri, code, token), session=user)
        return SimResponse.json({"access_token": token})
