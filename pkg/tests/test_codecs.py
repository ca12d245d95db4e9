"""Wire codecs: carrier serialization conformance and message decoding."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from bulwark.calculus import Bind, Const, Ctor, CtorPat, Eq, TuplePat, Var
from bulwark.config import (
    AbstractHttpMessage,
    Codec,
    CodecError,
    MatchFailure,
    ProtocolConfig,
    decode,
    encode,
    parse_carrier,
    serialize_carrier,
    term_to_wire,
)
from bulwark.testbed.runner import oauth_monitor_config

CORPUS_PATH = Path(__file__).resolve().parents[1] / "conformance" / "codec-conformance.json"
CORPUS = json.loads(CORPUS_PATH.read_text())["entries"]


def test_corpus_covers_all_carriers_and_is_large_enough():
    carriers = {e["carrier"] for e in CORPUS}
    assert carriers == {"query-string", "form-body", "json-body", "path-segment", "header", "cookie"}
    assert len(CORPUS) >= 50


@pytest.mark.parametrize("entry", CORPUS, ids=[e["id"] for e in CORPUS])
def test_serialize_matches_frozen_encoding(entry):
    values = [tuple(v) for v in entry["values"]]
    assert serialize_carrier(entry["carrier"], values) == entry["encoded"]


@pytest.mark.parametrize("entry", CORPUS, ids=[e["id"] for e in CORPUS])
def test_parse_recovers_values(entry):
    names = [f[0] for f in entry["fields"]]
    parsed = parse_carrier(entry["carrier"], entry["encoded"], names)
    assert parsed == [tuple(v) for v in entry["values"]]


def test_malformed_json_body_is_codec_error():
    with pytest.raises(CodecError):
        parse_carrier("json-body", "{not json")


def test_malformed_pair_is_codec_error():
    with pytest.raises(CodecError):
        parse_carrier("query-string", "novalue&x=1")


# ---------------------------------------------------------------------------
# message decoding against the worker-config example
# ---------------------------------------------------------------------------


@pytest.fixture()
def cfg() -> ProtocolConfig:
    return oauth_monitor_config("integrator.com", "www.facebook.com", stateless=False)


DIALOG_PATTERN = CtorPat(
    "uri",
    (
        Eq(Ctor("https", ())),
        Eq(Var("fb")),
        Eq(Ctor("oauthpath", ())),
        CtorPat(
            "codereqparams",
            (Eq(Const("appid")), Eq(Var("reduri")), Bind("state", None)),
        ),
    ),
)


def dialog_request(client_id: str) -> AbstractHttpMessage:
    return AbstractHttpMessage(
        direction="request",
        method="GET",
        scheme="https",
        host="www.facebook.com",
        path="/dialog",
        query=(
            ("client_id", client_id),
            ("redirect_uri", "integrator.com/fb-callback"),
            ("state", "5d938a"),
        ),
    )


def test_decode_dialog_url_binds_state(cfg):
    from bulwark.config import match_component

    msg = dialog_request("390639")
    env = {"fb": "www.facebook.com", "reduri": "integrator.com/fb-callback"}
    match_component(msg, msg.url(), DIALOG_PATTERN, cfg, env)
    assert env["state"] == "5d938a"


def test_decode_dialog_url_wrong_client_id_fails(cfg):
    from bulwark.config import match_component

    msg = dialog_request("999")
    env = {"fb": "www.facebook.com", "reduri": "integrator.com/fb-callback"}
    with pytest.raises(MatchFailure):
        match_component(msg, msg.url(), DIALOG_PATTERN, cfg, env)


def test_encode_path_constant(cfg):
    assert term_to_wire(Ctor("loginpath", ()), {}, cfg) == "/login"


def test_encode_empty_params(cfg):
    assert term_to_wire(Ctor("nullParams", ()), {}, cfg) == ""


def test_encode_token_request_form_order_preserved():
    """With a form-body codec, the token-exchange fields keep their
    configured wire order."""
    cfg = ProtocolConfig(
        symbols={"appid": "390639", "appsecret": "s3", "fb": "idp.example", "tokenpath": "/token"},
        constructors={
            "tokenreqparams": Codec(
                "form-body",
                (
                    ("client_id", "string"),
                    ("redirect_uri", "url"),
                    ("client_secret", "string"),
                    ("code", "string"),
                ),
            )
        },
    )
    term = Ctor(
        "tokenreqparams",
        (Const("appid"), Var("reduri"), Const("appsecret"), Var("code")),
    )
    env = {"reduri": "https://integrator.com/fb-callback", "code": "c0de"}
    wire = term_to_wire(term, env, cfg)
    assert wire == (
        "client_id=390639&redirect_uri=https%3A%2F%2Fintegrator.com%2Ffb-callback"
        "&client_secret=s3&code=c0de"
    )


def test_encode_decode_request_roundtrip(cfg):
    """encode then decode re-yields the monitored fields byte for byte."""
    term = Ctor(
        "uri",
        (
            Ctor("https", ()),
            Var("fb"),
            Ctor("oauthpath", ()),
            Ctor("codereqparams", (Const("appid"), Var("reduri"), Var("state"))),
        ),
    )
    env = {
        "fb": "www.facebook.com",
        "reduri": "integrator.com/fb-callback",
        "state": "5d938a",
    }
    msg = encode(env, term, cfg)
    assert msg.url() == (
        "https://www.facebook.com/dialog?client_id=390639"
        "&redirect_uri=integrator.com%2Ffb-callback&state=5d938a"
    )
    from bulwark.config import match_component

    out_env = {"fb": env["fb"], "reduri": env["reduri"]}
    match_component(msg, msg.url(), DIALOG_PATTERN, cfg, out_env)
    assert out_env["state"] == env["state"]


def test_full_message_decode(cfg):
    """Decoding a complete reception tuple binds the slot variables."""
    pattern = TuplePat(
        (
            Bind("u", "Uri"),
            Bind("hs", "Headers"),
            Bind("m", "HttpRequest"),
            Bind("corr", "bitstring"),
        )
    )
    msg = AbstractHttpMessage(
        direction="request",
        method="GET",
        scheme="https",
        host="integrator.com",
        path="/login",
        cookies=(("session", "sid-1"),),
        correlation_id="c-1",
    )
    env = decode(msg, pattern, cfg)
    assert env["u"] == "https://integrator.com/login"
    assert env["hs"] == "sid-1"
    assert env["m"] == "GET"
    assert env["corr"] == "c-1"


def test_integer_transform_canonicalizes():
    from bulwark.config import apply_transform

    assert apply_transform("42", "integer") == "42"
    with pytest.raises(CodecError):
        apply_transform("4x", "integer")


def test_url_transform_validates():
    from bulwark.config import apply_transform

    assert apply_transform("https://a.example/x", "url") == "https://a.example/x"
    with pytest.raises(CodecError):
        apply_transform("", "url")
    with pytest.raises(CodecError):
        apply_transform("not a url", "url")
