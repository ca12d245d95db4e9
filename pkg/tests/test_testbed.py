"""Scenario testbed: fixture self-validation, compatibility, payment
integrity, and report formats."""

from __future__ import annotations

import importlib.resources as resources
import json

import pytest

from bulwark.parser import parse_spec_file
from bulwark.runtime import EventTrace, check_correspondence
from bulwark.testbed import run_scenario
from bulwark.testbed.attacks import FLAG_ATTACKS
from bulwark.testbed.runner import ScenarioRuntime, detect_protocol, oracle_verify
from bulwark.testbed.scenarios import CASE_STUDIES, Scenario, scenario_from_dict
from bulwark.transform import DeploymentOption, ThreatModel, build_monitors

SPEC_DIR = resources.files("bulwark").joinpath("specs")

SELF_VALIDATION = [
    ("cs2", "session-swapping"),
    ("cs5", "stateless-login-csrf"),
    ("cs1", "code-redirection"),
    ("cs7", "forged-ipn"),
    ("cs6", "merchant-swap"),
    ("cs8", "token-replay"),
]


@pytest.mark.parametrize("cs,attack", SELF_VALIDATION)
def test_attack_fixture_self_validates(cs, attack):
    """Every attack script succeeds against its vulnerable scenario when no
    monitor is deployed, and the honest flow still completes."""
    report = run_scenario(CASE_STUDIES[cs], attack=attack)
    assert report.completed, f"honest flow broke in {cs}"
    assert report.attack_succeeded, f"{attack} did not succeed on vulnerable {cs}"


def test_scenario_flags_validated():
    with pytest.raises(ValueError):
        Scenario("bad", "oauth-explicit", frozenset({"no-merchant-check"}))


def test_scenario_json_roundtrip():
    s = CASE_STUDIES["cs6"]
    again = scenario_from_dict(json.loads(json.dumps(s.to_dict())))
    assert again == s


def test_run_report_json_shape():
    report = run_scenario(CASE_STUDIES["cs2"], attack="session-swapping")
    data = report.to_dict()
    assert set(data) == {
        "scenario",
        "completed",
        "attack",
        "attack_succeeded",
        "attack_detail",
        "trace",
    }
    for line in data["trace"]:
        symbol, session, args = line.split("\t")
        assert symbol and isinstance(args, str)


def test_detect_protocol():
    oauth = parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))
    stateless = parse_spec_file(str(SPEC_DIR / "oauth_stateless.bw.pv"))
    paypal = parse_spec_file(str(SPEC_DIR / "paypal.bw.pv"))
    assert detect_protocol(oauth) == ("oauth-explicit", False)
    assert detect_protocol(stateless) == ("oauth-explicit", True)
    assert detect_protocol(paypal) == ("paypal-ipn", False)


def test_compatibility_under_both_monitors():
    """Honest completion is invariant under monitor insertion."""
    spec = parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))
    monitors, _ = build_monitors(
        spec, ("RPApp",), DeploymentOption((("RPApp", "both"),))
    )
    report = run_scenario(CASE_STUDIES["cs2"], monitors, spec=spec)
    assert report.completed


def test_paypal_amount_integrity():
    """With the shop proxy deployed, an invoice reaches the payed state
    only when the notification's amount and merchant match the checkout
    and the provider's verification answered positively."""
    spec = parse_spec_file(str(SPEC_DIR / "paypal.bw.pv"))
    monitors, _ = build_monitors(
        spec, ("ShopApp",), DeploymentOption((("ShopApp", "proxy"),))
    )
    rt = ScenarioRuntime(CASE_STUDIES["cs7"], monitors, spec)
    try:
        browser = rt.new_browser("b-payer")
        assert rt.paypal_honest_flow(browser)
        assert rt.shop.payed_invoices()
        # every payed invoice is explained by a checkout and a provider payment
        trace = rt.trace.events()
        payed = [e for e in trace if e.symbol == "rp_payed"]
        checkouts = {(e.args[1], e.args[2], e.args[3]) for e in trace if e.symbol == "rp_checkout"}
        payments = {(e.args[0], e.args[1]) for e in trace if e.symbol == "ttp_paid"}
        for e in payed:
            _, merchant, amount, iid, payid = e.args
            assert (merchant, amount, iid) in checkouts
            assert (merchant, amount) in payments
    finally:
        rt.stop()


def test_oracle_rejects_unmonitored_vulnerable_option():
    """The oracle rejects an option whose monitors do not stop the
    relevant attack."""
    spec = parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))
    ok, witness = oracle_verify(
        spec, ("RPApp",), DeploymentOption((("RPApp", "sw"),)), {}, ThreatModel()
    )
    assert not ok
    assert "session-swapping" in (witness or "")


def test_oracle_accepts_working_placement():
    spec = parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))
    monitors, _ = build_monitors(spec, ("RPApp",), DeploymentOption((("RPApp", "sw"),)))
    ok, witness = oracle_verify(
        spec, ("RPApp",), DeploymentOption((("RPApp", "sw"),)), monitors, ThreatModel()
    )
    assert ok, witness


def test_queries_hold_on_honest_trace():
    spec = parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))
    report = run_scenario(CASE_STUDIES["cs2"], {}, spec=spec)
    assert report.completed
    trace = EventTrace.parse(report.trace_export)
    for q in spec.queries:
        from bulwark.calculus import Correspondence

        if isinstance(q, Correspondence):
            assert check_correspondence(trace, q).holds


def test_attack_trace_violates_query_without_monitor():
    """The recorded session-swapping run violates the authentication
    query: the victim's completion has no matching protocol start."""
    spec = parse_spec_file(str(SPEC_DIR / "oauth.bw.pv"))
    report = run_scenario(CASE_STUDIES["cs2"], attack="session-swapping")
    assert report.attack_succeeded
    trace = EventTrace.parse(report.trace_export)
    verdict = check_correspondence(trace, spec.queries[0])
    assert not verdict.holds
