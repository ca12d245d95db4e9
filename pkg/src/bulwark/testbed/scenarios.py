"""Scenario definitions: protocol, participant endpoints, seeded
vulnerability flags and the threat model."""

from __future__ import annotations

import json
import socket
from dataclasses import dataclass, field

from ..transform import ThreatModel

PROTOCOLS = ("oauth-explicit", "paypal-ipn")

# vulnerability flags and the attack they admit
VULN_FLAGS = {
    "no-state-check": "#13",
    "stateless-rp": "#14",
    "no-reduri-binding": "#17",
    "no-ipn-revalidation": "#18",
    "no-merchant-check": "#20",
    "no-token-freshness": "#21",
}

OAUTH_FLAGS = {"no-state-check", "stateless-rp", "no-reduri-binding"}
PAYPAL_FLAGS = {"no-ipn-revalidation", "no-merchant-check", "no-token-freshness"}


@dataclass(frozen=True)
class Scenario:
    name: str
    protocol: str
    flags: frozenset[str] = frozenset()
    threat: ThreatModel = ThreatModel()

    def __post_init__(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol `{self.protocol}`")
        allowed = OAUTH_FLAGS if self.protocol == "oauth-explicit" else PAYPAL_FLAGS
        bogus = self.flags - allowed
        if bogus:
            raise ValueError(f"flags {sorted(bogus)} not valid for {self.protocol}")

    @property
    def stateless(self) -> bool:
        return "stateless-rp" in self.flags

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "protocol": self.protocol,
            "flags": sorted(self.flags),
            "threat": {
                "client_trusted": self.threat.client_trusted,
                "network_attacker": self.threat.network_attacker,
            },
        }


def scenario_from_dict(data: dict) -> Scenario:
    threat = data.get("threat", {})
    return Scenario(
        name=data["name"],
        protocol=data["protocol"],
        flags=frozenset(data.get("flags", [])),
        threat=ThreatModel(
            client_trusted=bool(threat.get("client_trusted", True)),
            network_attacker=bool(threat.get("network_attacker", False)),
        ),
    )


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


# desk-scale analogs of the evaluated case studies
CASE_STUDIES: dict[str, Scenario] = {
    # artificial RP + artificial IdP, both vulnerable
    "cs1": Scenario("cs1", "oauth-explicit", frozenset({"no-state-check", "no-reduri-binding"})),
    # RP on a public IdP SDK, missing the state check
    "cs2": Scenario("cs2", "oauth-explicit", frozenset({"no-state-check"})),
    "cs3": Scenario("cs3", "oauth-explicit", frozenset({"no-state-check"})),
    "cs4": Scenario("cs4", "oauth-explicit", frozenset({"no-state-check"})),
    # RP without the state parameter entirely
    "cs5": Scenario("cs5", "oauth-explicit", frozenset({"stateless-rp"})),
    # checkout integrations; customers are untrusted clients
    "cs6": Scenario(
        "cs6",
        "paypal-ipn",
        frozenset({"no-ipn-revalidation", "no-merchant-check"}),
        ThreatModel(client_trusted=False),
    ),
    "cs7": Scenario(
        "cs7", "paypal-ipn", frozenset({"no-ipn-revalidation"}), ThreatModel(client_trusted=False)
    ),
    "cs8": Scenario(
        "cs8", "paypal-ipn", frozenset({"no-token-freshness"}), ThreatModel(client_trusted=False)
    ),
}


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]
