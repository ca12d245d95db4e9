"""From a protocol model to its monitors, step by step.

Parses the OAuth 2.0 explicit-mode model, derives the inattentive relying
party (checks stripped, flow preserved), then synthesizes the two monitor
forms: the reverse proxy that re-centralizes the stripped checks, and the
service worker that enforces the client-observable subset keyed by the
browser session.

Run:  python demos/01_synthesis_walkthrough.py
"""

import importlib.resources as resources

from bulwark.calculus import pretty_participant
from bulwark.parser import parse_spec_file
from bulwark.transform import a2m_proxy, a2m_sw, make_inattentive

spec = parse_spec_file(str(resources.files("bulwark") / "specs" / "oauth.bw.pv"))
rp = spec.participant("RPApp")
ua = spec.participant("UAApp")

print("=" * 72)
print("1. The ideal relying party (session binding via the state value)")
print("=" * 72)
print(pretty_participant(rp))

print()
print("=" * 72)
print("2. Its inattentive variant: same message flow, checks forgotten")
print("=" * 72)
inattentive = make_inattentive(rp, spec)
print(pretty_participant(inattentive.participant))
print()
print("removed checks:")
for r in inattentive.removed:
    print(f"  - {r.kind}: {r.detail}")

print()
print("=" * 72)
print("3. The reverse-proxy monitor (relay channels, delayed checks)")
print("=" * 72)
proxy = a2m_proxy(rp, spec)
print(pretty_participant(proxy.participant))
print()
print("note: the session insert runs only after the monitor observes the")
print("state value in the relayed response; the session lookup guards the")
print("callback before anything is forwarded.")

print()
print("=" * 72)
print("4. The service-worker monitor (fetch API, browser-handle keying)")
print("=" * 72)
sw = a2m_sw(rp, ua, spec)
print(pretty_participant(sw.participant))
if sw.warnings:
    print()
    print("observability notes:")
    for w in sw.warnings:
        print(f"  - {w}")
