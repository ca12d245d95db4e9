"""Placement search across the case-study analogs.

Enumerates monitor placements in increasing order of deployment effort
(service worker, then proxy, then both) and verifies each candidate with
the scenario oracle: the honest flow must complete, every relevant attack
must fail, and the authentication/payment queries must hold over the
recorded traces. Prints the chosen placement and the rejected options per
experiment.

Run:  python demos/02_deployment_search.py          (about a minute)
"""

import importlib.resources as resources
import time

from bulwark.parser import parse_spec_file
from bulwark.testbed import oracle_verify
from bulwark.transform import ThreatModel, search_deployment

SPECS = resources.files("bulwark") / "specs"
oauth = parse_spec_file(str(SPECS / "oauth.bw.pv"))
stateless = parse_spec_file(str(SPECS / "oauth_stateless.bw.pv"))
paypal = parse_spec_file(str(SPECS / "paypal.bw.pv"))

trusted = ThreatModel()
untrusted = ThreatModel(client_trusted=False)

EXPERIMENTS = [
    ("login, provider inattentive", oauth, {"IdPApp"}, trusted),
    ("login, integrator inattentive", oauth, {"RPApp"}, trusted),
    ("login, both inattentive", oauth, {"RPApp", "IdPApp"}, trusted),
    ("login without state, integrator inattentive", stateless, {"RPApp"}, trusted),
    ("checkout, shop inattentive (untrusted customers)", paypal, {"ShopApp"}, untrusted),
]

for title, spec, inattentive, threat in EXPERIMENTS:
    t0 = time.monotonic()
    result = search_deployment(spec, frozenset(inattentive), threat, oracle_verify)
    elapsed = time.monotonic() - t0
    print(f"{title}")
    print(f"  chosen:   {result.option.describe()}   ({elapsed:.1f}s)")
    for option, witness in result.rejected:
        print(f"  rejected: {option.describe()} -- {witness}")
    print()
