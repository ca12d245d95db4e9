"""Attacks against the live testbed, with and without monitors.

Boots the simulated applications on loopback ports, replays the session
swapping attack against the vulnerable relying party, then deploys the
synthesized monitors and replays it again. The same honest login runs in
both configurations: the monitor blocks the attack, not the protocol.

Run:  python demos/03_attack_replay.py
"""

import importlib.resources as resources

from bulwark.parser import parse_spec_file
from bulwark.testbed import run_scenario
from bulwark.testbed.scenarios import CASE_STUDIES
from bulwark.transform import DeploymentOption, build_monitors

spec = parse_spec_file(str(resources.files("bulwark") / "specs" / "oauth.bw.pv"))
scenario = CASE_STUDIES["cs2"]  # relying party without the state check


def show(title: str, report) -> None:
    print(title)
    print(f"  honest flow completed: {report.completed}")
    print(f"  attack succeeded:      {report.attack_succeeded}")
    print(f"  detail:                {report.attack_detail}")
    print("  trace:")
    for line in report.trace_export.splitlines():
        symbol, session, args = line.split("\t")
        print(f"    {symbol:12s} session={session[:12]:12s} {args[:80]}")
    print()


report = run_scenario(scenario, attack="session-swapping")
show("without monitors (vulnerable):", report)

for kind in ("sw", "proxy"):
    monitors, _ = build_monitors(spec, ("RPApp",), DeploymentOption((("RPApp", kind),)))
    report = run_scenario(scenario, monitors, attack="session-swapping", spec=spec)
    show(f"with the {kind} monitor deployed:", report)
