"""Worker emission: from the abstract monitor to a deployable script.

Synthesizes the service-worker monitor for the relying party, instantiates
it with a concrete protocol configuration (hosts, paths, parameter names,
carriers), and writes the worker script plus the registration snippet.

Run:  python demos/04_emit_worker.py   (writes into build/worker-demo/)
"""

import importlib.resources as resources
from pathlib import Path

from bulwark.parser import parse_spec_file
from bulwark.swemit import emit_registration_snippet, emit_service_worker
from bulwark.testbed.runner import oauth_monitor_config
from bulwark.transform import a2m_sw

spec = parse_spec_file(str(resources.files("bulwark") / "specs" / "oauth.bw.pv"))
sw = a2m_sw(spec.participant("RPApp"), spec.participant("UAApp"), spec)

# the worked example from the service-worker configuration excerpt
cfg = oauth_monitor_config("integrator.com", "www.facebook.com", stateless=False)

out = Path("build/worker-demo")
out.mkdir(parents=True, exist_ok=True)
worker = out / "bulwark-sw.js"
worker.write_text(emit_service_worker(sw.participant.body, cfg))
snippet = out / "register-snippet.html"
snippet.write_text(emit_registration_snippet(cfg))

print(f"wrote {worker} ({worker.stat().st_size} bytes)")
print(f"wrote {snippet}")
print()
print("worker head:")
for line in worker.read_text().splitlines()[:24]:
    print(f"  {line}")
