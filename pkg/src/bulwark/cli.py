"""Command-line entry point: parse and check specs, synthesize monitors
with the deployment search, emit artifacts, run the reverse proxy, and
drive testbed scenarios. All subcommands are scriptable (no prompts) and
exit nonzero with a diagnostic on failure."""

from __future__ import annotations

import json
import logging
import os
import re
import subprocess
import sys
import tempfile

import click

from .astjson import participant_to_json
from .calculus import pretty_participant
from .parser import ParseError, SpecError, parse_spec_file, spec_to_source
from .swemit import DEFAULT_WORKER_NAME, emit_registration_snippet, emit_service_worker
from .transform import (
    DeploymentOption,
    NoSecurePlacement,
    ThreatModel,
    emit_monitor_spec,
    search_deployment,
)

log = logging.getLogger("bulwark")


@click.group()
def main() -> None:
    """Security-monitor synthesis for multi-party web protocols."""
    level = os.environ.get("BULWARK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _load_spec(path: str):
    try:
        return parse_spec_file(path)
    except (ParseError, SpecError) as exc:
        raise click.ClickException(f"{path}: {exc}") from exc


def _resolve_participants(spec, names: tuple[str, ...]) -> tuple[str, ...]:
    out = []
    for name in names:
        part = spec.participant(name) or spec.by_role(name)
        if part is None:
            raise click.ClickException(f"no participant or role named `{name}`")
        out.append(part.name)
    return tuple(out)


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
def check(spec_path: str) -> None:
    """Parse a spec and report its contents."""
    spec = _load_spec(spec_path)
    click.echo(
        f"ok: {len(spec.participants)} participants, {len(spec.queries)} queries, "
        f"{len(spec.tables)} tables, {len(spec.ctors)} constructors"
    )
    for p in spec.participants:
        role = f" [{p.role}]" if p.role else ""
        click.echo(f"  participant {p.name}{role}")


def external_verifier(tool_path: str):
    """Verifier hook shelling out to a resolution-based verifier on the
    emitted monitored specification; accepts iff every reported RESULT
    line is true."""

    def hook(spec, inattentive, option, monitors, threat):
        from .transform import make_inattentive

        parts = list(spec.participants)
        for name in inattentive:
            ideal = spec.participant(name)
            parts[parts.index(ideal)] = make_inattentive(ideal, spec).participant
        from dataclasses import replace

        monitored = replace(
            spec,
            participants=tuple(parts) + tuple(monitors.values()),
            main=(),
        )
        with tempfile.NamedTemporaryFile("w", suffix=".pv", delete=False) as fh:
            fh.write(spec_to_source(monitored))
            path = fh.name
        try:
            proc = subprocess.run(
                [tool_path, path], capture_output=True, text=True, timeout=3600
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            return False, f"external verifier failed: {exc}"
        results = re.findall(r"RESULT .* is (true|false)", proc.stdout)
        if not results:
            return False, "external verifier reported no RESULT lines"
        if all(r == "true" for r in results):
            return True, None
        return False, f"{results.count('false')} queries reported false"

    return hook


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--inattentive", "inattentive", multiple=True, required=True,
              help="Participant name or role (repeatable).")
@click.option("--threat", type=click.Choice(["client-trusted", "client-untrusted"]),
              default="client-trusted", show_default=True)
@click.option("--verifier", default="testbed", show_default=True,
              help="`testbed` or `external:<path-to-tool>`.")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True),
              help="Protocol config for emitting deployable worker scripts.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def synthesize(spec_path: str, inattentive: tuple[str, ...], threat: str, verifier: str,
               config_path: str | None, out_dir: str) -> None:
    """Search monitor placements and write the chosen monitors to OUT."""
    spec = _load_spec(spec_path)
    names = _resolve_participants(spec, inattentive)
    threat_model = ThreatModel(client_trusted=(threat == "client-trusted"))
    if verifier == "testbed":
        from .testbed import oracle_verify

        hook = oracle_verify
    elif verifier.startswith("external:"):
        hook = external_verifier(verifier.split(":", 1)[1])
    else:
        raise click.ClickException(f"unknown verifier `{verifier}`")

    try:
        result = search_deployment(spec, frozenset(names), threat_model, hook)
    except NoSecurePlacement as exc:
        raise click.ClickException(str(exc)) from exc

    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "spec": os.path.basename(spec_path),
        "inattentive": sorted(result.inattentive),
        "threat": {"client_trusted": threat_model.client_trusted},
        "placement": {name: kind for name, kind in result.option.placements},
        "rejected": [
            {"option": opt.describe(), "witness": why} for opt, why in result.rejected
        ],
        "sw_warnings": list(result.sw_warnings),
        "artifacts": {},
    }
    for (name, kind), monitor in sorted(result.monitors.items()):
        stem = f"{name.lower()}-{kind}"
        mon_spec = emit_monitor_spec(spec, monitor, kind)
        pv_path = os.path.join(out_dir, f"{stem}.mon.pv")
        with open(pv_path, "w", encoding="utf-8") as fh:
            fh.write(spec_to_source(mon_spec))
        json_path = os.path.join(out_dir, f"{stem}.mon.json")
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(participant_to_json(monitor), fh, indent=2, sort_keys=True)
            fh.write("\n")
        manifest["artifacts"][f"{name}/{kind}"] = [
            os.path.basename(pv_path),
            os.path.basename(json_path),
        ]
        if kind == "sw" and config_path is not None:
            from .config import ProtocolConfig

            cfg = ProtocolConfig.load(config_path)
            worker_path = os.path.join(out_dir, DEFAULT_WORKER_NAME)
            with open(worker_path, "w", encoding="utf-8") as fh:
                fh.write(emit_service_worker(monitor.body, cfg))
            snippet_path = os.path.join(out_dir, "register-snippet.html")
            with open(snippet_path, "w", encoding="utf-8") as fh:
                fh.write(emit_registration_snippet(cfg))
            manifest["artifacts"][f"{name}/{kind}"] += [
                DEFAULT_WORKER_NAME,
                "register-snippet.html",
            ]
        elif kind == "sw":
            click.echo(
                "note: pass --config to emit the deployable worker script, "
                "or run `bulwark emit-sw` on the .mon.pv artifact",
                err=True,
            )
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"placement: {result.option.describe()}")
    click.echo(f"artifacts written to {out_dir}")


@main.command("emit-sw")
@click.option("--monitor", "monitor_path", required=True, type=click.Path(exists=True),
              help="Monitor spec (.mon.pv) produced by `synthesize`.")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def emit_sw(monitor_path: str, config_path: str, out_dir: str) -> None:
    """Compile a service-worker monitor with a concrete protocol config."""
    from .config import ProtocolConfig

    spec = _load_spec(monitor_path)
    if not spec.participants:
        raise click.ClickException("monitor file contains no participant")
    cfg = ProtocolConfig.load(config_path)
    os.makedirs(out_dir, exist_ok=True)
    worker = os.path.join(out_dir, DEFAULT_WORKER_NAME)
    with open(worker, "w", encoding="utf-8") as fh:
        fh.write(emit_service_worker(spec.participants[0].body, cfg))
    with open(os.path.join(out_dir, "register-snippet.html"), "w", encoding="utf-8") as fh:
        fh.write(emit_registration_snippet(cfg))
    click.echo(f"worker written to {worker}")


@main.command("run-proxy")
@click.option("--monitor", "monitor_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def run_proxy_cmd(monitor_path: str, config_path: str) -> None:
    """Run the reverse proxy for a synthesized monitor (blocks)."""
    from .config import ProtocolConfig
    from .proxy import run_proxy

    spec = _load_spec(monitor_path)
    if not spec.participants:
        raise click.ClickException("monitor file contains no participant")
    cfg = ProtocolConfig.load(config_path)
    handle = run_proxy(spec.participants[0].body, cfg)
    click.echo(f"proxy serving on {cfg.listen[0]}:{handle.port} -> upstream {cfg.upstream[0]}:{cfg.upstream[1]}")
    try:
        import threading

        threading.Event().wait()
    except KeyboardInterrupt:
        handle.stop()


@main.command()
@click.option("--scenario", "scenario_name", required=True)
@click.option("--attack", "attack_name", default=None)
@click.option("--with-monitors", is_flag=True, default=False,
              help="Deploy the monitors the placement search selects.")
@click.option("--report", "report_path", default=None, type=click.Path())
def testbed(scenario_name: str, attack_name: str | None, with_monitors: bool, report_path: str | None) -> None:
    """Run a testbed scenario; exit 0 iff the honest flow completed and the
    attack (if any) was blocked."""
    import importlib.resources as resources

    from .testbed import oracle_verify, run_scenario
    from .testbed.attacks import ATTACKS
    from .testbed.scenarios import CASE_STUDIES

    scenario = CASE_STUDIES.get(scenario_name)
    if scenario is None:
        raise click.ClickException(
            f"unknown scenario `{scenario_name}` (have: {', '.join(sorted(CASE_STUDIES))})"
        )
    if attack_name is not None and attack_name not in ATTACKS:
        raise click.ClickException(f"unknown attack `{attack_name}`")

    monitors = {}
    spec = None
    if with_monitors:
        if scenario.protocol == "paypal-ipn":
            spec_file = "paypal.bw.pv"
        elif scenario.stateless:
            spec_file = "oauth_stateless.bw.pv"
        else:
            spec_file = "oauth.bw.pv"
        spec_path = resources.files("bulwark").joinpath("specs", spec_file)
        spec = _load_spec(str(spec_path))
        inattentive = set()
        for flag in scenario.flags:
            role = "TTP" if flag == "no-reduri-binding" else "RP"
            part = spec.by_role(role)
            assert part is not None
            inattentive.add(part.name)
        result = search_deployment(spec, frozenset(inattentive), scenario.threat, oracle_verify)
        monitors = result.monitors
        if not scenario.threat.client_trusted:
            monitors = {k: v for k, v in monitors.items() if k[1] != "sw"}
        click.echo(f"deployed placement: {result.option.describe()}", err=True)

    report = run_scenario(scenario, monitors, attack=attack_name, spec=spec)
    payload = report.to_json()
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    click.echo(payload)
    ok = report.completed and (report.attack_succeeded is not True)
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
