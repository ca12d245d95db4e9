"""Command-line surface: synthesis artifacts, proxy serving, testbed runs."""

from __future__ import annotations

import importlib.resources as resources
import json

import pytest
from click.testing import CliRunner

from bulwark.cli import main

SPEC_DIR = resources.files("bulwark").joinpath("specs")


@pytest.fixture()
def runner():
    return CliRunner()


def test_check_command(runner):
    result = runner.invoke(main, ["check", "--spec", str(SPEC_DIR / "oauth.bw.pv")])
    assert result.exit_code == 0, result.output
    assert "3 participants" in result.output


def test_check_rejects_bad_spec(runner, tmp_path):
    bad = tmp_path / "bad.bw.pv"
    bad.write_text("let P = out(c, x).")
    result = runner.invoke(main, ["check", "--spec", str(bad)])
    assert result.exit_code != 0
    assert "unbound" in result.output or "undeclared" in result.output


def test_synthesize_writes_artifacts_and_manifest(runner, tmp_path):
    out = tmp_path / "build"
    result = runner.invoke(
        main,
        [
            "synthesize",
            "--spec",
            str(SPEC_DIR / "oauth.bw.pv"),
            "--inattentive",
            "RP",
            "--threat",
            "client-trusted",
            "--out",
            str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["placement"] == {"RPApp": "sw"}
    assert manifest["rejected"] == []
    mon_pv = out / "rpapp-sw.mon.pv"
    assert mon_pv.exists()
    mon_json = json.loads((out / "rpapp-sw.mon.json").read_text())
    assert mon_json["name"] == "RPServiceWorker"

    # the monitor artifact file is itself a parseable spec
    from bulwark.parser import parse_spec_file

    spec = parse_spec_file(str(mon_pv))
    assert spec.participants[0].name == "RPServiceWorker"


def test_synthesize_deterministic_artifacts(runner, tmp_path):
    args = [
        "synthesize",
        "--spec",
        str(SPEC_DIR / "oauth.bw.pv"),
        "--inattentive",
        "RPApp",
        "--out",
    ]
    out1, out2 = tmp_path / "b1", tmp_path / "b2"
    assert runner.invoke(main, args + [str(out1)]).exit_code == 0
    assert runner.invoke(main, args + [str(out2)]).exit_code == 0
    for name in ("manifest.json", "rpapp-sw.mon.pv", "rpapp-sw.mon.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_emit_sw_from_artifact(runner, tmp_path):
    build = tmp_path / "build"
    assert (
        runner.invoke(
            main,
            [
                "synthesize",
                "--spec",
                str(SPEC_DIR / "oauth.bw.pv"),
                "--inattentive",
                "RP",
                "--out",
                str(build),
            ],
        ).exit_code
        == 0
    )
    from bulwark.testbed.runner import oauth_monitor_config

    cfg_path = tmp_path / "rp.json"
    oauth_monitor_config("integrator.com", "idp.example", stateless=False).save(str(cfg_path))
    out = tmp_path / "swdist"
    result = runner.invoke(
        main,
        [
            "emit-sw",
            "--monitor",
            str(build / "rpapp-sw.mon.pv"),
            "--config",
            str(cfg_path),
            "--out",
            str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    assert (out / "bulwark-sw.js").exists()
    assert (out / "register-snippet.html").exists()


def test_testbed_command_attack_blocked(runner):
    result = runner.invoke(
        main,
        ["testbed", "--scenario", "cs2", "--attack", "session-swapping", "--with-monitors"],
    )
    assert result.exit_code == 0, result.output
    report = json.loads(result.output[result.output.index("{") :])
    assert report["completed"] is True
    assert report["attack_succeeded"] is False


def test_testbed_command_attack_succeeds_without_monitors(runner):
    result = runner.invoke(
        main, ["testbed", "--scenario", "cs2", "--attack", "session-swapping"]
    )
    assert result.exit_code == 1
    report = json.loads(result.output[result.output.index("{") :])
    assert report["attack_succeeded"] is True


def test_external_verifier_hook(tmp_path):
    """The external hook writes the monitored spec to a file, invokes the
    tool, and accepts only when every reported result line is true."""
    import importlib.resources as resources
    import os
    import stat

    from bulwark.cli import external_verifier
    from bulwark.parser import parse_spec_file
    from bulwark.transform import DeploymentOption, ThreatModel, build_monitors

    spec = parse_spec_file(
        str(resources.files("bulwark").joinpath("specs", "oauth.bw.pv"))
    )
    option = DeploymentOption((("RPApp", "proxy"),))
    monitors, _ = build_monitors(spec, ("RPApp",), option)

    def make_tool(lines: str) -> str:
        path = tmp_path / f"tool-{abs(hash(lines))}.sh"
        path.write_text("#!/bin/sh\n" + lines + "\n")
        path.chmod(path.stat().st_mode | stat.S_IXUSR)
        return str(path)

    accept = external_verifier(make_tool('echo "RESULT query 1 is true"'))
    ok, _ = accept(spec, ("RPApp",), option, monitors, ThreatModel())
    assert ok

    reject = external_verifier(
        make_tool('echo "RESULT q1 is true"; echo "RESULT q2 is false"')
    )
    ok, witness = reject(spec, ("RPApp",), option, monitors, ThreatModel())
    assert not ok and "false" in witness

    silent = external_verifier(make_tool('echo "no results here"'))
    ok, witness = silent(spec, ("RPApp",), option, monitors, ThreatModel())
    assert not ok
