"""End-to-end CLI behavior and exit codes."""

from __future__ import annotations

import json

import pytest

from conftest import write_fixture_repo
from envforge.cli import main
from envforge.trace import parse_trace


def test_classify_subcommand(capsys):
    assert main(["classify", "cat README.md"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["kind"] == "safe"
    assert main(["classify", "pip install 'B>=1.0,<2.0'"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["kind"] == "install"
    assert out["installs"] == [{"tool": "pip", "package": "B", "constraint": ">=1.0,<2.0"}]


def test_classify_unparsable_line(capsys):
    assert main(["classify", "echo 'unterminated"]) == 1
    assert "error" in capsys.readouterr().err


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as excinfo:
        main(["eval", "bench.jsonl", "--definitely-not-a-flag"])
    assert excinfo.value.code == 2


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as excinfo:
        main(["frobnicate"])
    assert excinfo.value.code == 2


def test_build_and_replay_fixture(tmp_path, capsys):
    fixture = write_fixture_repo(tmp_path / "fixture")
    out = tmp_path / "out"
    rc = main(
        [
            "build",
            "--repo", str(fixture),
            "--policy", f"scripted:{fixture / 'actions.json'}",
            "--backend", "sim",
            "-o", str(out),
        ]
    )
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "outcome: verified" in stdout
    trace_path = next(out.glob("*.trace.jsonl"))
    trace = parse_trace(trace_path.read_bytes())
    assert trace.outcome == "verified"
    dockerfile = out / "Dockerfile"
    assert dockerfile.read_text().startswith("FROM python:3.10")

    rc = main(["replay", str(out), "--backend", "sim", "--fixture", str(fixture)])
    assert rc == 0
    replay_out = capsys.readouterr().out
    assert "dockerfile_built: true" in replay_out
    assert "tests_ran: true" in replay_out


def test_build_with_malformed_sim_config_exits_1(tmp_path, capsys):
    bad = tmp_path / "sim.json"
    bad.write_text("{not valid json")
    fixture = write_fixture_repo(tmp_path / "fixture")
    rc = main(
        [
            "build",
            "--repo", str(fixture),
            "--policy", f"scripted:{fixture / 'actions.json'}",
            "--backend", "sim",
            "--sim-config", str(bad),
            "-o", str(tmp_path / "out"),
        ]
    )
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_build_unverified_exits_1(tmp_path, capsys):
    fixture = write_fixture_repo(tmp_path / "fixture", actions=["echo hopeless"])
    rc = main(
        [
            "build",
            "--repo", str(fixture),
            "--policy", f"scripted:{fixture / 'actions.json'}",
            "--backend", "sim",
            "-o", str(tmp_path / "out"),
            "--budget-turns", "3",
        ]
    )
    assert rc == 1
    err = capsys.readouterr().err
    assert "did not verify" in err


def test_synthesize_subcommand(tmp_path, capsys):
    fixture = write_fixture_repo(tmp_path / "fixture")
    out = tmp_path / "out"
    main(
        [
            "build",
            "--repo", str(fixture),
            "--policy", f"scripted:{fixture / 'actions.json'}",
            "--backend", "sim",
            "-o", str(out),
        ]
    )
    capsys.readouterr()
    trace_path = next(out.glob("*.trace.jsonl"))
    out2 = tmp_path / "resynth"
    assert main(["synthesize", str(trace_path), "-o", str(out2)]) == 0
    assert (out2 / "Dockerfile").read_bytes() == (out / "Dockerfile").read_bytes()


def test_eval_subcommand_scores_and_writes_reports(tmp_path, capsys):
    fixtures = [
        write_fixture_repo(tmp_path / "ok_a"),
        write_fixture_repo(tmp_path / "ok_b", test_profile="runs_fail"),
        write_fixture_repo(tmp_path / "ok_c"),
        write_fixture_repo(tmp_path / "stuck", actions=["echo nope"]),
    ]
    bench = tmp_path / "bench.jsonl"
    bench.write_text(
        "\n".join(
            json.dumps({"full_name": f"acme/{f.name}", "sha": "", "source": str(f)})
            for f in fixtures
        )
        + "\n"
    )
    report_path = tmp_path / "report.json"
    rc = main(
        [
            "eval", str(bench),
            "--backend", "sim",
            "--out", str(report_path),
            "--workdir", str(tmp_path / "work"),
            "--budget-turns", "8",
            "--jobs", "2",
        ]
    )
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "ebsr=0.750" in stdout
    data = json.loads(report_path.read_text())
    assert data["aggregate"]["n"] == 4
    assert data["aggregate"]["ebsr"] == 0.75
    assert (tmp_path / "report.csv").exists()
    assert (tmp_path / "time_histogram.png").exists()


def test_eval_no_figures(tmp_path, capsys):
    fixture = write_fixture_repo(tmp_path / "only")
    bench = tmp_path / "bench.jsonl"
    bench.write_text(
        json.dumps({"full_name": "acme/only", "sha": "", "source": str(fixture)}) + "\n"
    )
    rc = main(
        [
            "eval", str(bench),
            "--backend", "sim",
            "--out", str(tmp_path / "r.json"),
            "--workdir", str(tmp_path / "work"),
            "--no-figures",
        ]
    )
    assert rc == 0
    assert not (tmp_path / "r.csv").exists()
    assert not (tmp_path / "time_histogram.png").exists()
