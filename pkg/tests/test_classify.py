"""Shell line classification: safe list, redirects, install/export parsing."""

from __future__ import annotations

import random

import pytest

from envforge.classify import (
    SAFE_COMMANDS,
    Classification,
    InstallSpec,
    UnparsableLineError,
    UnsupportedFlagError,
    classify,
    parse_install_specs,
    safe_list,
)
from envforge.shell import ShellSyntaxError, parse_line
from envforge.trace import Command


def test_safe_list_is_the_fixed_allowlist():
    commands = safe_list()
    assert commands == SAFE_COMMANDS
    assert len(commands) == 44
    assert "grep" in commands
    assert "pip" not in commands
    assert "tee" in commands  # listed even though it can write files


def test_plain_observation_commands_are_safe():
    assert classify("cat README.md").kind == "safe"
    assert classify("grep pattern file.txt").kind == "safe"
    assert classify("cd /repo").kind == "safe"


def test_redirection_disqualifies_safe():
    assert classify("cat a.txt > b.txt").kind == "mutating"
    assert classify("echo hi >> log.txt").kind == "mutating"
    assert classify("sort data 2> errs").kind == "mutating"


def test_quoted_angle_bracket_is_not_a_redirect():
    assert classify("echo 'a > b'").kind == "safe"
    assert classify('grep ">" file.txt').kind == "safe"


def test_pipeline_safe_only_when_every_stage_safe():
    assert classify("cat x.txt | grep y | head -n 3").kind == "safe"
    assert classify("cat x.txt | python").kind == "mutating"


def test_chain_classified_by_most_dangerous_member():
    assert classify("cd /repo && ls").kind == "safe"
    assert classify("cd /repo && make").kind == "mutating"
    assert classify("cd /repo && pip install x").kind == "mutating"


def test_install_classification():
    cls = classify("pip install cupy")
    assert cls.kind == "install"
    assert cls.installs == (InstallSpec(tool="pip", package="cupy"),)
    assert classify("pip3 install requests").kind == "install"
    assert classify("pip install --no-deps 'A>=2'").kind == "install"
    assert classify("pip list").kind == "mutating"
    assert classify("apt-get update").kind == "mutating"


def test_install_spec_parsing():
    specs = parse_install_specs("pip install 'B>=1.0,<2.0'")
    assert specs == (InstallSpec(tool="pip", package="B", constraint=">=1.0,<2.0"),)
    specs = parse_install_specs("apt-get install -y curl")
    assert specs == (InstallSpec(tool="apt", package="curl"),)
    specs = parse_install_specs("pip install -r requirements.txt")
    assert specs == (
        InstallSpec(tool="pip", package=None, requirements_file="requirements.txt"),
    )


def test_install_spec_mixture_and_flags():
    specs = parse_install_specs("pip install -U 'a==1.2' b -r reqs.txt")
    names = [(s.package, s.constraint, s.requirements_file) for s in specs]
    assert names == [("a", "==1.2", None), ("b", "", None), (None, "", "reqs.txt")]


def test_unsupported_install_flag():
    with pytest.raises(UnsupportedFlagError):
        parse_install_specs("pip install --weird-new-flag pkg")


def test_export_classification_and_pairs():
    cls = classify("export PYTHONPATH=/repo/src")
    assert cls.kind == "export"
    assert cls.exports == (("PYTHONPATH", "/repo/src"),)
    cls = classify("export A=1 B=two")
    assert cls.exports == (("A", "1"), ("B", "two"))
    # bare re-export and malformed pairs fall back to mutating
    assert classify("export PATH").kind == "mutating"
    assert classify("export A=1 && make").kind == "mutating"


def test_export_pairs_round_trip():
    for line in ("export A=1 B=two", "export PYTHONPATH=/repo/src", "export X='a b'"):
        pairs = classify(line).exports
        rebuilt = "export " + " ".join(
            f"{k}={v}" if " " not in v else f"{k}='{v}'" for k, v in pairs
        )
        assert classify(rebuilt).exports == pairs


def test_reserved_agent_verbs():
    assert classify("change_python_version 3.11").kind == "base-image-change"
    assert classify("clear_configuration").kind == "base-image-change"
    assert classify("edit_file src/app.py").kind == "code-edit"


def test_unbalanced_quotes_raise():
    with pytest.raises(UnparsableLineError):
        classify("echo 'oops")
    with pytest.raises(ShellSyntaxError):
        parse_line('grep "half')


def test_classify_is_pure():
    rng = random.Random(7)
    lines = [
        "cat a | grep b",
        "pip install 'x>=1'",
        "export K=V",
        "rm -rf /tmp/x",
        "cd /repo && pytest",
    ]
    for line in rng.choices(lines, k=30):
        assert classify(line) == classify(line)


def test_redirected_commands_never_safe_property():
    rng = random.Random(21)
    verbs = sorted(SAFE_COMMANDS)
    for _ in range(100):
        verb = rng.choice(verbs)
        line = f"{verb} something {'>' if rng.random() < 0.5 else '>>'} /tmp/out"
        command = Command.from_raw(line)
        assert command.redirects_output
        assert classify(command).kind != "safe"


def test_classification_detail_payload_shape():
    assert classify("make -j4") == Classification(kind="mutating")
    install = classify("pip install one two")
    assert [s.package for s in install.installs] == ["one", "two"]
