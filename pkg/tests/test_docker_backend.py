"""Container backend logic against a scripted docker CLI (no real runtime)."""

from __future__ import annotations

import subprocess
from dataclasses import dataclass, field

import pytest

import envforge.sandbox.docker as docker_mod
from envforge.sandbox.base import ImageUnavailableError, UnknownSnapshotError
from envforge.sandbox.docker import DockerSandbox
from envforge.trace import BaseImage


@dataclass
class FakeDockerHost:
    """Just enough docker CLI to drive DockerSandbox through its paces."""

    fail_images: set[str] = field(default_factory=set)
    containers: dict[str, str] = field(default_factory=dict)  # name -> image
    commits: list[str] = field(default_factory=list)
    removed_images: list[str] = field(default_factory=list)
    execs: list[list[str]] = field(default_factory=list)
    pip_packages: dict[str, str] = field(default_factory=dict)
    copies: list[tuple[str, str]] = field(default_factory=list)

    def _run_line(self, argv, line: str):
        import shlex

        words = shlex.split(line)
        if words[:2] == ["pip", "install"]:
            for spec in words[2:]:
                if not spec.startswith("-"):
                    name = spec.split("=")[0].split(">")[0].split("<")[0]
                    self.pip_packages[name.lower()] = "9.9.9"
            return subprocess.CompletedProcess(argv, 0, "Successfully installed\n", "")
        if words[:2] == ["pip", "list"]:
            freeze = "".join(
                f"{n}=={v}\n" for n, v in sorted(self.pip_packages.items())
            )
            return subprocess.CompletedProcess(argv, 0, freeze, "")
        return subprocess.CompletedProcess(argv, 0, f"ran: {line}\n", "")

    def run(self, argv, capture_output=True, text=True, timeout=None):
        assert argv[0] == "docker"
        command = argv[1]
        if command == "run":
            image = argv[argv.index("--name") + 2]
            name = argv[argv.index("--name") + 1]
            if image in self.fail_images:
                return subprocess.CompletedProcess(
                    argv, 125, "", f"Unable to find image '{image}': pull access denied"
                )
            self.containers[name] = image
            return subprocess.CompletedProcess(argv, 0, "container-id\n", "")
        if command == "rm":
            self.containers.pop(argv[-1], None)
            return subprocess.CompletedProcess(argv, 0, "", "")
        if command == "commit":
            self.commits.append(argv[3])
            return subprocess.CompletedProcess(argv, 0, "sha256:abc\n", "")
        if command == "rmi":
            self.removed_images.append(argv[-1])
            return subprocess.CompletedProcess(argv, 0, "", "")
        if command == "exec":
            self.execs.append(argv)
            return self._run_line(argv, argv[-1])
        if command == "cp":
            self.copies.append((argv[2], argv[3]))
            return subprocess.CompletedProcess(argv, 0, "", "")
        raise AssertionError(f"unexpected docker command {argv}")


@pytest.fixture
def fake_host(monkeypatch):
    host = FakeDockerHost()
    monkeypatch.setattr(docker_mod.subprocess, "run", host.run)
    monkeypatch.setattr(docker_mod.shutil, "which", lambda name: "/usr/bin/docker")
    return host


def test_unavailable_image_maps_to_image_unavailable(fake_host):
    fake_host.fail_images.add("python:9.99")
    with pytest.raises(ImageUnavailableError):
        DockerSandbox(BaseImage.from_name("python:9.99"))


def test_container_lifecycle_and_naming(fake_host):
    sandbox = DockerSandbox(BaseImage.from_name("python:3.10"), session_id="abc123")
    assert sandbox.container == "envforge-abc123"
    assert fake_host.containers == {"envforge-abc123": "python:3.10"}
    sandbox.close()
    assert fake_host.containers == {}


def test_exports_persist_via_env_overlay(fake_host):
    sandbox = DockerSandbox(BaseImage.from_name("python:3.10"))
    result = sandbox.exec("export PYTHONPATH=/repo/src")
    assert result.return_code == 0
    sandbox.exec("pytest")
    last_exec = fake_host.execs[-1]
    assert "-e" in last_exec
    assert "PYTHONPATH=/repo/src" in last_exec


def test_bare_cd_updates_tracked_cwd(fake_host):
    sandbox = DockerSandbox(BaseImage.from_name("python:3.10"))
    sandbox.exec("cd /repo")
    assert sandbox.cwd == "/repo"
    sandbox.exec("cd relative")
    assert sandbox.cwd == "/repo/relative"
    sandbox.exec("ls")
    exec_argv = fake_host.execs[-1]
    assert exec_argv[exec_argv.index("-w") + 1] == "/repo/relative"


def test_snapshot_commit_rollback_restores_cwd_and_env(fake_host):
    sandbox = DockerSandbox(BaseImage.from_name("python:3.10"), session_id="s1")
    sandbox.exec("cd /repo")
    sandbox.exec("export A=1")
    snap = sandbox.snapshot()
    assert fake_host.commits == ["envforge-snap:s1-1"]
    sandbox.exec("cd /tmp")
    sandbox.exec("export A=2")
    sandbox.rollback(snap)
    assert sandbox.cwd == "/repo"
    assert sandbox._env_overlay == {"A": "1"}
    with pytest.raises(UnknownSnapshotError):
        sandbox.rollback("envforge-snap-bogus")


def test_snapshot_retention_deletes_superseded_images(fake_host):
    sandbox = DockerSandbox(BaseImage.from_name("python:3.10"), session_id="s2")
    first = sandbox.snapshot()
    second = sandbox.snapshot()
    assert "envforge-snap:s2-1" in fake_host.removed_images
    with pytest.raises(UnknownSnapshotError):
        sandbox.rollback(first)
    sandbox.rollback(second)


def test_installed_versions_parses_freeze_output(fake_host):
    sandbox = DockerSandbox(BaseImage.from_name("python:3.10"))
    sandbox.exec("pip install requests==2.31.0")
    fake_host.pip_packages["requests"] = "2.31.0"
    assert sandbox.installed_versions("pip") == {"requests": "2.31.0"}


def test_reset_discards_snapshots_and_overlay(fake_host):
    sandbox = DockerSandbox(BaseImage.from_name("python:3.10"), session_id="s3")
    sandbox.exec("export A=1")
    sandbox.snapshot()
    sandbox.reset_with_base_image(BaseImage.from_name("python:3.11"))
    assert sandbox.base_image.name == "python:3.11"
    assert sandbox._env_overlay == {}
    assert sandbox.cwd == "/"
    assert "envforge-snap:s3-1" in fake_host.removed_images


def test_full_pipeline_on_faked_container_backend(fake_host, tmp_path):
    """Local staging by copy, pin recording, and copy-repo synthesis."""
    from envforge.agent.loop import BuildBudget, run_build
    from envforge.agent.policy import ScriptedPolicy
    from envforge.dockerfile import render, synthesize

    fixture = tmp_path / "checkout"
    (fixture / "tests").mkdir(parents=True)
    (fixture / "README.md").write_text("hello\n")
    (fixture / "tests" / "test_ok.py").write_text("def test_ok(): pass\n")

    sandbox = DockerSandbox(BaseImage.from_name("python:3.10"))
    policy = ScriptedPolicy(
        ["pip install pytest", "export PYTHONPATH=/repo", "runtest"]
    )
    trace = run_build(str(fixture), "", policy, BuildBudget(max_turns=5), sandbox)
    assert trace.outcome == "verified"
    # staged by copying, not by a clone command
    assert fake_host.copies and fake_host.copies[0][1].endswith(":/repo")
    assert not any(
        r.command.raw.startswith("git clone") for r in trace.records
    )
    install = next(r for r in trace.records if r.classification == "install")
    assert ("pip", "pytest", "9.9.9") in install.installed

    program = synthesize(trace, copy_repo_from=str(fixture))
    lines = render(program).decode().splitlines()
    assert lines[0] == "FROM python:3.10"
    assert lines[1] == "COPY repo /repo"
    assert "RUN cd /repo && pip install 'pytest==9.9.9'" in lines
    assert 'ENV PYTHONPATH="/repo"' in lines
