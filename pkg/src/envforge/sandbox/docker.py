"""Container-backed sandbox shelling out to the docker CLI.

Snapshots are committed images; rollback stops the container and starts a
fresh one from the committed image, restoring the tracked working
directory. Exported variables are kept in an overlay applied to every exec,
since each ``docker exec`` is a new shell session.
"""

from __future__ import annotations

import shutil
import subprocess
import tempfile
import time
from pathlib import Path

from ..classify import classify
from ..shell import ShellSyntaxError, parse_line, quote
from ..trace import BaseImage, Command
from .base import (
    DEFAULT_COMMAND_TIMEOUT,
    TIMEOUT_RETURN_CODE,
    BackendIOError,
    BackendUnavailableError,
    ExecResult,
    FileMissingError,
    ImageUnavailableError,
    Sandbox,
    UnknownSnapshotError,
)


def docker_available(binary: str = "docker") -> bool:
    if shutil.which(binary) is None:
        return False
    try:
        probe = subprocess.run(
            [binary, "info"], capture_output=True, timeout=30, text=True
        )
    except (OSError, subprocess.TimeoutExpired):
        return False
    return probe.returncode == 0


class DockerSandbox(Sandbox):
    backend = "container"

    def __init__(
        self,
        base_image: BaseImage,
        session_id: str | None = None,
        binary: str = "docker",
    ):
        super().__init__(base_image, session_id)
        self.binary = binary
        self.container = f"envforge-{self.session_id}"
        self._env_overlay: dict[str, str] = {}
        self._snapshots: dict[str, dict] = {}  # id -> {"image":, "cwd":, "env":}
        self._pinned: set[str] = set()
        self._snapshot_seq = 0
        if shutil.which(binary) is None:
            raise BackendUnavailableError(f"{binary} binary not found on PATH")
        self._start_container(base_image.name)

    # -- docker CLI plumbing ----------------------------------------------------

    def _docker(
        self, *args: str, timeout: float | None = None, check: bool = True
    ) -> subprocess.CompletedProcess:
        try:
            proc = subprocess.run(
                [self.binary, *args],
                capture_output=True,
                text=True,
                timeout=timeout or 300,
            )
        except subprocess.TimeoutExpired as exc:
            raise BackendIOError(f"docker {args[0]} timed out") from exc
        except OSError as exc:
            raise BackendUnavailableError(str(exc)) from exc
        if check and proc.returncode != 0:
            raise BackendIOError(
                f"docker {' '.join(args[:2])} failed: {proc.stderr.strip()}"
            )
        return proc

    def _start_container(self, image: str) -> None:
        proc = self._docker(
            "run", "-d", "--name", self.container, image, "sleep", "infinity",
            check=False,
        )
        if proc.returncode != 0:
            stderr = proc.stderr.lower()
            if "pull access denied" in stderr or "not found" in stderr or "manifest" in stderr:
                raise ImageUnavailableError(image, proc.stderr.strip())
            raise BackendIOError(f"docker run failed: {proc.stderr.strip()}")

    def _remove_container(self) -> None:
        self._docker("rm", "-f", self.container, check=False)

    # -- Sandbox interface ---------------------------------------------------------

    def exec(self, command: Command | str, timeout: float | None = None) -> ExecResult:
        raw = command.raw if isinstance(command, Command) else command
        started = time.monotonic()

        # Persist simple exports in the overlay; the shell line itself would
        # only affect one exec session.
        cls = classify(command)
        if cls.kind == "export":
            self._env_overlay.update(dict(cls.exports))
            return ExecResult(0, "", "", int((time.monotonic() - started) * 1000))

        # plain -c, not a login shell: profile scripts could clobber the
        # exported-variable overlay passed through -e
        args = [self.binary, "exec", "-w", self.cwd]
        for key, value in self._env_overlay.items():
            args += ["-e", f"{key}={value}"]
        args += [self.container, "bash", "-c", raw]
        try:
            proc = subprocess.run(
                args,
                capture_output=True,
                text=True,
                timeout=timeout or DEFAULT_COMMAND_TIMEOUT,
            )
            rc, stdout, stderr = proc.returncode, proc.stdout, proc.stderr
        except subprocess.TimeoutExpired as exc:
            rc = TIMEOUT_RETURN_CODE
            stdout = (exc.stdout or b"").decode("utf-8", "replace") if isinstance(exc.stdout, bytes) else (exc.stdout or "")
            stderr = "command timed out\n"
        except OSError as exc:
            raise BackendIOError(str(exc)) from exc
        duration_ms = int((time.monotonic() - started) * 1000)

        # Track bare successful "cd" so later execs run there.
        if rc == 0:
            try:
                parsed = parse_line(raw)
                if parsed.is_simple and parsed.argv0 == "cd" and len(parsed.first_stage.words) == 2:
                    target = parsed.first_stage.words[1]
                    if not target.startswith("/"):
                        target = str(Path(self.cwd) / target)
                    self.cwd = target
            except ShellSyntaxError:
                pass
        return ExecResult(rc if 0 <= rc <= 255 else 128 + (abs(rc) & 0x7F), stdout, stderr, duration_ms)

    def snapshot(self, pin: bool = False) -> str:
        self._snapshot_seq += 1
        snapshot_id = f"envforge-snap-{self.session_id}-{self._snapshot_seq}"
        image_tag = f"envforge-snap:{self.session_id}-{self._snapshot_seq}"
        self._docker("commit", self.container, image_tag)
        for old_id in [s for s in self._snapshots if s not in self._pinned]:
            self._docker("rmi", "-f", self._snapshots[old_id]["image"], check=False)
            del self._snapshots[old_id]
        self._snapshots[snapshot_id] = {
            "image": image_tag,
            "cwd": self.cwd,
            "env": dict(self._env_overlay),
        }
        if pin:
            self._pinned.add(snapshot_id)
        return snapshot_id

    def rollback(self, snapshot_id: str) -> None:
        if snapshot_id not in self._snapshots:
            raise UnknownSnapshotError(snapshot_id)
        saved = self._snapshots[snapshot_id]
        self._remove_container()
        self._start_container(saved["image"])
        self.cwd = saved["cwd"]
        self._env_overlay = dict(saved["env"])

    def reset_with_base_image(self, image: BaseImage) -> None:
        self._remove_container()
        for saved in self._snapshots.values():
            self._docker("rmi", "-f", saved["image"], check=False)
        self._snapshots.clear()
        self._pinned.clear()
        self._env_overlay.clear()
        self.base_image = image
        self.cwd = "/"
        self._start_container(image.name)

    def installed_versions(self, tool: str) -> dict[str, str]:
        if tool == "pip":
            result = self.exec("pip list --format=freeze --disable-pip-version-check")
            versions = {}
            for line in result.stdout.splitlines():
                name, sep, version = line.partition("==")
                if sep:
                    versions[name.strip().lower()] = version.strip()
            return versions
        if tool == "apt":
            result = self.exec("dpkg-query -W -f='${Package} ${Version}\\n'")
            versions = {}
            for line in result.stdout.splitlines():
                parts = line.split()
                if len(parts) == 2:
                    versions[parts[0]] = parts[1]
            return versions
        raise BackendIOError(f"unknown install tool {tool!r}")

    def put_file(self, path: str, content: str) -> None:
        parent = str(Path(path).parent)
        self.exec(f"mkdir -p {quote(parent)}")
        with tempfile.NamedTemporaryFile("w", suffix=".envforge", delete=False) as fh:
            fh.write(content)
            host_path = fh.name
        try:
            self._docker("cp", host_path, f"{self.container}:{path}")
        finally:
            Path(host_path).unlink(missing_ok=True)

    def put_dir(self, source_dir: str, dest: str) -> None:
        self.exec(f"mkdir -p {quote(dest)}")
        # trailing "/." copies the directory's contents into dest
        self._docker("cp", f"{str(Path(source_dir))}/.", f"{self.container}:{dest}")

    def read_file(self, path: str) -> str:
        result = self.exec(f"cat {quote(path)}")
        if result.return_code != 0:
            raise FileMissingError(path)
        return result.stdout

    def close(self) -> None:
        self._remove_container()
        for saved in self._snapshots.values():
            self._docker("rmi", "-f", saved["image"], check=False)
        self._snapshots.clear()
