"""Backend-agnostic sandbox interface with snapshot/rollback guarded execution."""

from __future__ import annotations

import uuid
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

from ..classify import Classification, classify
from ..trace import BaseImage, Command, CommandRecord
from ..truncate import truncate

DEFAULT_COMMAND_TIMEOUT = 600.0  # seconds; timeouts surface as return code 124
TIMEOUT_RETURN_CODE = 124


class SandboxError(Exception):
    """Base class for sandbox failures."""


class ImageUnavailableError(SandboxError):
    def __init__(self, name: str, detail: str = ""):
        super().__init__(f"base image unavailable: {name}" + (f" ({detail})" if detail else ""))
        self.name = name


class BackendUnavailableError(SandboxError):
    pass


class BackendIOError(SandboxError):
    pass


class UnknownSnapshotError(SandboxError):
    def __init__(self, snapshot_id: str):
        super().__init__(f"unknown snapshot {snapshot_id!r}")
        self.snapshot_id = snapshot_id


class FileMissingError(SandboxError):
    def __init__(self, path: str):
        super().__init__(f"no such file in sandbox: {path}")
        self.path = path


@dataclass(frozen=True)
class ExecResult:
    return_code: int
    stdout: str
    stderr: str
    duration_ms: int

    @property
    def combined_output(self) -> str:
        if self.stdout and self.stderr:
            return self.stdout.rstrip("\n") + "\n" + self.stderr
        return self.stdout or self.stderr


class Sandbox(ABC):
    """One isolated build environment with snapshot/rollback.

    A handle is confined to one worker at a time; separate handles are
    fully independent and may run in parallel.
    """

    backend: str

    def __init__(self, base_image: BaseImage, session_id: str | None = None):
        self.base_image = base_image
        self.cwd = "/"
        self.session_id = session_id or uuid.uuid4().hex[:12]
        self._turn_counter = 0

    # -- backend primitives -------------------------------------------------

    @abstractmethod
    def exec(self, command: Command | str, timeout: float | None = None) -> ExecResult:
        """Run one shell line in the current working directory."""

    @abstractmethod
    def snapshot(self, pin: bool = False) -> str:
        """Capture the full environment state; returns an opaque id."""

    @abstractmethod
    def rollback(self, snapshot_id: str) -> None:
        """Restore files, env, installed packages and cwd from a snapshot."""

    @abstractmethod
    def reset_with_base_image(self, image: BaseImage) -> None:
        """Replace the environment with a fresh start; discards all snapshots."""

    @abstractmethod
    def installed_versions(self, tool: str) -> dict[str, str]:
        """Exact currently-installed versions for one install tool."""

    @abstractmethod
    def put_file(self, path: str, content: str) -> None:
        """Write a file into the environment, creating parent directories."""

    def put_dir(self, source_dir: str, dest: str) -> None:
        """Copy a host directory tree into the environment file by file."""
        base = Path(source_dir)
        for child in sorted(base.rglob("*")):
            if child.is_file():
                rel = child.relative_to(base)
                self.put_file(
                    f"{dest.rstrip('/')}/{rel}",
                    child.read_text(encoding="utf-8", errors="replace"),
                )

    @abstractmethod
    def read_file(self, path: str) -> str:
        """Read a file from the environment; FileMissingError when absent."""

    def close(self) -> None:  # pragma: no cover - trivial default
        pass

    # -- guarded execution ----------------------------------------------------

    def next_turn(self) -> int:
        self._turn_counter += 1
        return self._turn_counter

    def exec_guarded(
        self,
        command: Command | str,
        *,
        turn: int | None = None,
        classification: Classification | None = None,
        assets: tuple[tuple[str, str], ...] = (),
        thought: str | None = None,
        rollback_enabled: bool = True,
        timeout: float | None = None,
        excerpt_limits: tuple[int, int] = (2000, 2000),
    ) -> tuple[ExecResult, CommandRecord]:
        """Execute with the snapshot/rollback guard.

        Safe commands run without a snapshot and are never rolled back.
        Any other command gets a snapshot first; on a non-zero return code
        the environment is restored to it (unless ``rollback_enabled`` is
        off, which exists to demonstrate what pollution does to replays).
        ``assets`` are files the command needs in place (edit patches,
        helper scripts); they are written after the snapshot so a rollback
        removes them together with the command's own effects.
        """
        if isinstance(command, str):
            command = Command.from_raw(command)
        cls = classification or classify(command)
        if turn is None:
            turn = self.next_turn()
        else:
            self._turn_counter = max(self._turn_counter, turn)

        cwd_before = self.cwd
        snapshot_id: str | None = None
        rolled_back = False
        installed_before: dict[str, dict[str, str]] = {}

        if cls.kind != "safe":
            snapshot_id = self.snapshot()
        for path, content in assets:
            self.put_file(path, content)
        if cls.kind == "install":
            tools = {spec.tool for spec in cls.installs} or {"pip"}
            installed_before = {t: self.installed_versions(t) for t in tools}

        result = self.exec(command, timeout=timeout)

        installed: tuple[tuple[str, str, str], ...] = ()
        if cls.kind != "safe" and result.return_code != 0:
            if rollback_enabled and snapshot_id is not None:
                self.rollback(snapshot_id)
                rolled_back = True
            elif cls.kind == "install":
                installed = self._installed_delta(installed_before)
        elif cls.kind == "install":
            installed = self._installed_delta(installed_before)

        head, tail = excerpt_limits
        record = CommandRecord(
            turn=turn,
            command=command,
            cwd=cwd_before,
            return_code=result.return_code,
            classification=cls.kind,
            stdout_excerpt=truncate(result.stdout, head, tail),
            stderr_excerpt=truncate(result.stderr, head, tail),
            snapshot_before=snapshot_id,
            rolled_back=rolled_back,
            env_delta=cls.exports if cls.kind == "export" else (),
            installed=installed,
            assets=assets,
            thought=thought,
        )
        return result, record

    def _installed_delta(
        self, before: dict[str, dict[str, str]]
    ) -> tuple[tuple[str, str, str], ...]:
        delta = []
        for tool, old in before.items():
            now = self.installed_versions(tool)
            for package, version in sorted(now.items()):
                if old.get(package) != version:
                    delta.append((tool, package, version))
        return tuple(delta)
