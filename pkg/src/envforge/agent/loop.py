"""The interactive build phase: policy in, guarded commands out, trace kept.

One session owns one sandbox, one waiting/conflict list pair and one growing
record list. Sessions are strictly sequential; run several sessions for
parallelism, never one session from several threads.
"""

from __future__ import annotations

import posixpath
import re
import time
from dataclasses import dataclass
from pathlib import Path

from .. import container_scripts, depmgr
from ..classify import Classification
from ..sandbox.base import Sandbox, SandboxError
from ..trace import BaseImage, Command, CommandRecord, Trace
from ..truncate import truncate
from .actions import Action, InvalidActionError, validate_action
from .policy import (
    LlmHttpError,
    ParseFailureExhaustedError,
    Policy,
    ScriptExhaustedError,
)

REPO_DIR = "/repo"


class GuardViolationError(ValueError):
    """The action tried to modify or delete a protected test file."""


class BudgetExceededError(RuntimeError):
    """A per-resource build budget ran out mid-session."""


class RepoUnavailableError(SandboxError):
    """The repository could not be staged into the environment."""


@dataclass(frozen=True)
class BuildBudget:
    max_turns: int = 100
    max_wall_seconds: int = 7200
    max_base_image_changes: int = 5

    def __post_init__(self) -> None:
        if min(self.max_turns, self.max_wall_seconds, self.max_base_image_changes) <= 0:
            raise ValueError("budget fields must all be positive")


@dataclass
class Observation:
    text: str
    return_code: int | None = None
    terminal: bool = False


def is_protected_test_path(path: str) -> bool:
    name = posixpath.basename(path.rstrip("/"))
    return name.startswith("test_") or name.endswith("_test.py")


def repo_source_url(repo: str) -> str:
    """Clone URL for an owner/name reference; paths and URLs pass through."""
    if repo.startswith(("/", "./", "../", "file://", "http://", "https://", "git@")):
        return repo
    if repo.endswith(".git") or Path(repo).exists():
        return repo
    if re.fullmatch(r"[\w.-]+/[\w.-]+", repo):
        return f"https://github.com/{repo}.git"
    return repo


class BuildSession:
    def __init__(
        self,
        sandbox: Sandbox,
        repo: str,
        sha: str = "",
        *,
        rollback_enabled: bool = True,
        head_limit: int = 2000,
        tail_limit: int = 2000,
        command_timeout: float | None = None,
        max_image_changes: int | None = None,
    ):
        self.sandbox = sandbox
        self.repo = repo
        self.sha = sha
        self.lists = depmgr.DependencyLists()
        self.records: list[CommandRecord] = []
        self.rollback_enabled = rollback_enabled
        self.head_limit = head_limit
        self.tail_limit = tail_limit
        self.command_timeout = command_timeout
        self.max_image_changes = max_image_changes
        self.base_image_changes = 0
        self.verified = False

    # -- plumbing -------------------------------------------------------------

    def _truncate(self, text: str) -> str:
        return truncate(text, self.head_limit, self.tail_limit)

    def _guarded(
        self,
        command: str,
        *,
        classification: Classification | None = None,
        assets: tuple[tuple[str, str], ...] = (),
        thought: str | None = None,
    ) -> CommandRecord:
        _, record = self.sandbox.exec_guarded(
            command,
            classification=classification,
            assets=assets,
            thought=thought,
            rollback_enabled=self.rollback_enabled,
            timeout=self.command_timeout,
            excerpt_limits=(self.head_limit, self.tail_limit),
        )
        self.records.append(record)
        return record

    def _observation_for(self, record: CommandRecord) -> Observation:
        parts = []
        if record.stdout_excerpt:
            parts.append(record.stdout_excerpt)
        if record.stderr_excerpt:
            parts.append(record.stderr_excerpt)
        if record.return_code != 0:
            note = f"[return code {record.return_code}"
            note += "; environment rolled back]" if record.rolled_back else "]"
            parts.append(note)
        return Observation(
            text=self._truncate("\n".join(parts).strip() or "(no output)"),
            return_code=record.return_code,
        )

    def stage_repository(self) -> None:
        """Fetch the repository into /repo as ordinary guarded commands.

        A local directory cannot be git-cloned from inside a container, so
        the container backend copies it in directly (synthesis then uses the
        repository-copy statement instead of a clone RUN).
        """
        source = repo_source_url(self.repo)
        if self.sandbox.backend == "container" and Path(source).is_dir():
            self.sandbox.put_dir(source, REPO_DIR)
            self._guarded(f"cd {REPO_DIR}")
            return
        clone = self._guarded(f"git clone {source} {REPO_DIR}")
        if clone.return_code != 0:
            raise RepoUnavailableError(
                f"cannot stage {self.repo}: {clone.stderr_excerpt.strip()}"
            )
        if self.sha:
            self._guarded(f"cd {REPO_DIR} && git checkout {self.sha}")
        self._guarded(f"cd {REPO_DIR}")

    # -- verb handlers ------------------------------------------------------------

    def dispatch(self, action: Action) -> Observation:
        try:
            validate_action(action)
        except InvalidActionError as exc:
            return Observation(text=f"invalid action: {exc}")
        handler = getattr(self, "_do_" + action.verb)
        try:
            return handler(action)
        except depmgr.DependencyError as exc:
            return Observation(text=f"error: {exc}")
        except GuardViolationError as exc:
            return Observation(text=f"guard violation: {exc}")

    def _do_bash(self, action: Action) -> Observation:
        command = str(action.args["command"])
        try:
            parsed = Command.from_raw(command)
        except Exception as exc:
            return Observation(text=f"cannot run command: {exc}")
        if parsed.argv0 == "rm":
            for word in command.split():
                if is_protected_test_path(word):
                    raise GuardViolationError(f"refusing to delete test file {word}")
        try:
            record = self._guarded(command, thought=action.thought)
        except ValueError as exc:  # unparsable line
            return Observation(text=f"cannot run command: {exc}")
        return self._observation_for(record)

    def _do_waitinglist_add(self, action: Action) -> Observation:
        outcome = self.lists.add(
            action.args["package"], action.args.get("constraint", ""), action.args["tool"]
        )
        if outcome == "conflict-queued":
            return Observation(
                text="conflict queued:\n" + self.lists.show_conflicts()
            )
        return Observation(text=f"{outcome}:\n{self.lists.show_waiting()}")

    def _do_waitinglist_addfile(self, action: Action) -> Observation:
        path = action.args["path"]
        try:
            content = self.sandbox.read_file(path)
        except SandboxError as exc:
            return Observation(text=f"error: {exc}")
        added = self.lists.add_requirements(content)
        queued = len(self.lists.conflicts)
        text = f"added {added} items from {path}"
        if queued:
            text += f"; {queued} conflicts pending"
        return Observation(text=text)

    def _do_waitinglist_clear(self, action: Action) -> Observation:
        return Observation(text=f"cleared {self.lists.clear_waiting()} waiting items")

    def _do_waitinglist_show(self, action: Action) -> Observation:
        return Observation(text=self.lists.show_waiting())

    def _do_conflictlist_solve(self, action: Action) -> Observation:
        use_version = None
        if not action.args.get("keep_original"):
            use_version = str(action.args.get("use_version", ""))
        conflict = self.lists.solve_first_conflict(use_version)
        return Observation(
            text=f"resolved {conflict.package}:\n{self.lists.show_waiting()}"
        )

    def _do_conflictlist_clear(self, action: Action) -> Observation:
        return Observation(text=f"cleared {self.lists.clear_conflicts()} conflicts")

    def _do_conflictlist_show(self, action: Action) -> Observation:
        return Observation(text=self.lists.show_conflicts())

    def _do_download(self, action: Action) -> Observation:
        results, records = depmgr.download(
            self.lists,
            self.sandbox,
            self.sandbox.next_turn,
            rollback_enabled=self.rollback_enabled,
        )
        self.records.extend(records)
        lines = [
            f"{r.package} ({r.tool}): "
            + (f"ok, resolved {r.resolved_version}" if r.status == "ok" else "failed, rolled back")
            for r in results
        ]
        return Observation(text=self._truncate("\n".join(lines)))

    def _do_runtest(self, action: Action, poetry: bool = False) -> Observation:
        verb = "poetryruntest" if poetry else "runtest"
        status, log, return_code = self.run_tests(poetry=poetry)
        record = CommandRecord(
            turn=self.sandbox.next_turn(),
            command=Command.from_raw(verb),
            cwd=REPO_DIR,
            return_code=return_code,
            classification="safe",  # verification verb: no snapshot, never synthesized
            stdout_excerpt=self._truncate(log),
            thought=action.thought,
        )
        self.records.append(record)
        if status == "verified":
            self.verified = True
            return Observation(
                text=self._truncate(f"tests executed ({log.strip()})"),
                return_code=return_code,
                terminal=True,
            )
        return Observation(
            text=self._truncate(f"{status}:\n{log}"), return_code=return_code
        )

    def _do_poetryruntest(self, action: Action) -> Observation:
        return self._do_runtest(action, poetry=True)

    def run_tests(self, poetry: bool = False) -> tuple[str, str, int]:
        """(status, log, return_code); status in verified/collect-error/no-tests/timeout."""
        prefix = "poetry run " if poetry else ""
        collect = self.sandbox.exec(
            f"cd {REPO_DIR} && {prefix}pytest --collect-only -q",
            timeout=self.command_timeout,
        )
        if collect.return_code == 124:
            return "timeout", collect.combined_output, 124
        if collect.return_code == 5:
            return "no-tests", collect.combined_output, 5
        if collect.return_code != 0:
            return "collect-error", collect.combined_output, collect.return_code
        full = self.sandbox.exec(
            f"cd {REPO_DIR} && {prefix}pytest", timeout=self.command_timeout
        )
        if full.return_code in (0, 1):
            return "verified", full.combined_output, full.return_code
        if full.return_code == 124:
            return "timeout", full.combined_output, 124
        if full.return_code == 5:
            return "no-tests", full.combined_output, 5
        return "collect-error", full.combined_output, full.return_code

    def _do_runpipreqs(self, action: Action) -> Observation:
        script_path = container_scripts.PIPREQS_SCRIPT_PATH
        record = self._guarded(
            f"python {script_path} {REPO_DIR}",
            assets=((script_path, container_scripts.PIPREQS_SCRIPT),),
            thought=action.thought,
        )
        return self._observation_for(record)

    def _change_image(self, image_name: str, action: Action) -> Observation:
        if (
            self.max_image_changes is not None
            and self.base_image_changes >= self.max_image_changes
        ):
            raise BudgetExceededError(
                f"base image already changed {self.base_image_changes} times"
            )
        self.base_image_changes += 1
        self.sandbox.reset_with_base_image(BaseImage.from_name(image_name))
        self.records.append(
            CommandRecord(
                turn=self.sandbox.next_turn(),
                command=Command.from_raw(_change_raw(action)),
                cwd="/",
                return_code=0,
                classification="base-image-change",
                stdout_excerpt=f"environment reset to {image_name}; prior build steps discarded",
                thought=action.thought,
            )
        )
        # The fresh environment needs the repository again; these records
        # land after the change so they survive into synthesis.
        self.stage_repository()
        return Observation(
            text=f"base image is now {image_name}; repository re-staged at {REPO_DIR}"
        )

    def _do_change_python_version(self, action: Action) -> Observation:
        return self._change_image(f"python:{action.args['version']}", action)

    def _do_clear_configuration(self, action: Action) -> Observation:
        return self._change_image("python:3.10", action)

    def _do_edit_file(self, action: Action) -> Observation:
        path = str(action.args["path"])
        if is_protected_test_path(path):
            raise GuardViolationError(f"{path} is a protected test file")
        mode = "udiff" if "diff" in action.args else "replace"
        patch = str(action.args.get("diff", action.args.get("content", "")))
        turn_hint = self.sandbox.next_turn()
        patch_path = f"/opt/envforge/patch_{turn_hint}.diff"
        _, record = self.sandbox.exec_guarded(
            f"python {container_scripts.EDIT_SCRIPT_PATH} {mode} {patch_path} {path}",
            turn=turn_hint,
            classification=Classification(kind="code-edit"),
            assets=(
                (container_scripts.EDIT_SCRIPT_PATH, container_scripts.EDIT_SCRIPT),
                (patch_path, patch),
            ),
            thought=action.thought,
            rollback_enabled=self.rollback_enabled,
            timeout=self.command_timeout,
            excerpt_limits=(self.head_limit, self.tail_limit),
        )
        self.records.append(record)
        obs = self._observation_for(record)
        if record.return_code != 0:
            obs.text = "patch apply failed:\n" + obs.text
        return obs


def _change_raw(action: Action) -> str:
    if action.verb == "change_python_version":
        return f"change_python_version {action.args['version']}"
    return "clear_configuration"


def run_build(
    repo: str,
    sha: str,
    policy: Policy,
    budget: BuildBudget,
    sandbox: Sandbox,
    *,
    rollback_enabled: bool = True,
    command_timeout: float | None = None,
) -> Trace:
    """Drive the policy until tests run, the budget runs out, or a fatal error.

    The sandbox must be freshly started; its base image becomes the trace's
    initial image and repository staging is recorded as the first commands.
    """
    initial_image = sandbox.base_image
    session = BuildSession(
        sandbox,
        repo,
        sha,
        rollback_enabled=rollback_enabled,
        command_timeout=command_timeout,
        max_image_changes=budget.max_base_image_changes,
    )
    outcome = "budget_exhausted"
    history: list[tuple[Action, Observation]] = []
    system_context = (
        f"Repository: {repo}" + (f" at {sha}" if sha else "") +
        f". Staged at {REPO_DIR} on {initial_image.name}."
    )
    started = time.monotonic()

    try:
        session.stage_repository()
        for _ in range(budget.max_turns):
            if time.monotonic() - started > budget.max_wall_seconds:
                break
            try:
                action = policy.next_action(history, system_context)
            except ScriptExhaustedError:
                break
            try:
                observation = session.dispatch(action)
            except BudgetExceededError:
                break
            history.append((action, observation))
            if observation.terminal and session.verified:
                outcome = "verified"
                break
    except (LlmHttpError, ParseFailureExhaustedError, SandboxError):
        outcome = "aborted"

    trace = Trace(
        repo_full_name=repo,
        sha=sha,
        initial_base_image=initial_image,
        records=session.records,
        final_base_image=sandbox.base_image,
        outcome=outcome,
    )
    trace.validate()
    return trace
