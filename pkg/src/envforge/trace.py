"""Command execution records, build traces, and the .trace.jsonl file format.

A trace file is one JSON object per line: a header, then one line per
executed command in order, then a footer. Lines are appended as the build
progresses so a crashed session still leaves a readable prefix.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from . import shell

SCHEMA_VERSION = "1"

DEFAULT_BASE_IMAGE_NAME = "python:3.10"

CLASSIFICATION_KINDS = (
    "safe",
    "mutating",
    "base-image-change",
    "code-edit",
    "export",
    "install",
)

OUTCOMES = ("verified", "budget_exhausted", "aborted")

TEST_RUNNER_VERBS = ("runtest", "poetryruntest")

_PYTHON_IMAGE_RE = re.compile(r"^python:(\d+\.\d+(?:\.\d+)?)")

_HEADER_KEYS = ("schema_version", "repo_full_name", "sha", "initial_base_image")
_RECORD_KEYS = (
    "turn",
    "raw",
    "cwd",
    "return_code",
    "classification",
    "stdout_excerpt",
    "stderr_excerpt",
    "snapshot_before",
    "rolled_back",
    "env_delta",
    "installed",
)
_FOOTER_KEYS = ("final_base_image", "outcome")


class TraceError(Exception):
    """Base class for trace file problems."""


class MalformedLine(TraceError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class VersionMismatch(TraceError):
    def __init__(self, found: str):
        super().__init__(f"unsupported trace schema version {found!r}")
        self.found = found


class InvariantViolation(TraceError):
    pass


@dataclass(frozen=True)
class BaseImage:
    """A named starting environment, e.g. ``python:3.10``."""

    name: str
    python_version: str | None = None

    @classmethod
    def from_name(cls, name: str) -> "BaseImage":
        if not name:
            raise InvariantViolation("base image name must be non-empty")
        m = _PYTHON_IMAGE_RE.match(name)
        return cls(name=name, python_version=m.group(1) if m else None)


DEFAULT_BASE_IMAGE = BaseImage.from_name(DEFAULT_BASE_IMAGE_NAME)


@dataclass(frozen=True)
class Command:
    """A single shell line plus the derived bits classification cares about."""

    raw: str
    argv0: str
    redirects_output: bool

    @classmethod
    def from_raw(cls, raw: str) -> "Command":
        if not raw.strip():
            raise InvariantViolation("command line is empty")
        try:
            parsed = shell.parse_line(raw)
            argv0 = parsed.argv0 or ""
            redirects = parsed.has_output_redirect
        except shell.ShellSyntaxError:
            # Unparsable lines still travel through traces; argv0 falls back
            # to the first whitespace token.
            argv0 = raw.split()[0]
            redirects = ">" in raw
        return cls(raw=raw, argv0=argv0, redirects_output=redirects)


@dataclass(frozen=True)
class CommandRecord:
    """One executed command: what ran, what it returned, what it changed."""

    turn: int
    command: Command
    cwd: str
    return_code: int
    classification: str
    stdout_excerpt: str = ""
    stderr_excerpt: str = ""
    snapshot_before: str | None = None
    rolled_back: bool = False
    env_delta: tuple[tuple[str, str], ...] = ()
    installed: tuple[tuple[str, str, str], ...] = ()
    # Optional side-channel data, serialized after the fixed keys. ``assets``
    # holds files that must exist in the image before this command replays
    # (edit patches and helper scripts); the synthesizer turns them into COPY
    # statements. ``thought`` is policy reasoning and is ignored by synthesis.
    assets: tuple[tuple[str, str], ...] = ()
    thought: str | None = None

    def validate(self) -> None:
        if self.turn < 1:
            raise InvariantViolation(f"turn {self.turn} < 1")
        if self.classification not in CLASSIFICATION_KINDS:
            raise InvariantViolation(f"unknown classification {self.classification!r}")
        if not self.cwd.startswith("/"):
            raise InvariantViolation(f"cwd {self.cwd!r} is not absolute")
        if self.rolled_back and self.return_code == 0:
            raise InvariantViolation("rolled_back record has return code 0")
        if self.rolled_back and self.snapshot_before is None:
            raise InvariantViolation("rolled_back record lacks snapshot_before")
        if self.classification == "safe" and self.snapshot_before is not None:
            raise InvariantViolation("safe record carries a snapshot")
        if bool(self.env_delta) != (self.classification == "export"):
            raise InvariantViolation("env_delta populated iff classification is export")


@dataclass
class Trace:
    """The ordered ledger of a build session."""

    repo_full_name: str
    sha: str
    initial_base_image: BaseImage
    records: list[CommandRecord] = field(default_factory=list)
    final_base_image: BaseImage = DEFAULT_BASE_IMAGE
    outcome: str = "aborted"

    def validate(self) -> None:
        if self.outcome not in OUTCOMES:
            raise InvariantViolation(f"unknown outcome {self.outcome!r}")
        last_turn = 0
        changed_image = False
        for record in self.records:
            record.validate()
            if record.turn <= last_turn:
                raise InvariantViolation(
                    f"turn {record.turn} does not increase past {last_turn}"
                )
            last_turn = record.turn
            if record.classification == "base-image-change":
                changed_image = True
        if not changed_image and self.final_base_image != self.initial_base_image:
            raise InvariantViolation(
                "final base image differs without a base-image-change record"
            )
        if self.outcome == "verified":
            runs = [r for r in self.records if r.command.argv0 in TEST_RUNNER_VERBS]
            if not runs:
                raise InvariantViolation("verified trace contains no test-runner record")
            if runs[-1].return_code not in (0, 1):
                raise InvariantViolation(
                    "verified trace's last test run did not execute tests"
                )


def _record_to_json(record: CommandRecord) -> dict:
    obj = {
        "turn": record.turn,
        "raw": record.command.raw,
        "cwd": record.cwd,
        "return_code": record.return_code,
        "classification": record.classification,
        "stdout_excerpt": record.stdout_excerpt,
        "stderr_excerpt": record.stderr_excerpt,
        "snapshot_before": record.snapshot_before,
        "rolled_back": record.rolled_back,
        "env_delta": [list(pair) for pair in record.env_delta],
        "installed": [list(item) for item in record.installed],
    }
    if record.assets:
        obj["assets"] = [list(pair) for pair in record.assets]
    if record.thought is not None:
        obj["thought"] = record.thought
    return obj


def _record_from_json(obj: dict, line_no: int) -> CommandRecord:
    missing = [k for k in _RECORD_KEYS if k not in obj]
    if missing:
        raise MalformedLine(line_no, f"record missing keys {missing}")
    return CommandRecord(
        turn=obj["turn"],
        command=Command.from_raw(obj["raw"]),
        cwd=obj["cwd"],
        return_code=obj["return_code"],
        classification=obj["classification"],
        stdout_excerpt=obj["stdout_excerpt"],
        stderr_excerpt=obj["stderr_excerpt"],
        snapshot_before=obj["snapshot_before"],
        rolled_back=obj["rolled_back"],
        env_delta=tuple((k, v) for k, v in obj["env_delta"]),
        installed=tuple((t, p, v) for t, p, v in obj["installed"]),
        assets=tuple((p, c) for p, c in obj.get("assets", [])),
        thought=obj.get("thought"),
    )


def serialize_trace(trace: Trace) -> bytes:
    """Render a validated trace as UTF-8 JSON lines (header/records/footer)."""
    trace.validate()
    lines = [
        json.dumps(
            {
                "schema_version": SCHEMA_VERSION,
                "repo_full_name": trace.repo_full_name,
                "sha": trace.sha,
                "initial_base_image": trace.initial_base_image.name,
            },
            ensure_ascii=False,
        )
    ]
    lines.extend(
        json.dumps(_record_to_json(r), ensure_ascii=False) for r in trace.records
    )
    lines.append(
        json.dumps(
            {"final_base_image": trace.final_base_image.name, "outcome": trace.outcome},
            ensure_ascii=False,
        )
    )
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_trace(data: bytes) -> Trace:
    """Reconstruct a Trace from serialize_trace output."""
    text = data.decode("utf-8")
    raw_lines = [line for line in text.split("\n") if line.strip()]
    if len(raw_lines) < 2:
        raise MalformedLine(len(raw_lines), "trace needs a header and a footer line")

    def load(line: str, line_no: int) -> dict:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(line_no, f"invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise MalformedLine(line_no, "line is not a JSON object")
        return obj

    header = load(raw_lines[0], 1)
    for key in _HEADER_KEYS:
        if key not in header:
            raise MalformedLine(1, f"header missing {key!r}")
    if header["schema_version"] != SCHEMA_VERSION:
        raise VersionMismatch(str(header["schema_version"]))

    footer = load(raw_lines[-1], len(raw_lines))
    if "final_base_image" not in footer or "outcome" not in footer:
        raise MalformedLine(len(raw_lines), "final line is not a trace footer")

    records = []
    for idx, line in enumerate(raw_lines[1:-1], start=2):
        obj = load(line, idx)
        if "turn" not in obj:
            raise MalformedLine(idx, "expected a command record line")
        records.append(_record_from_json(obj, idx))

    trace = Trace(
        repo_full_name=header["repo_full_name"],
        sha=header["sha"],
        initial_base_image=BaseImage.from_name(header["initial_base_image"]),
        records=records,
        final_base_image=BaseImage.from_name(footer["final_base_image"]),
        outcome=footer["outcome"],
    )
    trace.validate()
    return trace
