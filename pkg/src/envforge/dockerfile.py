"""Compiles a verified trace into a runnable Dockerfile.

Scan rules, in record order: the base image becomes FROM (a base-image
change discards everything before it); successful mutating/install/code-edit
commands become RUN, prefixed with ``cd`` when they ran outside ``/``; safe
and rolled-back commands are omitted; exports become ENV statements updated
in place on key reuse; retained edit patches and helper scripts become COPY
statements ahead of their RUN. A final pass pins every surviving pip install
to the exact versions recorded during the build.
"""

from __future__ import annotations

import posixpath
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from . import shell
from .classify import PIP_INSTALL_FLAGS, parse_install_specs, split_package_spec
from .trace import (
    DEFAULT_BASE_IMAGE,
    BaseImage,
    CommandRecord,
    Trace,
)

KEYWORDS = ("FROM", "ENV", "COPY", "RUN")

ASSETS_DIR = "assets"
REPO_COPY_DIR = "repo"


class SynthesisError(Exception):
    pass


class UnverifiedTraceError(SynthesisError):
    def __init__(self, outcome: str):
        super().__init__(f"only verified traces synthesize; outcome was {outcome!r}")
        self.outcome = outcome


class MissingPinError(SynthesisError):
    def __init__(self, package: str):
        super().__init__(f"successful install of {package!r} has no recorded version")
        self.package = package


@dataclass(frozen=True)
class DockerfileStatement:
    keyword: str
    payload: str
    origin_turn: int | None = None

    def line(self) -> str:
        return f"{self.keyword} {self.payload}"


@dataclass
class DockerfileProgram:
    statements: list[DockerfileStatement] = field(default_factory=list)
    pin_ledger: dict[tuple[str, str], str] = field(default_factory=dict)
    assets: dict[str, str] = field(default_factory=dict)  # name -> content
    repo_copy_source: str | None = None

    @property
    def from_image(self) -> str:
        return self.statements[0].payload if self.statements else ""


def quote_spec(spec: str) -> str:
    """Package specs are always single-quoted inside install RUNs."""
    return "'" + spec.replace("'", "'\"'\"'") + "'"


def env_payload(key: str, value: str) -> str:
    escaped = value.replace("\\", "\\\\").replace('"', '\\"')
    return f'{key}="{escaped}"'


def supersession_filter(records: list[CommandRecord]) -> list[CommandRecord]:
    """The suffix from the last base-image change on (inclusive).

    Records before the change stay in the trace but never reach synthesis.
    """
    for idx in range(len(records) - 1, -1, -1):
        if records[idx].classification == "base-image-change":
            return records[idx:]
    return list(records)


def _change_target(record: CommandRecord, default: BaseImage) -> BaseImage:
    words = record.command.raw.split()
    if words and words[0] == "change_python_version" and len(words) > 1:
        return BaseImage.from_name(f"python:{words[1]}")
    if words and words[0] == "clear_configuration":
        return DEFAULT_BASE_IMAGE
    return default


def _build_pin_ledger(records: list[CommandRecord]) -> dict[tuple[str, str], str]:
    ledger: dict[tuple[str, str], str] = {}
    for record in records:
        for tool, package, version in record.installed:
            ledger[(tool, package.lower())] = version
    return ledger


def _has_apt_update(record: CommandRecord) -> bool:
    if record.return_code != 0 or record.rolled_back:
        return False
    try:
        parsed = shell.parse_line(record.command.raw)
    except shell.ShellSyntaxError:
        return False
    for stage in parsed.stages:
        words = stage.words
        if stage.argv0 == "apt-get" and "update" in words[1:]:
            return True
    return False


def _pin_install_payload(
    record: CommandRecord, ledger: dict[tuple[str, str], str]
) -> str:
    """Rewrite an install command's package specs to exact '==' pins.

    Flags and requirements-file references pass through untouched; only the
    positional package words are replaced.
    """
    specs = parse_install_specs(record.command)
    if specs and specs[0].tool == "apt":
        return record.command.raw

    parsed = shell.parse_line(record.command.raw)
    words = list(parsed.first_stage.words)
    out: list[str] = []
    past_subcommand = False
    skip_next = False
    for idx, word in enumerate(words):
        if idx == 0 or not past_subcommand:
            out.append(shell.quote(word))
            if idx > 0 and not word.startswith("-"):
                past_subcommand = True  # the "install" subcommand itself
            continue
        if skip_next:
            out.append(shell.quote(word))
            skip_next = False
            continue
        if word.startswith("-"):
            out.append(shell.quote(word))
            skip_next = bool(PIP_INSTALL_FLAGS.get(word))
            continue
        name, _ = split_package_spec(word)
        pinned = ledger.get(("pip", name.lower()))
        if pinned is None:
            raise MissingPinError(name)
        out.append(quote_spec(f"{name}=={pinned}"))
    return " ".join(out)


def _asset_name(container_path: str, content: str, assets: dict[str, str]) -> str:
    name = posixpath.basename(container_path)
    if assets.get(name, content) != content:
        stem, dot, ext = name.partition(".")
        counter = 2
        while assets.get(name, content) != content:
            name = f"{stem}_{counter}{dot}{ext}"
            counter += 1
    assets[name] = content
    return name


def synthesize(trace: Trace, *, copy_repo_from: str | None = None) -> DockerfileProgram:
    """Compile a verified trace into a Dockerfile program.

    ``copy_repo_from`` switches repository staging from a clone RUN to a
    COPY of a local checkout (used for fixtures the replayed image cannot
    re-fetch); the matching git-checkout RUN is dropped with it.
    """
    if trace.outcome != "verified":
        raise UnverifiedTraceError(trace.outcome)

    surviving = supersession_filter(trace.records)
    from_image = trace.initial_base_image
    if surviving and surviving[0].classification == "base-image-change":
        from_image = _change_target(surviving[0], trace.final_base_image)

    program = DockerfileProgram()
    program.statements.append(DockerfileStatement("FROM", from_image.name))
    program.pin_ledger = _build_pin_ledger(
        [r for r in surviving if not r.rolled_back and r.return_code == 0]
    )

    env_positions: dict[str, int] = {}
    apt_cache_ready = False

    for record in surviving:
        if record.classification in ("safe", "base-image-change"):
            continue
        if record.rolled_back or record.return_code != 0:
            continue

        if record.classification == "export":
            for key, value in record.env_delta:
                payload = env_payload(key, value)
                if key in env_positions:
                    # Updated in place: the statement keeps its original
                    # position and anchor, only the value changes.
                    idx = env_positions[key]
                    program.statements[idx] = DockerfileStatement(
                        "ENV", payload, program.statements[idx].origin_turn
                    )
                else:
                    env_positions[key] = len(program.statements)
                    program.statements.append(
                        DockerfileStatement("ENV", payload, record.turn)
                    )
            continue

        for container_path, content in record.assets:
            name = _asset_name(container_path, content, program.assets)
            program.statements.append(
                DockerfileStatement(
                    "COPY", f"{ASSETS_DIR}/{name} {container_path}", record.turn
                )
            )

        if record.classification == "install":
            payload = _pin_install_payload(record, program.pin_ledger)
            is_apt = payload.startswith("apt-get ")
            if _has_apt_update(record):
                apt_cache_ready = True
            if is_apt and not apt_cache_ready:
                # A replayed image starts without an apt cache.
                payload = "apt-get update && " + payload
                apt_cache_ready = True
        else:
            payload = record.command.raw
            if _has_apt_update(record):
                apt_cache_ready = True

        if record.cwd != "/":
            payload = f"cd {record.cwd} && {payload}"
        program.statements.append(DockerfileStatement("RUN", payload, record.turn))

    if copy_repo_from is not None:
        program.repo_copy_source = copy_repo_from
        _rewrite_staging_as_copy(program)
    return program


def repo_source(trace: Trace) -> str | None:
    """The clone source recorded during staging, if any survived."""
    for record in trace.records:
        words = record.command.raw.split()
        if len(words) >= 3 and words[:2] == ["git", "clone"]:
            return words[2]
    return None


def _rewrite_staging_as_copy(program: DockerfileProgram) -> None:
    statements = program.statements
    clone_idx = next(
        (
            i
            for i, s in enumerate(statements)
            if s.keyword == "RUN" and s.payload.startswith("git clone ") and " /repo" in s.payload
        ),
        None,
    )
    if clone_idx is None:
        # No clone survived (locally staged build): the repository copy
        # goes right after FROM, where staging happened.
        statements.insert(1, DockerfileStatement("COPY", f"{REPO_COPY_DIR} /repo"))
        return
    origin = statements[clone_idx].origin_turn
    statements[clone_idx] = DockerfileStatement("COPY", f"{REPO_COPY_DIR} /repo", origin)
    if clone_idx + 1 < len(statements):
        follower = statements[clone_idx + 1]
        if follower.keyword == "RUN" and "git checkout" in follower.payload:
            del statements[clone_idx + 1]


def render(program: DockerfileProgram) -> bytes:
    """One statement per line, newline separated, trailing newline."""
    for statement in program.statements:
        if "\n" in statement.payload:
            # No faithful single-line form exists (a quoted newline is not
            # a line continuation); refusing beats silently corrupting.
            raise SynthesisError(
                f"{statement.keyword} payload contains a newline and cannot "
                f"render as one statement (turn {statement.origin_turn})"
            )
    return ("\n".join(s.line() for s in program.statements) + "\n").encode("utf-8")


def parse_rendered(text: str) -> list[tuple[str, str]]:
    """Parse render() output back into (keyword, payload) pairs."""
    statements = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        keyword, _, payload = line.partition(" ")
        if keyword not in KEYWORDS:
            raise SynthesisError(f"line {line_no}: unknown keyword {keyword!r}")
        if not payload.strip():
            raise SynthesisError(f"line {line_no}: empty payload")
        statements.append((keyword, payload.strip()))
    return statements


def write_output(program: DockerfileProgram, outdir: str | Path) -> Path:
    """Write Dockerfile plus its assets/ directory; returns the Dockerfile path."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    dockerfile = out / "Dockerfile"
    dockerfile.write_bytes(render(program))
    if program.assets:
        assets_dir = out / ASSETS_DIR
        assets_dir.mkdir(exist_ok=True)
        for name, content in program.assets.items():
            (assets_dir / name).write_text(content, encoding="utf-8")
    if program.repo_copy_source is not None:
        repo_dir = out / REPO_COPY_DIR
        if repo_dir.exists():
            shutil.rmtree(repo_dir)
        shutil.copytree(program.repo_copy_source, repo_dir)
    return dockerfile
