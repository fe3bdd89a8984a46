"""Classifies shell lines for rollback and Dockerfile-synthesis purposes.

Six kinds: ``safe`` commands are exempt from snapshotting and never reach
the Dockerfile; ``export``, ``install``, ``code-edit`` and
``base-image-change`` get dedicated synthesis rules; everything else is
``mutating``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import shell
from .trace import Command

# Allowlist of commands that observe rather than change the environment.
# "tee" is on the list even though it writes files; we keep the list as-is
# and accept the hazard. A command is only safe when no ">"/">>" appears.
SAFE_COMMANDS = frozenset(
    {
        "cd", "ls", "cat", "echo", "pwd", "whoami", "who", "date", "cal",
        "df", "du", "free", "uname", "uptime", "w", "ps", "pgrep", "top",
        "dmesg", "tail", "head", "grep", "find", "locate", "which", "file",
        "stat", "cmp", "diff", "xz", "unxz", "sort", "wc", "tr", "cut",
        "paste", "tee", "awk", "env", "printenv", "hostname", "ping",
        "traceroute", "ssh",
    }
)

BASE_IMAGE_CHANGE_VERBS = frozenset({"change_python_version", "clear_configuration"})
CODE_EDIT_VERB = "edit_file"

_PIP_TOOLS = {"pip": "pip", "pip3": "pip"}

# Install-command flags we understand. Values: does the flag consume the
# next word as its argument?
PIP_INSTALL_FLAGS = {
    "-r": True,
    "--requirement": True,
    "-e": True,
    "--editable": True,
    "-U": False,
    "--upgrade": False,
    "-q": False,
    "--quiet": False,
    "-v": False,
    "--verbose": False,
    "--pre": False,
    "--no-deps": False,
    "--no-cache-dir": False,
    "--user": False,
    "--index-url": True,
    "--extra-index-url": True,
}
APT_INSTALL_FLAGS = {
    "-y": False,
    "--yes": False,
    "-q": False,
    "-qq": False,
    "--no-install-recommends": False,
}

_CONSTRAINT_OPS = ("==", "!=", ">=", "<=", "~=", ">", "<")


class UnparsableLineError(ValueError):
    """The line could not be tokenized (e.g. unbalanced quotes)."""


class UnsupportedFlagError(ValueError):
    def __init__(self, flag: str):
        super().__init__(f"unsupported install flag {flag!r}")
        self.flag = flag


@dataclass(frozen=True)
class InstallSpec:
    """One requested package, or a requirements-file reference."""

    tool: str  # "pip" or "apt"
    package: str | None
    constraint: str = ""
    requirements_file: str | None = None


@dataclass(frozen=True)
class Classification:
    kind: str
    exports: tuple[tuple[str, str], ...] = ()
    installs: tuple[InstallSpec, ...] = ()


def safe_list() -> frozenset[str]:
    """The allowlist of observation-only commands."""
    return SAFE_COMMANDS


def _as_command(command: Command | str) -> Command:
    return command if isinstance(command, Command) else Command.from_raw(command)


def _parse(command: Command) -> shell.ParsedLine:
    try:
        return shell.parse_line(command.raw)
    except shell.ShellSyntaxError as exc:
        raise UnparsableLineError(str(exc)) from exc


def split_package_spec(spec: str) -> tuple[str, str]:
    """Split ``name>=1.0,<2.0`` into the name and its constraint text."""
    cut = len(spec)
    for op in _CONSTRAINT_OPS:
        idx = spec.find(op)
        if idx >= 0:
            cut = min(cut, idx)
    return spec[:cut], spec[cut:]


def _parse_pip_specs(words: list[str]) -> tuple[InstallSpec, ...]:
    specs: list[InstallSpec] = []
    i = 0
    while i < len(words):
        word = words[i]
        if word.startswith("-"):
            if word not in PIP_INSTALL_FLAGS:
                raise UnsupportedFlagError(word)
            if PIP_INSTALL_FLAGS[word]:
                i += 1
                if i >= len(words):
                    raise UnsupportedFlagError(word)
                if word in ("-r", "--requirement", "-e", "--editable"):
                    specs.append(
                        InstallSpec(tool="pip", package=None, requirements_file=words[i])
                    )
        else:
            name, constraint = split_package_spec(word)
            if not name:
                raise UnsupportedFlagError(word)
            specs.append(InstallSpec(tool="pip", package=name, constraint=constraint))
        i += 1
    return tuple(specs)


def _parse_apt_specs(words: list[str]) -> tuple[InstallSpec, ...]:
    specs: list[InstallSpec] = []
    for word in words:
        if word.startswith("-"):
            if word not in APT_INSTALL_FLAGS:
                raise UnsupportedFlagError(word)
            continue
        # apt versions are never constrained here; "pkg=ver" stays one name.
        specs.append(InstallSpec(tool="apt", package=word))
    return tuple(specs)


def _subcommand(words: tuple[str, ...]) -> tuple[str | None, list[str]]:
    """First non-flag word after argv0, plus everything after it."""
    for i in range(1, len(words)):
        if not words[i].startswith("-"):
            return words[i], list(words[i + 1 :])
    return None, []


def _classify_simple(stage: shell.Stage) -> Classification:
    argv0 = stage.argv0 or ""
    words = stage.words

    if argv0 == "export":
        pairs = []
        for word in words[1:]:
            key, eq, value = word.partition("=")
            if not eq or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", key):
                pairs = []
                break
            pairs.append((key, value))
        if pairs:
            return Classification(kind="export", exports=tuple(pairs))
        return Classification(kind="mutating")

    if argv0 in _PIP_TOOLS:
        sub, rest = _subcommand(words)
        if sub == "install":
            return Classification(kind="install", installs=_parse_pip_specs(rest))
        return Classification(kind="mutating")

    if argv0 == "apt-get":
        sub, rest = _subcommand(words)
        if sub == "install":
            return Classification(kind="install", installs=_parse_apt_specs(rest))
        return Classification(kind="mutating")

    if argv0 in BASE_IMAGE_CHANGE_VERBS:
        return Classification(kind="base-image-change")

    if argv0 == CODE_EDIT_VERB:
        return Classification(kind="code-edit")

    return Classification(kind="mutating")


def classify(command: Command | str) -> Classification:
    """Classify one shell line.

    A line is safe only when every pipeline/chain stage starts with an
    allowlisted command and no output redirection appears anywhere. The
    special kinds (export, install, code-edit, base-image-change) apply to
    single un-chained commands, where their payload describes the whole
    line; a chain is judged by its most dangerous member and collapses to
    mutating.
    """
    command = _as_command(command)
    parsed = _parse(command)

    if not parsed.has_output_redirect and all(
        stage.argv0 in SAFE_COMMANDS for stage in parsed.stages
    ):
        return Classification(kind="safe")

    if parsed.is_simple:
        return _classify_simple(parsed.first_stage)
    return Classification(kind="mutating")


def parse_install_specs(command: Command | str) -> tuple[InstallSpec, ...]:
    """Package specs of an install line (pre: classify(...) is install)."""
    cls = classify(command)
    if cls.kind != "install":
        raise ValueError(f"not an install command: {_as_command(command).raw!r}")
    return cls.installs
