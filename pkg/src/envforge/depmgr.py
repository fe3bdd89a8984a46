"""Waiting-list / conflict-list dependency protocol and constraint algebra.

Packages queue on a waiting list until a single ``download`` drains them
through the sandbox. Two different constraints for the same (package, tool)
are never merged silently: the disagreement queues on the conflict list and
must be resolved explicitly before any download runs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

from . import shell

if TYPE_CHECKING:
    from .sandbox.base import Sandbox
    from .trace import CommandRecord

CONSTRAINT_OPS = ("==", "!=", ">=", "<=", "~=", ">", "<")

_VERSION_RE = re.compile(r"^\d+(\.\d+){0,3}$")

# Decision grid for constraint_conflicts: versions 0.0.0 .. 20.10.10. A
# bounded, documented decision procedure instead of interval algebra; it is
# exact for the integer-dotted constraint dialect used here.
GRID_MAJOR = range(0, 21)
GRID_MINOR = range(0, 11)
GRID_PATCH = range(0, 11)


class DependencyError(Exception):
    """Base class for dependency-protocol failures."""


class BadConstraintError(DependencyError):
    def __init__(self, text: str, reason: str = ""):
        detail = f": {reason}" if reason else ""
        super().__init__(f"bad version constraint {text!r}{detail}")
        self.text = text


class RequirementsParseError(DependencyError):
    def __init__(self, line_no: int, line: str):
        super().__init__(f"cannot parse requirement on line {line_no}: {line!r}")
        self.line_no = line_no


class NoSuchConflictError(DependencyError):
    pass


class ConflictsPendingError(DependencyError):
    pass


class EmptyWaitingListError(DependencyError):
    pass


def parse_version(text: str) -> tuple[int, ...]:
    if not _VERSION_RE.match(text):
        raise BadConstraintError(text, "version must be 1-4 dot-separated integers")
    return tuple(int(p) for p in text.split("."))


def _cmp_versions(a: tuple[int, ...], b: tuple[int, ...]) -> int:
    width = max(len(a), len(b))
    a = a + (0,) * (width - len(a))
    b = b + (0,) * (width - len(b))
    return (a > b) - (a < b)


@dataclass(frozen=True)
class VersionConstraint:
    """A conjunction of clauses like ``>=1.0,<2.0``; empty means latest."""

    clauses: tuple[tuple[str, str], ...] = ()

    @classmethod
    def parse(cls, text: str) -> "VersionConstraint":
        text = text.strip()
        if not text:
            return cls()
        clauses = []
        for part in text.split(","):
            part = part.strip()
            if not part:
                raise BadConstraintError(text, "empty clause")
            for op in CONSTRAINT_OPS:
                if part.startswith(op):
                    version = part[len(op) :].strip()
                    parse_version(version)
                    clauses.append((op, version))
                    break
            else:
                raise BadConstraintError(text, f"no operator in clause {part!r}")
        return cls(tuple(clauses))

    @property
    def is_latest(self) -> bool:
        return not self.clauses

    def text(self) -> str:
        return ",".join(op + ver for op, ver in self.clauses)

    def _expanded(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        # "~= X.Y" behaves as ">= X.Y, < X.(Y+1)" for satisfaction checks:
        # the last stated component is bumped to form the upper bound.
        cached = getattr(self, "_expanded_cache", None)
        if cached is not None:
            return cached
        expanded: list[tuple[str, tuple[int, ...]]] = []
        for op, ver in self.clauses:
            parts = parse_version(ver)
            if op == "~=":
                if len(parts) < 2:
                    raise BadConstraintError(ver, "~= needs at least two components")
                expanded.append((">=", parts))
                expanded.append(("<", parts[:-1] + (parts[-1] + 1,)))
            else:
                expanded.append((op, parts))
        object.__setattr__(self, "_expanded_cache", tuple(expanded))
        return tuple(expanded)

    def satisfies_parts(self, v: tuple[int, ...]) -> bool:
        for op, bound in self._expanded():
            c = _cmp_versions(v, bound)
            ok = (
                c == 0 if op == "==" else
                c != 0 if op == "!=" else
                c >= 0 if op == ">=" else
                c <= 0 if op == "<=" else
                c > 0 if op == ">" else
                c < 0
            )
            if not ok:
                return False
        return True

    def satisfies(self, version: str) -> bool:
        return self.satisfies_parts(parse_version(version))


def constraint_satisfies(version: str, constraint: str | VersionConstraint) -> bool:
    if isinstance(constraint, str):
        constraint = VersionConstraint.parse(constraint)
    return constraint.satisfies(version)


def constraint_conflicts(
    a: str | VersionConstraint, b: str | VersionConstraint
) -> bool:
    """True when no grid version satisfies both constraints."""
    if isinstance(a, str):
        a = VersionConstraint.parse(a)
    if isinstance(b, str):
        b = VersionConstraint.parse(b)
    for major in GRID_MAJOR:
        for minor in GRID_MINOR:
            for patch in GRID_PATCH:
                parts = (major, minor, patch)
                if a.satisfies_parts(parts) and b.satisfies_parts(parts):
                    return False
    return True


def normalize_package(name: str, tool: str) -> str:
    return name.strip().lower() if tool == "pip" else name.strip()


@dataclass(frozen=True)
class WaitingItem:
    package: str
    constraint: VersionConstraint
    tool: str  # "pip" or "apt"

    def display(self) -> str:
        constraint = self.constraint.text() or "latest"
        return f"{self.package} {constraint} ({self.tool})"


@dataclass(frozen=True)
class ConflictItem:
    package: str
    tool: str
    existing: VersionConstraint
    incoming: VersionConstraint

    def display(self) -> str:
        return (
            f"{self.package} ({self.tool}): existing "
            f"{self.existing.text() or 'latest'} vs incoming "
            f"{self.incoming.text() or 'latest'}"
        )


@dataclass(frozen=True)
class DownloadResult:
    package: str
    tool: str
    resolved_version: str | None
    status: str  # "ok" or "failed"


_REQUIREMENT_LINE_RE = re.compile(r"^([A-Za-z0-9][A-Za-z0-9._\[\]-]*)\s*(.*)$")


def parse_requirements_text(text: str) -> list[tuple[str, str]]:
    """Parse requirements.txt-style content into (name, constraint) pairs."""
    out = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _REQUIREMENT_LINE_RE.match(line)
        if not m:
            raise RequirementsParseError(line_no, raw)
        name, rest = m.group(1), m.group(2).strip()
        if rest and not rest.startswith(CONSTRAINT_OPS):
            raise RequirementsParseError(line_no, raw)
        VersionConstraint.parse(rest)  # surfaces bad constraints with context
        out.append((name, rest))
    return out


class DependencyLists:
    """The per-session waiting-list / conflict-list pair."""

    def __init__(self) -> None:
        self.waiting: list[WaitingItem] = []
        self.conflicts: list[ConflictItem] = []

    def _find_waiting(self, package: str, tool: str) -> WaitingItem | None:
        for item in self.waiting:
            if item.package == package and item.tool == tool:
                return item
        return None

    def add(self, package: str, constraint_text: str, tool: str) -> str:
        """Queue a package. Returns "added", "unchanged" or "conflict-queued"."""
        if tool not in ("pip", "apt"):
            raise DependencyError(f"unknown install tool {tool!r}")
        constraint = VersionConstraint.parse(constraint_text)
        if tool == "apt" and not constraint.is_latest:
            raise BadConstraintError(constraint_text, "apt packages take no constraints")
        package = normalize_package(package, tool)
        if not package:
            raise DependencyError("package name must be non-empty")
        existing = self._find_waiting(package, tool)
        if existing is None:
            self.waiting.append(WaitingItem(package, constraint, tool))
            return "added"
        if existing.constraint == constraint:
            return "unchanged"
        self.conflicts.append(
            ConflictItem(package, tool, existing.constraint, constraint)
        )
        return "conflict-queued"

    def add_requirements(self, text: str) -> int:
        """Feed requirements-file content through add(); returns count added."""
        added = 0
        for name, constraint in parse_requirements_text(text):
            if self.add(name, constraint, "pip") == "added":
                added += 1
        return added

    def solve_first_conflict(self, use_version: str | None) -> ConflictItem:
        """Resolve the head of the conflict list.

        ``use_version`` replaces the waiting entry's constraint; None keeps
        the original constraint and discards the incoming one.
        """
        if not self.conflicts:
            raise NoSuchConflictError("conflict list is empty")
        conflict = self.conflicts.pop(0)
        if use_version is not None:
            replacement = VersionConstraint.parse(use_version)
            self.waiting = [
                WaitingItem(item.package, replacement, item.tool)
                if item.package == conflict.package and item.tool == conflict.tool
                else item
                for item in self.waiting
            ]
        return conflict

    def clear_waiting(self) -> int:
        n = len(self.waiting)
        self.waiting.clear()
        return n

    def clear_conflicts(self) -> int:
        n = len(self.conflicts)
        self.conflicts.clear()
        return n

    def show_waiting(self) -> str:
        if not self.waiting:
            return "waiting list is empty"
        return "\n".join(item.display() for item in self.waiting)

    def show_conflicts(self) -> str:
        if not self.conflicts:
            return "conflict list is empty"
        return "\n".join(item.display() for item in self.conflicts)


def install_command(item: WaitingItem) -> str:
    if item.tool == "apt":
        return f"apt-get install -y {item.package}"
    spec = item.package + item.constraint.text()
    return f"pip install {shell.quote(spec)}"


def download(
    lists: DependencyLists,
    sandbox: "Sandbox",
    next_turn: Callable[[], int],
    *,
    rollback_enabled: bool = True,
) -> tuple[list[DownloadResult], list["CommandRecord"]]:
    """Drain the waiting list FIFO through guarded installs.

    The conflict list must be empty. A failed item leaves the sandbox rolled
    back and the drain continues with the remaining items; the waiting list
    is empty afterward either way.
    """
    if lists.conflicts:
        raise ConflictsPendingError(
            f"{len(lists.conflicts)} unresolved conflicts; solve or clear them first"
        )
    if not lists.waiting:
        raise EmptyWaitingListError("waiting list is empty")

    results: list[DownloadResult] = []
    records: list["CommandRecord"] = []
    while lists.waiting:
        item = lists.waiting.pop(0)
        command = install_command(item)
        _, record = sandbox.exec_guarded(
            command, turn=next_turn(), rollback_enabled=rollback_enabled
        )
        records.append(record)
        if record.return_code == 0:
            version = sandbox.installed_versions(item.tool).get(
                normalize_package(item.package, item.tool)
            )
            results.append(DownloadResult(item.package, item.tool, version, "ok"))
        else:
            results.append(DownloadResult(item.package, item.tool, None, "failed"))
    return results, records
