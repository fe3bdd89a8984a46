"""Helper scripts shipped into the build environment, plus host-side mirrors.

The script texts below are written into the environment (and into the
synthesized image via COPY). The mirror functions implement the same
behavior against an in-memory file map so the simulated backend and the
real scripts stay in lockstep; a test runs both routes on the same inputs.
"""

from __future__ import annotations

import re

EDIT_SCRIPT_PATH = "/opt/envforge/code_edit.py"
PIPREQS_SCRIPT_PATH = "/opt/envforge/pipreqs_scan.py"

EDIT_MODES = ("replace", "udiff")


class EditApplyError(ValueError):
    """The patch cannot be applied (malformed hunk or context mismatch)."""


def apply_udiff_text(original: str, diff: str) -> str:
    """Apply a minimal unified diff: exact context match at stated positions."""
    old_lines = original.splitlines(keepends=True)
    out: list[str] = []
    cursor = 0  # index into old_lines
    hunk_re = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
    lines = diff.splitlines(keepends=True)
    i = 0
    saw_hunk = False
    while i < len(lines):
        line = lines[i]
        if line.startswith(("---", "+++")):
            i += 1
            continue
        m = hunk_re.match(line)
        if not m:
            if line.strip() and not saw_hunk:
                raise EditApplyError(f"unexpected line before first hunk: {line!r}")
            i += 1
            continue
        saw_hunk = True
        # A zero-length old range ("-N,0") marks an insertion point after
        # line N rather than a replacement starting at line N.
        old_count = int(m.group(2)) if m.group(2) is not None else 1
        old_start = int(m.group(1)) if old_count == 0 else int(m.group(1)) - 1
        if old_start < cursor or old_start > len(old_lines):
            raise EditApplyError("hunk positions overlap or run past the file")
        out.extend(old_lines[cursor:old_start])
        cursor = old_start
        i += 1
        while i < len(lines) and not hunk_re.match(lines[i]):
            body = lines[i]
            if body.startswith("+"):
                out.append(body[1:])
            elif body.startswith((" ", "-")):
                if cursor >= len(old_lines):
                    raise EditApplyError("hunk runs past end of file")
                expected = body[1:]
                actual = old_lines[cursor]
                if expected.rstrip("\n") != actual.rstrip("\n"):
                    raise EditApplyError(
                        f"context mismatch at line {cursor + 1}: "
                        f"{actual!r} != {expected!r}"
                    )
                if body.startswith(" "):
                    out.append(actual)
                cursor += 1
            elif body.startswith("\\"):
                pass  # "\ No newline at end of file"
            elif not body.strip():
                i += 1
                continue
            else:
                raise EditApplyError(f"malformed hunk line: {body!r}")
            i += 1
    if not saw_hunk:
        raise EditApplyError("diff contains no hunks")
    out.extend(old_lines[cursor:])
    return "".join(out)


def apply_edit_text(mode: str, patch: str, original: str | None) -> str:
    """New file content for an edit. ``original`` is None when absent."""
    if mode == "replace":
        return patch
    if mode == "udiff":
        return apply_udiff_text(original or "", patch)
    raise EditApplyError(f"unknown edit mode {mode!r}")


_STDLIB_HINT = frozenset(
    {
        "abc", "argparse", "asyncio", "collections", "contextlib", "copy",
        "dataclasses", "datetime", "enum", "functools", "glob", "hashlib",
        "io", "itertools", "json", "logging", "math", "os", "pathlib",
        "random", "re", "shutil", "string", "subprocess", "sys", "tempfile",
        "threading", "time", "types", "typing", "unittest", "uuid",
        "warnings",
    }
)

_IMPORT_RE = re.compile(r"^\s*(?:import|from)\s+([A-Za-z_][A-Za-z0-9_]*)")


def scan_imports(py_sources: dict[str, str], local_modules: set[str]) -> list[str]:
    """Top-level imported module names, minus stdlib and in-repo modules."""
    found: set[str] = set()
    for source in py_sources.values():
        for line in source.splitlines():
            m = _IMPORT_RE.match(line)
            if m:
                found.add(m.group(1))
    return sorted(found - _STDLIB_HINT - local_modules)


def local_module_names(py_paths: list[str], root: str) -> set[str]:
    """Module/package names a repo provides itself (top-level heuristic)."""
    names: set[str] = set()
    prefix = root.rstrip("/") + "/"
    for path in py_paths:
        if not path.startswith(prefix):
            continue
        rel = path[len(prefix) :]
        head = rel.split("/", 1)[0]
        if head.endswith(".py"):
            names.add(head[: -len(".py")])
        else:
            names.add(head)
        # src-layout repos expose the package one level down
        if head == "src" and "/" in rel:
            second = rel.split("/", 2)[1]
            names.add(second[: -len(".py")] if second.endswith(".py") else second)
    return names


EDIT_SCRIPT = '''#!/usr/bin/env python3
"""Apply a recorded edit. Usage: code_edit.py MODE PATCH_FILE TARGET"""
import os
import re
import sys


def apply_udiff_text(original, diff):
    old_lines = original.splitlines(keepends=True)
    out = []
    cursor = 0
    hunk_re = re.compile(r"^@@ -(\\d+)(?:,(\\d+))? \\+(\\d+)(?:,(\\d+))? @@")
    lines = diff.splitlines(keepends=True)
    i = 0
    saw_hunk = False
    while i < len(lines):
        line = lines[i]
        if line.startswith(("---", "+++")):
            i += 1
            continue
        m = hunk_re.match(line)
        if not m:
            if line.strip() and not saw_hunk:
                raise ValueError("unexpected line before first hunk: %r" % line)
            i += 1
            continue
        saw_hunk = True
        old_count = int(m.group(2)) if m.group(2) is not None else 1
        old_start = int(m.group(1)) if old_count == 0 else int(m.group(1)) - 1
        if old_start < cursor or old_start > len(old_lines):
            raise ValueError("hunk positions overlap or run past the file")
        out.extend(old_lines[cursor:old_start])
        cursor = old_start
        i += 1
        while i < len(lines) and not hunk_re.match(lines[i]):
            body = lines[i]
            if body.startswith("+"):
                out.append(body[1:])
            elif body.startswith((" ", "-")):
                if cursor >= len(old_lines):
                    raise ValueError("hunk runs past end of file")
                expected = body[1:]
                actual = old_lines[cursor]
                if expected.rstrip("\\n") != actual.rstrip("\\n"):
                    raise ValueError(
                        "context mismatch at line %d: %r != %r"
                        % (cursor + 1, actual, expected)
                    )
                if body.startswith(" "):
                    out.append(actual)
                cursor += 1
            elif body.startswith("\\\\"):
                pass
            elif not body.strip():
                i += 1
                continue
            else:
                raise ValueError("malformed hunk line: %r" % body)
            i += 1
    if not saw_hunk:
        raise ValueError("diff contains no hunks")
    out.extend(old_lines[cursor:])
    return "".join(out)


def main():
    if len(sys.argv) != 4:
        print("usage: code_edit.py MODE PATCH_FILE TARGET", file=sys.stderr)
        return 2
    mode, patch_file, target = sys.argv[1:4]
    try:
        with open(patch_file, "r", encoding="utf-8") as fh:
            patch = fh.read()
    except OSError as exc:
        print("cannot read patch: %s" % exc, file=sys.stderr)
        return 2
    parent = os.path.dirname(os.path.abspath(target)) or "/"
    if not os.path.isdir(parent):
        print("target directory does not exist: %s" % parent, file=sys.stderr)
        return 2
    if mode == "replace":
        content = patch
    elif mode == "udiff":
        original = ""
        if os.path.exists(target):
            with open(target, "r", encoding="utf-8") as fh:
                original = fh.read()
        try:
            content = apply_udiff_text(original, patch)
        except ValueError as exc:
            print("patch failed: %s" % exc, file=sys.stderr)
            return 2
    else:
        print("unknown edit mode: %s" % mode, file=sys.stderr)
        return 2
    with open(target, "w", encoding="utf-8") as fh:
        fh.write(content)
    print("edited %s" % target)
    return 0


if __name__ == "__main__":
    sys.exit(main())
'''


PIPREQS_SCRIPT = '''#!/usr/bin/env python3
"""Scan a repo's imports and write requirements_pipreqs.txt next to it."""
import os
import re
import sys

STDLIB = set("""abc argparse asyncio collections contextlib copy dataclasses
datetime enum functools glob hashlib io itertools json logging math os
pathlib random re shutil string subprocess sys tempfile threading time types
typing unittest uuid warnings""".split())

IMPORT_RE = re.compile(r"^\\s*(?:import|from)\\s+([A-Za-z_][A-Za-z0-9_]*)")


def main():
    root = sys.argv[1] if len(sys.argv) > 1 else "/repo"
    found = set()
    local = set()
    log = []
    for dirpath, _, filenames in os.walk(root):
        for name in filenames:
            if not name.endswith(".py"):
                continue
            path = os.path.join(dirpath, name)
            rel = os.path.relpath(path, root)
            head = rel.split(os.sep, 1)[0]
            local.add(head[:-3] if head.endswith(".py") else head)
            if head == "src" and os.sep in rel:
                second = rel.split(os.sep, 2)[1]
                local.add(second[:-3] if second.endswith(".py") else second)
            try:
                with open(path, "r", encoding="utf-8", errors="replace") as fh:
                    for line in fh:
                        m = IMPORT_RE.match(line)
                        if m:
                            found.add(m.group(1))
            except OSError as exc:
                log.append("skipped %s: %s" % (rel, exc))
    requirements = sorted(found - STDLIB - local)
    with open(os.path.join(root, "requirements_pipreqs.txt"), "w") as fh:
        fh.write("".join(name + "\\n" for name in requirements))
    log.append("found %d candidate requirements" % len(requirements))
    with open(os.path.join(root, "pipreqs_output.txt"), "w") as fh:
        fh.write("".join(line + "\\n" for line in log))
    with open(os.path.join(root, "pipreqs_error.txt"), "w") as fh:
        fh.write("")
    print("\\n".join(log))
    return 0


if __name__ == "__main__":
    sys.exit(main())
'''
