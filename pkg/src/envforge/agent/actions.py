"""Action vocabulary: what a policy may ask the build session to do.

Actions arrive either as structured objects (scripted policies) or as the
command-line syntax a language model emits; ``parse_action`` handles the
latter, treating anything that is not a known verb as a bash command.
"""

from __future__ import annotations

import re
import shlex
from dataclasses import dataclass, field
from typing import Any

VERBS = (
    "bash",
    "waitinglist_add",
    "waitinglist_addfile",
    "waitinglist_clear",
    "waitinglist_show",
    "conflictlist_solve",
    "conflictlist_clear",
    "conflictlist_show",
    "download",
    "runtest",
    "poetryruntest",
    "runpipreqs",
    "change_python_version",
    "clear_configuration",
    "edit_file",
)

_PY_VERSION_RE = re.compile(r"^\d+\.\d+(\.\d+)?$")

_HEREDOC_RE = re.compile(r"<<-?\s*'?(\w+)'?\s*$")


class ActionParseError(ValueError):
    """The policy's reply could not be turned into a single valid action."""


class InvalidActionError(ValueError):
    """A structurally known verb carried bad arguments."""


@dataclass(frozen=True)
class Action:
    verb: str
    args: dict[str, Any] = field(default_factory=dict)
    thought: str | None = None


def validate_action(action: Action) -> None:
    verb, args = action.verb, action.args
    if verb not in VERBS:
        raise InvalidActionError(f"unknown verb {verb!r}")
    if verb == "bash" and not str(args.get("command", "")).strip():
        raise InvalidActionError("bash action needs a command")
    if verb == "waitinglist_add":
        if not args.get("package"):
            raise InvalidActionError("waitinglist add needs -p PACKAGE")
        if args.get("tool") not in ("pip", "apt"):
            raise InvalidActionError("waitinglist add needs -t pip|apt")
    if verb == "waitinglist_addfile" and not args.get("path"):
        raise InvalidActionError("waitinglist addfile needs a path")
    if verb == "conflictlist_solve":
        if ("use_version" in args) == bool(args.get("keep_original")):
            raise InvalidActionError("conflictlist solve takes -v CONSTRAINTS or -u")
    if verb == "change_python_version":
        version = str(args.get("version", ""))
        if not _PY_VERSION_RE.match(version):
            raise InvalidActionError(f"bad python version {version!r}")
    if verb == "edit_file":
        if not args.get("path"):
            raise InvalidActionError("edit_file needs a path")
        if ("content" in args) == ("diff" in args):
            raise InvalidActionError("edit_file needs exactly one of content/diff")


def action_from_dict(obj: dict[str, Any]) -> Action:
    if "verb" not in obj:
        raise ActionParseError("action object lacks a verb")
    action = Action(
        verb=obj["verb"], args=dict(obj.get("args", {})), thought=obj.get("thought")
    )
    validate_action(action)
    return action


def _split_heredoc(text: str) -> tuple[str, str | None]:
    """Separate a leading command line from heredoc body content."""
    lines = text.splitlines()
    head = lines[0] if lines else ""
    m = _HEREDOC_RE.search(head)
    if not m:
        return text.strip(), None
    sentinel = m.group(1)
    body_lines = []
    for line in lines[1:]:
        if line.strip() == sentinel:
            break
        body_lines.append(line)
    else:
        raise ActionParseError(f"heredoc not terminated by {sentinel!r}")
    return _HEREDOC_RE.sub("", head).strip(), "\n".join(body_lines) + "\n"


def parse_action(text: str, thought: str | None = None) -> Action:
    """Parse one agent command line (plus optional heredoc body) into an Action."""
    text = text.strip()
    if not text:
        raise ActionParseError("empty command")
    head, heredoc = _split_heredoc(text)
    try:
        words = shlex.split(head)
    except ValueError as exc:
        raise ActionParseError(f"cannot tokenize command: {exc}") from exc
    if not words:
        raise ActionParseError("empty command")
    verb = words[0]

    if verb in ("waitinglist", "conflictlist"):
        action = _parse_list_verb(verb, words[1:])
    elif verb in ("download", "runtest", "poetryruntest", "runpipreqs", "clear_configuration"):
        action = Action(verb=verb)
    elif verb == "change_python_version":
        if len(words) != 2:
            raise ActionParseError("usage: change_python_version X.Y")
        action = Action(verb=verb, args={"version": words[1]})
    elif verb == "edit_file":
        action = _parse_edit(words[1:], heredoc)
    else:
        # Everything else is a bash line, verbatim (single line only).
        if heredoc is not None:
            raise ActionParseError("heredocs are only supported for edit_file")
        if "\n" in text:
            raise ActionParseError(
                "multi-line commands are not supported; use edit_file for file content"
            )
        action = Action(verb="bash", args={"command": text})

    if thought is not None:
        action = Action(verb=action.verb, args=action.args, thought=thought)
    try:
        validate_action(action)
    except InvalidActionError as exc:
        raise ActionParseError(str(exc)) from exc
    return action


def _parse_list_verb(noun: str, words: list[str]) -> Action:
    if not words:
        raise ActionParseError(f"usage: {noun} add|addfile|solve|clear|show ...")
    sub = words[0]
    rest = words[1:]
    if noun == "waitinglist" and sub == "add":
        args: dict[str, Any] = {"constraint": ""}
        i = 0
        while i < len(rest):
            flag = rest[i]
            if flag == "-p" and i + 1 < len(rest):
                args["package"] = rest[i + 1]
                i += 2
            elif flag == "-v":
                if i + 1 < len(rest) and not rest[i + 1].startswith("-"):
                    args["constraint"] = rest[i + 1]
                    i += 2
                else:
                    i += 1
            elif flag == "-t" and i + 1 < len(rest):
                args["tool"] = rest[i + 1]
                i += 2
            else:
                raise ActionParseError(f"unexpected argument {flag!r}")
        return Action(verb="waitinglist_add", args=args)
    if noun == "waitinglist" and sub == "addfile":
        if len(rest) != 1:
            raise ActionParseError("usage: waitinglist addfile PATH")
        return Action(verb="waitinglist_addfile", args={"path": rest[0]})
    if noun == "conflictlist" and sub == "solve":
        if rest == ["-u"]:
            return Action(verb="conflictlist_solve", args={"keep_original": True})
        if not rest or rest[0] != "-v":
            raise ActionParseError('usage: conflictlist solve -v "CONSTRAINTS" | -u')
        constraint = rest[1] if len(rest) > 1 else ""
        return Action(verb="conflictlist_solve", args={"use_version": constraint})
    if sub in ("clear", "show") and not rest:
        return Action(verb=f"{noun}_{sub}")
    raise ActionParseError(f"unknown {noun} subcommand {sub!r}")


def _parse_edit(words: list[str], heredoc: str | None) -> Action:
    mode = "content"
    paths = []
    for word in words:
        if word == "--diff":
            mode = "diff"
        elif word.startswith("-"):
            raise ActionParseError(f"unknown edit_file flag {word!r}")
        else:
            paths.append(word)
    if len(paths) != 1:
        raise ActionParseError("usage: edit_file [--diff] PATH <<EOF ... EOF")
    if heredoc is None:
        raise ActionParseError("edit_file needs a heredoc body with the new content")
    return Action(verb="edit_file", args={"path": paths[0], mode: heredoc})
