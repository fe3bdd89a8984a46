"""Minimal shell-line scanner: enough structure for classification and simulation.

This is deliberately not a POSIX grammar. It understands single/double quotes,
backslash escapes, pipelines, command chains (&&, ||, ;) and output
redirection. Variable expansion, globbing and subshells are out of scope;
lines using them simply tokenize as opaque words.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

_ENV_ASSIGN_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*=")

CHAIN_AND = "&&"
CHAIN_OR = "||"
CHAIN_SEQ = ";"


class ShellSyntaxError(ValueError):
    """Raised for lines we refuse to interpret (unbalanced quotes)."""


@dataclass(frozen=True)
class Redirect:
    """A single output redirection within one pipeline stage."""

    op: str  # ">" or ">>"
    fd: int  # 1 for stdout, 2 for stderr
    target: str


@dataclass(frozen=True)
class Stage:
    """One pipeline stage: its words plus any output redirections."""

    words: tuple[str, ...]
    redirects: tuple[Redirect, ...] = ()

    @property
    def argv0(self) -> str | None:
        """First word after leading KEY=VALUE environment assignments."""
        for word in self.words:
            if not _ENV_ASSIGN_RE.match(word):
                return word
        return None

    @property
    def env_assignments(self) -> tuple[tuple[str, str], ...]:
        pairs = []
        for word in self.words:
            if not _ENV_ASSIGN_RE.match(word):
                break
            key, _, value = word.partition("=")
            pairs.append((key, value))
        return tuple(pairs)


@dataclass(frozen=True)
class ChainedCommand:
    """A pipeline plus the operator connecting it to the previous one."""

    stages: tuple[Stage, ...]
    connector: str = CHAIN_SEQ  # how this command is joined to its predecessor


@dataclass(frozen=True)
class ParsedLine:
    commands: tuple[ChainedCommand, ...]
    has_output_redirect: bool

    @property
    def stages(self) -> tuple[Stage, ...]:
        return tuple(s for cmd in self.commands for s in cmd.stages)

    @property
    def is_simple(self) -> bool:
        """True when the line is a single un-piped, un-chained command."""
        return len(self.commands) == 1 and len(self.commands[0].stages) == 1

    @property
    def first_stage(self) -> Stage:
        return self.commands[0].stages[0]

    @property
    def argv0(self) -> str | None:
        return self.first_stage.argv0 if self.commands else None


@dataclass
class _Scanner:
    text: str
    pos: int = 0
    tokens: list[tuple[str, str]] = field(default_factory=list)  # (kind, value)

    def run(self) -> list[tuple[str, str]]:
        n = len(self.text)
        word: list[str] = []
        had_chars = False  # distinguishes "" (quoted empty word) from no word

        def flush() -> None:
            nonlocal had_chars
            if had_chars:
                self.tokens.append(("word", "".join(word)))
                word.clear()
                had_chars = False

        while self.pos < n:
            ch = self.text[self.pos]
            if ch in " \t":
                flush()
                self.pos += 1
            elif ch == "'":
                end = self.text.find("'", self.pos + 1)
                if end < 0:
                    raise ShellSyntaxError("unbalanced single quote")
                word.append(self.text[self.pos + 1 : end])
                had_chars = True
                self.pos = end + 1
            elif ch == '"':
                self.pos += 1
                closed = False
                while self.pos < n:
                    c = self.text[self.pos]
                    if c == "\\" and self.pos + 1 < n and self.text[self.pos + 1] in '"\\$`':
                        word.append(self.text[self.pos + 1])
                        self.pos += 2
                    elif c == '"':
                        closed = True
                        self.pos += 1
                        break
                    else:
                        word.append(c)
                        self.pos += 1
                if not closed:
                    raise ShellSyntaxError("unbalanced double quote")
                had_chars = True
            elif ch == "\\":
                if self.pos + 1 < n:
                    word.append(self.text[self.pos + 1])
                    had_chars = True
                    self.pos += 2
                else:
                    self.pos += 1
            elif ch == ">":
                # "2>"/"1>" attach the fd when the digit is glued to the operator
                fd = "1"
                if had_chars and len(word) == 1 and word[0] in ("1", "2"):
                    fd = word[0]
                    word.clear()
                    had_chars = False
                flush()
                if self.pos + 1 < n and self.text[self.pos + 1] == ">":
                    self.tokens.append(("redir", fd + ">>"))
                    self.pos += 2
                else:
                    self.tokens.append(("redir", fd + ">"))
                    self.pos += 1
            elif ch == "&":
                flush()
                if self.pos + 1 < n and self.text[self.pos + 1] == "&":
                    self.tokens.append(("op", CHAIN_AND))
                    self.pos += 2
                elif self.pos + 1 < n and self.text[self.pos + 1] == ">":
                    self.tokens.append(("redir", "1>"))  # "&>": both streams; fold to stdout
                    self.pos += 2
                else:
                    self.tokens.append(("op", "&"))
                    self.pos += 1
            elif ch == "|":
                flush()
                if self.pos + 1 < n and self.text[self.pos + 1] == "|":
                    self.tokens.append(("op", CHAIN_OR))
                    self.pos += 2
                else:
                    self.tokens.append(("op", "|"))
                    self.pos += 1
            elif ch == ";":
                flush()
                self.tokens.append(("op", CHAIN_SEQ))
                self.pos += 1
            elif ch == "<":
                flush()
                self.tokens.append(("op", "<"))
                self.pos += 1
            else:
                word.append(ch)
                had_chars = True
                self.pos += 1
        flush()
        return self.tokens


def parse_line(line: str) -> ParsedLine:
    """Split a shell line into chained pipeline stages.

    Raises ShellSyntaxError for unbalanced quotes or an empty line.
    """
    if not line.strip():
        raise ShellSyntaxError("empty command line")
    tokens = _Scanner(line).run()

    commands: list[ChainedCommand] = []
    stages: list[Stage] = []
    words: list[str] = []
    redirects: list[Redirect] = []
    has_redirect = False
    connector = CHAIN_SEQ
    pending_redirect: str | None = None

    def close_stage() -> None:
        if words or redirects:
            stages.append(Stage(tuple(words), tuple(redirects)))
            words.clear()
            redirects.clear()

    def close_command(next_connector: str) -> None:
        nonlocal connector
        close_stage()
        if stages:
            commands.append(ChainedCommand(tuple(stages), connector))
            stages.clear()
        connector = next_connector

    for kind, value in tokens:
        if pending_redirect is not None:
            if kind != "word":
                raise ShellSyntaxError("redirection without a target")
            fd, op = int(pending_redirect[0]), pending_redirect[1:]
            redirects.append(Redirect(op, fd, value))
            pending_redirect = None
            continue
        if kind == "word":
            words.append(value)
        elif kind == "redir":
            has_redirect = True
            pending_redirect = value
        elif value == "|":
            close_stage()
        elif value in (CHAIN_AND, CHAIN_OR, CHAIN_SEQ):
            close_command(value)
        elif value in ("&", "<"):
            continue  # background / input redirection: tolerated, not modeled
    if pending_redirect is not None:
        raise ShellSyntaxError("redirection without a target")
    close_command(CHAIN_SEQ)

    if not commands:
        raise ShellSyntaxError("no command words found")
    return ParsedLine(tuple(commands), has_redirect)


def contains_output_redirect(line: str) -> bool:
    """True when an unquoted ">" or ">>" appears anywhere in the line."""
    return parse_line(line).has_output_redirect


def quote(word: str) -> str:
    """Single-quote a word for safe re-embedding in a shell line."""
    if word and re.fullmatch(r"[A-Za-z0-9_@%+=:,./-]+", word):
        return word
    return "'" + word.replace("'", "'\"'\"'") + "'"
