"""Deterministic in-memory sandbox: a scripted model of a container.

The simulation models exactly the state the replay-equivalence property
compares: files, directories, environment variables and installed packages.
Package installs are scripted through a registry whose entries either
succeed at a fixed version, fail cleanly, or fail while leaving side
installs behind (the "pollution" the rollback guard exists to contain).
"""

from __future__ import annotations

import copy
import fnmatch
import json
import posixpath
import re
import time
from dataclasses import dataclass, field

from .. import container_scripts
from ..classify import split_package_spec
from ..depmgr import VersionConstraint
from ..shell import ChainedCommand, ParsedLine, ShellSyntaxError, Stage, parse_line
from ..trace import BaseImage, Command
from .base import (
    ExecResult,
    FileMissingError,
    Sandbox,
    UnknownSnapshotError,
)

TEST_PROFILES = ("runs_pass", "runs_fail", "collect_error", "no_tests")

_BASE_DIRS = ("/", "/tmp", "/root", "/usr", "/etc", "/opt")

_KNOWN_COMMANDS = {
    "cd", "ls", "cat", "echo", "pwd", "whoami", "who", "date", "cal", "df",
    "du", "free", "uname", "uptime", "w", "ps", "pgrep", "top", "dmesg",
    "tail", "head", "grep", "find", "locate", "which", "file", "stat",
    "cmp", "diff", "xz", "unxz", "sort", "wc", "tr", "cut", "paste", "tee",
    "awk", "env", "printenv", "hostname", "ping", "traceroute", "ssh",
    "mkdir", "touch", "rm", "cp", "mv", "true", "false", "git", "pip",
    "pip3", "apt-get", "pytest", "python", "python3", "poetry", "sh",
    "bash", "export", "pipdeptree", "sleep", "chmod", "uniq",
}


class SimConfigError(ValueError):
    """The scripted catalog or test profile is malformed."""


@dataclass(frozen=True)
class RegistryEntry:
    behavior: str  # "ok" | "fail_clean" | "fail_polluting"
    version: str | None = None
    side_installs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.behavior not in ("ok", "fail_clean", "fail_polluting"):
            raise SimConfigError(f"unknown package behavior {self.behavior!r}")
        if self.behavior == "ok" and not self.version:
            raise SimConfigError("behavior 'ok' requires a version")


class SimRegistry:
    """Scripted package catalog shared by pip and apt installs."""

    def __init__(self, entries: dict[str, RegistryEntry] | None = None):
        self.entries = {k.lower(): v for k, v in (entries or {}).items()}

    @classmethod
    def from_mapping(cls, obj: dict) -> "SimRegistry":
        entries = {}
        for name, spec in obj.items():
            if not isinstance(spec, dict):
                raise SimConfigError(f"registry entry {name!r} must be an object")
            entries[name] = RegistryEntry(
                behavior=spec.get("behavior", "ok"),
                version=spec.get("version"),
                side_installs=tuple(spec.get("side_installs", [])),
            )
        return cls(entries)

    def get(self, name: str) -> RegistryEntry | None:
        return self.entries.get(name.lower())

    def side_version(self, name: str) -> str:
        entry = self.get(name)
        if entry is not None and entry.version:
            return entry.version
        return "0.0.0"


@dataclass
class SimConfig:
    registry: SimRegistry = field(default_factory=SimRegistry)
    test_profile: str = "runs_pass"
    repo_files: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.test_profile not in TEST_PROFILES:
            raise SimConfigError(f"unknown test profile {self.test_profile!r}")

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        obj = json.loads(text)
        if not isinstance(obj, dict):
            raise SimConfigError("sim config must be a JSON object")
        if "registry" in obj or "test_profile" in obj or "repo_files" in obj:
            return cls(
                registry=SimRegistry.from_mapping(obj.get("registry", {})),
                test_profile=obj.get("test_profile", "runs_pass"),
                repo_files=dict(obj.get("repo_files", {})),
            )
        # A bare catalog file: {package: {behavior, version, side_installs}}
        return cls(registry=SimRegistry.from_mapping(obj))


@dataclass
class SimState:
    files: dict[str, str]
    dirs: set[str]
    env: dict[str, str]
    cwd: str
    installed: dict[str, dict[str, str]]

    @classmethod
    def fresh(cls, base_image: BaseImage) -> "SimState":
        env = {
            "PATH": "/usr/local/bin:/usr/local/sbin:/usr/sbin:/usr/bin:/sbin:/bin",
            "HOME": "/root",
        }
        if base_image.python_version:
            env["PYTHON_VERSION"] = base_image.python_version
        return cls(
            files={},
            dirs=set(_BASE_DIRS),
            env=env,
            cwd="/",
            installed={"pip": {}, "apt": {}},
        )

    def clone(self) -> "SimState":
        return copy.deepcopy(self)

    def observable(self, include_cwd: bool = True) -> dict:
        out = {
            "files": dict(self.files),
            "dirs": set(self.dirs),
            "env": dict(self.env),
            "installed": copy.deepcopy(self.installed),
        }
        if include_cwd:
            out["cwd"] = self.cwd
        return out


class SimSandbox(Sandbox):
    """Sandbox backend backed by SimState; exact snapshot/rollback."""

    backend = "sim"

    def __init__(
        self,
        base_image: BaseImage,
        config: SimConfig | None = None,
        session_id: str | None = None,
        repo_source: str | None = None,
    ):
        super().__init__(base_image, session_id)
        self.config = config or SimConfig()
        self.repo_source = repo_source
        self.state = SimState.fresh(base_image)
        self._snapshots: dict[str, SimState] = {}
        self._pinned: set[str] = set()
        self._snapshot_seq = 0

    # -- state plumbing -------------------------------------------------------

    @property
    def cwd(self) -> str:  # mirrors SimState so rollback restores it
        return self.state.cwd if hasattr(self, "state") else "/"

    @cwd.setter
    def cwd(self, value: str) -> None:
        if hasattr(self, "state"):
            self.state.cwd = value

    def observable_state(self, include_cwd: bool = True) -> dict:
        return self.state.observable(include_cwd)

    def snapshot(self, pin: bool = False) -> str:
        # Ids are per-handle; no session prefix so sim traces stay
        # byte-deterministic across runs.
        self._snapshot_seq += 1
        snapshot_id = f"sim-snap-{self._snapshot_seq}"
        # Retention: the most recent snapshot plus pinned ones.
        for old_id in [s for s in self._snapshots if s not in self._pinned]:
            del self._snapshots[old_id]
        self._snapshots[snapshot_id] = self.state.clone()
        if pin:
            self._pinned.add(snapshot_id)
        return snapshot_id

    def rollback(self, snapshot_id: str) -> None:
        if snapshot_id not in self._snapshots:
            raise UnknownSnapshotError(snapshot_id)
        self.state = self._snapshots[snapshot_id].clone()

    def reset_with_base_image(self, image: BaseImage) -> None:
        self.base_image = image
        self.state = SimState.fresh(image)
        self._snapshots.clear()
        self._pinned.clear()

    def installed_versions(self, tool: str) -> dict[str, str]:
        return dict(self.state.installed.get(tool, {}))

    def put_file(self, path: str, content: str) -> None:
        path = self._resolve(path)
        self._ensure_dir_chain(posixpath.dirname(path) or "/")
        self.state.files[path] = content

    def read_file(self, path: str) -> str:
        path = self._resolve(path)
        if path not in self.state.files:
            raise FileMissingError(path)
        return self.state.files[path]

    # -- execution ------------------------------------------------------------

    def exec(self, command: Command | str, timeout: float | None = None) -> ExecResult:
        raw = command.raw if isinstance(command, Command) else command
        started = time.monotonic()
        try:
            parsed = parse_line(raw)
        except ShellSyntaxError as exc:
            return ExecResult(2, "", f"sh: syntax error: {exc}\n", 0)
        rc, stdout, stderr = self._run_parsed(parsed)
        duration_ms = int((time.monotonic() - started) * 1000)
        return ExecResult(rc & 0xFF, stdout, stderr, duration_ms)

    def _run_parsed(self, parsed: ParsedLine) -> tuple[int, str, str]:
        rc = 0
        out_parts: list[str] = []
        err_parts: list[str] = []
        first = True
        for chained in parsed.commands:
            if not first:
                if chained.connector == "&&" and rc != 0:
                    continue
                if chained.connector == "||" and rc == 0:
                    continue
            first = False
            rc, stdout, stderr = self._run_pipeline(chained)
            if stdout:
                out_parts.append(stdout)
            if stderr:
                err_parts.append(stderr)
        return rc, "".join(out_parts), "".join(err_parts)

    def _run_pipeline(self, chained: ChainedCommand) -> tuple[int, str, str]:
        rc = 0
        stdout = ""
        err_parts: list[str] = []
        for stage in chained.stages:
            rc, stdout, stderr = self._run_stage(stage, stdin=stdout)
            if stderr:
                err_parts.append(stderr)
            error_rc, stdout_consumed = self._apply_redirects(stage, stdout, stderr)
            if error_rc is not None:
                rc, stdout = error_rc, ""
            elif stdout_consumed:
                stdout = ""
        return rc, stdout, "".join(err_parts)

    def _apply_redirects(
        self, stage: Stage, stdout: str, stderr: str
    ) -> tuple[int | None, bool]:
        stdout_consumed = False
        for redirect in stage.redirects:
            target = self._resolve(redirect.target)
            parent = posixpath.dirname(target) or "/"
            if parent not in self.state.dirs:
                return 1, True
            payload = stdout if redirect.fd == 1 else stderr
            if redirect.fd == 1:
                stdout_consumed = True
            if redirect.op == ">>":
                self.state.files[target] = self.state.files.get(target, "") + payload
            else:
                self.state.files[target] = payload
        return None, stdout_consumed

    # -- path helpers -----------------------------------------------------------

    def _resolve(self, path: str) -> str:
        if not path.startswith("/"):
            path = posixpath.join(self.state.cwd, path)
        norm = posixpath.normpath(path)
        return norm if norm.startswith("/") else "/" + norm

    def _ensure_dir_chain(self, path: str) -> None:
        path = self._resolve(path)
        parts = [p for p in path.split("/") if p]
        current = ""
        self.state.dirs.add("/")
        for part in parts:
            current += "/" + part
            self.state.dirs.add(current)

    def _is_dir(self, path: str) -> bool:
        return self._resolve(path) in self.state.dirs

    def _children(self, path: str) -> list[str]:
        prefix = self._resolve(path)
        prefix = prefix if prefix.endswith("/") else prefix + "/"
        names = set()
        for p in list(self.state.files) + list(self.state.dirs):
            if p.startswith(prefix) and p != prefix.rstrip("/"):
                names.add(p[len(prefix) :].split("/", 1)[0])
        return sorted(names)

    def _paths_under(self, path: str) -> tuple[list[str], list[str]]:
        root = self._resolve(path)
        prefix = root if root.endswith("/") else root + "/"
        files = [p for p in self.state.files if p == root or p.startswith(prefix)]
        dirs = [d for d in self.state.dirs if d == root or d.startswith(prefix)]
        return files, dirs

    # -- stage dispatch -----------------------------------------------------------

    def _run_stage(self, stage: Stage, stdin: str) -> tuple[int, str, str]:
        argv0 = stage.argv0
        if argv0 is None:
            # pure K=V assignment line: transient, no state change
            return 0, "", ""
        args = list(stage.words[stage.words.index(argv0) + 1 :])
        handler = getattr(self, "_cmd_" + argv0.replace("-", "_"), None)
        if handler is not None:
            return handler(args, stdin)
        if argv0 in _KNOWN_COMMANDS:
            return 0, "", ""  # observation-style command with no model
        return 127, "", f"bash: {argv0}: command not found\n"

    # Each _cmd_* returns (rc, stdout, stderr) and may mutate self.state.

    def _cmd_cd(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        target = args[0] if args else self.state.env.get("HOME", "/")
        resolved = self._resolve(target)
        if resolved in self.state.dirs:
            self.state.cwd = resolved
            return 0, "", ""
        return 1, "", f"bash: cd: {target}: No such file or directory\n"

    def _cmd_pwd(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        return 0, self.state.cwd + "\n", ""

    def _cmd_echo(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        if args and args[0] == "-n":
            return 0, " ".join(args[1:]), ""
        return 0, " ".join(args) + "\n", ""

    def _cmd_export(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        for word in args:
            key, eq, value = word.partition("=")
            if eq and re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", key):
                self.state.env[key] = value
        return 0, "", ""

    def _cmd_env(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        body = "".join(f"{k}={v}\n" for k, v in sorted(self.state.env.items()))
        return 0, body, ""

    _cmd_printenv = _cmd_env

    def _cmd_whoami(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        return 0, "root\n", ""

    def _cmd_hostname(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        return 0, f"envforge-{self.session_id}\n", ""

    def _cmd_uname(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        return 0, "Linux\n", ""

    def _cmd_date(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        return 0, "Thu Jan  1 00:00:00 UTC 2026\n", ""

    def _cmd_true(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        return 0, "", ""

    def _cmd_false(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        return 1, "", ""

    def _cmd_sleep(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        return 0, "", ""

    def _cmd_cat(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        if not args:
            return 0, stdin, ""
        rc = 0
        out: list[str] = []
        err: list[str] = []
        for path in args:
            resolved = self._resolve(path)
            if resolved in self.state.files:
                out.append(self.state.files[resolved])
            else:
                err.append(f"cat: {path}: No such file or directory\n")
                rc = 1
        return rc, "".join(out), "".join(err)

    def _cmd_ls(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        paths = [a for a in args if not a.startswith("-")] or [self.state.cwd]
        rc = 0
        out: list[str] = []
        err: list[str] = []
        for path in paths:
            resolved = self._resolve(path)
            if resolved in self.state.dirs:
                out.extend(name + "\n" for name in self._children(resolved))
            elif resolved in self.state.files:
                out.append(path + "\n")
            else:
                err.append(f"ls: cannot access '{path}': No such file or directory\n")
                rc = 2
        return rc, "".join(out), "".join(err)

    def _read_sources(self, args: list[str], stdin: str) -> tuple[str, int, str]:
        if not args:
            return stdin, 0, ""
        parts: list[str] = []
        for path in args:
            resolved = self._resolve(path)
            if resolved not in self.state.files:
                return "", 1, f"{path}: No such file or directory\n"
            parts.append(self.state.files[resolved])
        return "".join(parts), 0, ""

    def _cmd_head(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        n, files = self._parse_n(args)
        text, rc, err = self._read_sources(files, stdin)
        lines = text.splitlines(keepends=True)
        return rc, "".join(lines[:n]), err

    def _cmd_tail(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        n, files = self._parse_n(args)
        text, rc, err = self._read_sources(files, stdin)
        lines = text.splitlines(keepends=True)
        return rc, "".join(lines[-n:]) if lines else "", err

    @staticmethod
    def _parse_n(args: list[str]) -> tuple[int, list[str]]:
        n = 10
        files = []
        i = 0
        while i < len(args):
            if args[i] == "-n" and i + 1 < len(args):
                try:
                    n = int(args[i + 1])
                except ValueError:
                    pass
                i += 2
            elif args[i].startswith("-"):
                i += 1
            else:
                files.append(args[i])
                i += 1
        return n, files

    def _cmd_grep(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        flags = [a for a in args if a.startswith("-")]
        rest = [a for a in args if not a.startswith("-")]
        if not rest:
            return 2, "", "usage: grep PATTERN [FILE...]\n"
        pattern, files = rest[0], rest[1:]
        try:
            matcher = re.compile(pattern)
        except re.error:
            matcher = None
        text, rc, err = self._read_sources(files, stdin)
        if rc != 0:
            return 2, "", err
        matched = [
            line
            for line in text.splitlines(keepends=True)
            if (matcher.search(line) if matcher else pattern in line)
        ]
        if "-c" in flags:
            return (0 if matched else 1), f"{len(matched)}\n", ""
        return (0 if matched else 1), "".join(matched), ""

    def _cmd_wc(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        flags = [a for a in args if a.startswith("-")]
        files = [a for a in args if not a.startswith("-")]
        text, rc, err = self._read_sources(files, stdin)
        if rc != 0:
            return rc, "", err
        lines = len(text.splitlines())
        if "-l" in flags:
            return 0, f"{lines}\n", ""
        words = len(text.split())
        return 0, f"{lines} {words} {len(text)}\n", ""

    def _cmd_which(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        rc = 0
        out = []
        for name in args:
            if name in _KNOWN_COMMANDS:
                out.append(f"/usr/bin/{name}\n")
            else:
                rc = 1
        return rc, "".join(out), ""

    def _cmd_find(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        root = self.state.cwd
        name_pattern = None
        i = 0
        while i < len(args):
            if args[i] == "-name" and i + 1 < len(args):
                name_pattern = args[i + 1]
                i += 2
            elif not args[i].startswith("-"):
                root = args[i]
                i += 1
            else:
                i += 1
        files, dirs = self._paths_under(root)
        out = []
        for path in sorted(set(files) | set(dirs)):
            if name_pattern is None or fnmatch.fnmatch(posixpath.basename(path), name_pattern):
                out.append(path + "\n")
        return 0, "".join(out), ""

    def _cmd_sort(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        text, rc, err = self._read_sources(args, stdin)
        if rc != 0:
            return rc, "", err
        return 0, "".join(sorted(text.splitlines(keepends=True))), ""

    def _cmd_mkdir(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        parents = "-p" in args
        paths = [a for a in args if not a.startswith("-")]
        if not paths:
            return 1, "", "mkdir: missing operand\n"
        rc = 0
        err = []
        for path in paths:
            resolved = self._resolve(path)
            if parents:
                self._ensure_dir_chain(resolved)
                continue
            if resolved in self.state.dirs or resolved in self.state.files:
                err.append(f"mkdir: cannot create directory '{path}': File exists\n")
                rc = 1
            elif posixpath.dirname(resolved) not in self.state.dirs:
                err.append(f"mkdir: cannot create directory '{path}': No such file or directory\n")
                rc = 1
            else:
                self.state.dirs.add(resolved)
        return rc, "", "".join(err)

    def _cmd_touch(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        rc = 0
        err = []
        for path in args:
            resolved = self._resolve(path)
            if posixpath.dirname(resolved) not in self.state.dirs:
                err.append(f"touch: cannot touch '{path}': No such file or directory\n")
                rc = 1
            else:
                self.state.files.setdefault(resolved, "")
        return rc, "", "".join(err)

    def _cmd_rm(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        recursive = any(a in ("-r", "-rf", "-fr", "-R") for a in args)
        force = any(a in ("-f", "-rf", "-fr") for a in args)
        paths = [a for a in args if not a.startswith("-")]
        rc = 0
        err = []
        # Failures midway leave earlier deletions in place: this is the
        # partial-effect behavior the rollback guard protects against.
        for path in paths:
            resolved = self._resolve(path)
            if resolved in self.state.files:
                del self.state.files[resolved]
            elif resolved in self.state.dirs:
                if not recursive:
                    err.append(f"rm: cannot remove '{path}': Is a directory\n")
                    rc = 1
                    continue
                files, dirs = self._paths_under(resolved)
                for f in files:
                    del self.state.files[f]
                for d in dirs:
                    self.state.dirs.discard(d)
            elif not force:
                err.append(f"rm: cannot remove '{path}': No such file or directory\n")
                rc = 1
        return rc, "", "".join(err)

    def _cmd_cp(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        recursive = any(a in ("-r", "-R", "-a") for a in args)
        paths = [a for a in args if not a.startswith("-")]
        if len(paths) < 2:
            return 1, "", "cp: missing file operand\n"
        src, dst = self._resolve(paths[0]), self._resolve(paths[1])
        if src in self.state.files:
            if dst in self.state.dirs:
                dst = posixpath.join(dst, posixpath.basename(src))
            if posixpath.dirname(dst) not in self.state.dirs:
                return 1, "", f"cp: cannot create '{paths[1]}': No such file or directory\n"
            self.state.files[dst] = self.state.files[src]
            return 0, "", ""
        if src in self.state.dirs:
            if not recursive:
                return 1, "", f"cp: -r not specified; omitting directory '{paths[0]}'\n"
            files, dirs = self._paths_under(src)
            self._ensure_dir_chain(dst)
            for d in dirs:
                self._ensure_dir_chain(dst + d[len(src) :])
            for f in files:
                self.state.files[dst + f[len(src) :]] = self.state.files[f]
            return 0, "", ""
        return 1, "", f"cp: cannot stat '{paths[0]}': No such file or directory\n"

    def _cmd_mv(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        rc, out, err = self._cmd_cp(["-r"] + args, stdin)
        if rc != 0:
            return rc, out, err.replace("cp:", "mv:")
        paths = [a for a in args if not a.startswith("-")]
        return self._cmd_rm(["-rf", paths[0]], "")

    # -- git ------------------------------------------------------------------

    def _cmd_git(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        if not args:
            return 1, "", "usage: git <command>\n"
        sub = args[0]
        if sub == "clone":
            rest = [a for a in args[1:] if not a.startswith("-")]
            if not rest:
                return 129, "", "fatal: You must specify a repository to clone.\n"
            src = rest[0]
            dest = rest[1] if len(rest) > 1 else posixpath.basename(src.rstrip("/")).removesuffix(".git")
            resolved = self._resolve(dest)
            if resolved in self.state.dirs and self._children(resolved):
                return 128, "", f"fatal: destination path '{dest}' already exists\n"
            self._ensure_dir_chain(resolved)
            self._ensure_dir_chain(posixpath.join(resolved, ".git"))
            self.state.files[posixpath.join(resolved, ".git", "ORIG_URL")] = src + "\n"
            for rel, content in sorted(self.config.repo_files.items()):
                target = posixpath.join(resolved, rel.lstrip("/"))
                self._ensure_dir_chain(posixpath.dirname(target))
                self.state.files[target] = content
            return 0, f"Cloning into '{dest}'...\n", ""
        if sub == "checkout":
            ref = args[1] if len(args) > 1 else ""
            return 0, f"HEAD is now at {ref[:12]}\n", ""
        return 0, "", ""

    # -- package installs -------------------------------------------------------

    def _cmd_pip(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        if not args:
            return 1, "", "pip: missing command\n"
        sub = args[0]
        if sub == "install":
            return self._pip_install(args[1:])
        if sub in ("list", "freeze"):
            freeze = sub == "freeze" or "--format=freeze" in args
            pkgs = sorted(self.state.installed["pip"].items())
            if freeze:
                return 0, "".join(f"{n}=={v}\n" for n, v in pkgs), ""
            header = "Package Version\n------- -------\n"
            return 0, header + "".join(f"{n} {v}\n" for n, v in pkgs), ""
        if sub == "show":
            name = next((a for a in args[1:] if not a.startswith("-")), "")
            version = self.state.installed["pip"].get(name.lower())
            if version is None:
                return 1, "", f"WARNING: Package(s) not found: {name}\n"
            return 0, f"Name: {name}\nVersion: {version}\n", ""
        if sub == "uninstall":
            removed = False
            for name in args[1:]:
                if name.startswith("-"):
                    continue
                removed = self.state.installed["pip"].pop(name.lower(), None) is not None or removed
            return (0 if removed else 1), "", ""
        return 0, "", ""

    _cmd_pip3 = _cmd_pip

    def _gather_pip_specs(self, args: list[str]) -> tuple[list[str], str | None]:
        """Positional specs plus requirements expansion; None on read error."""
        specs: list[str] = []
        i = 0
        while i < len(args):
            word = args[i]
            if word in ("-r", "--requirement"):
                if i + 1 >= len(args):
                    return [], word
                resolved = self._resolve(args[i + 1])
                if resolved not in self.state.files:
                    return [], args[i + 1]
                for line in self.state.files[resolved].splitlines():
                    line = line.split("#", 1)[0].strip()
                    if line:
                        specs.append(line)
                i += 2
            elif word in ("-e", "--editable", "--index-url", "--extra-index-url"):
                i += 2
            elif word.startswith("-"):
                i += 1
            else:
                specs.append(word)
                i += 1
        return specs, None

    def _pip_install(self, args: list[str]) -> tuple[int, str, str]:
        specs, bad = self._gather_pip_specs(args)
        if bad is not None:
            return 1, "", f"ERROR: Could not open requirements file: {bad}\n"
        if not specs:
            return 1, "", "ERROR: You must give at least one requirement to install\n"
        pending: dict[str, str] = {}
        pollution: dict[str, str] = {}
        errors: list[str] = []
        for spec in specs:
            name, constraint_text = split_package_spec(spec)
            norm = name.lower()
            entry = self.config.registry.get(norm)
            if entry is None:
                errors.append(
                    f"ERROR: Could not find a version that satisfies the requirement {spec}\n"
                )
                continue
            if entry.behavior == "fail_clean":
                errors.append(f"ERROR: Failed building wheel for {name}\n")
                continue
            if entry.behavior == "fail_polluting":
                for side in entry.side_installs:
                    pollution[side.lower()] = self.config.registry.side_version(side)
                errors.append(f"ERROR: Failed building wheel for {name}\n")
                continue
            try:
                constraint = VersionConstraint.parse(constraint_text)
            except Exception:
                errors.append(f"ERROR: Invalid requirement: {spec}\n")
                continue
            assert entry.version is not None
            if not constraint.satisfies(entry.version):
                errors.append(
                    f"ERROR: No matching distribution found for {spec} "
                    f"(available: {entry.version})\n"
                )
                continue
            pending[norm] = entry.version
        if errors:
            # Failed resolutions abort the install, but side installs from
            # polluting packages have already landed.
            self.state.installed["pip"].update(pollution)
            return 1, "", "".join(errors)
        self.state.installed["pip"].update(pending)
        body = " ".join(f"{n}-{v}" for n, v in sorted(pending.items()))
        return 0, f"Successfully installed {body}\n", ""

    def _cmd_apt_get(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        if not args:
            return 1, "", "apt-get: missing command\n"
        sub = args[0]
        if sub == "update":
            return 0, "Reading package lists... Done\n", ""
        if sub != "install":
            return 0, "", ""
        names = [a for a in args[1:] if not a.startswith("-")]
        pending: dict[str, str] = {}
        pollution: dict[str, str] = {}
        errors: list[str] = []
        for name in names:
            entry = self.config.registry.get(name)
            if entry is None:
                errors.append(f"E: Unable to locate package {name}\n")
            elif entry.behavior == "fail_clean":
                errors.append(f"E: Package '{name}' has no installation candidate\n")
            elif entry.behavior == "fail_polluting":
                for side in entry.side_installs:
                    pollution[side.lower()] = self.config.registry.side_version(side)
                errors.append(f"E: Unable to correct problems for {name}\n")
            else:
                pending[name.lower()] = entry.version or "0"
        if errors:
            self.state.installed["apt"].update(pollution)
            return 100, "", "".join(errors)
        self.state.installed["apt"].update(pending)
        listing = " ".join(sorted(pending))
        return 0, f"Setting up {listing} ... Done\n", ""

    def _cmd_pipdeptree(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        pkgs = sorted(self.state.installed["pip"].items())
        return 0, "".join(f"{n}=={v}\n" for n, v in pkgs), ""

    # -- tests ------------------------------------------------------------------

    def _cmd_pytest(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        profile = self.config.test_profile
        collect_only = "--collect-only" in args
        if profile == "collect_error":
            return (
                2,
                "",
                "ERROR: errors during collection\n"
                "ImportError while importing test module 'tests/test_app.py'\n"
                "ModuleNotFoundError: No module named 'missing_dep'\n",
            )
        if profile == "no_tests":
            return 5, "no tests ran\n", ""
        if collect_only:
            return 0, "tests/test_app.py::test_ok\n1 test collected\n", ""
        if profile == "runs_fail":
            return 1, "FAILED tests/test_app.py::test_ok\n1 failed\n", ""
        return 0, "1 passed\n", ""

    def _cmd_poetry(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        if args and args[0] == "run" and len(args) > 1:
            return self._run_stage(Stage(tuple(args[1:])), stdin)
        return 0, "", ""

    # -- helper scripts ------------------------------------------------------------

    def _cmd_python(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        if not args:
            return 0, "", ""
        if args[0] == "--version":
            version = self.base_image.python_version or "3.10"
            return 0, f"Python {version}\n", ""
        if args[0] == "-c":
            return 0, "", ""
        script = self._resolve(args[0])
        if script.endswith("/code_edit.py"):
            return self._run_edit_script(args[1:])
        if script.endswith("/pipreqs_scan.py"):
            return self._run_pipreqs_script(args[1:])
        if script in self.state.files:
            return 0, "", ""
        return 2, "", f"python: can't open file '{args[0]}'\n"

    _cmd_python3 = _cmd_python

    def _cmd_sh(self, args: list[str], stdin: str) -> tuple[int, str, str]:
        if len(args) >= 2 and args[0] == "-c":
            try:
                parsed = parse_line(args[1])
            except ShellSyntaxError as exc:
                return 2, "", f"sh: syntax error: {exc}\n"
            return self._run_parsed(parsed)
        if args and self._resolve(args[0]) in self.state.files:
            return 0, "", ""
        return 127, "", f"sh: {args[0] if args else ''}: not found\n"

    _cmd_bash = _cmd_sh

    def _run_edit_script(self, args: list[str]) -> tuple[int, str, str]:
        if len(args) != 3:
            return 2, "", "usage: code_edit.py MODE PATCH_FILE TARGET\n"
        mode, patch_path, target = args
        patch_resolved = self._resolve(patch_path)
        if patch_resolved not in self.state.files:
            return 2, "", f"cannot read patch: {patch_path}\n"
        target_resolved = self._resolve(target)
        parent = posixpath.dirname(target_resolved) or "/"
        if parent not in self.state.dirs:
            return 2, "", f"target directory does not exist: {parent}\n"
        original = self.state.files.get(target_resolved)
        try:
            content = container_scripts.apply_edit_text(
                mode, self.state.files[patch_resolved], original
            )
        except container_scripts.EditApplyError as exc:
            return 2, "", f"patch failed: {exc}\n"
        self.state.files[target_resolved] = content
        return 0, f"edited {target}\n", ""

    def _run_pipreqs_script(self, args: list[str]) -> tuple[int, str, str]:
        root = self._resolve(args[0] if args else "/repo")
        if root not in self.state.dirs:
            return 1, "", f"no such directory: {root}\n"
        prefix = root.rstrip("/") + "/"
        sources = {
            p: c
            for p, c in self.state.files.items()
            if p.startswith(prefix) and p.endswith(".py")
        }
        local = container_scripts.local_module_names(list(sources), root)
        requirements = container_scripts.scan_imports(sources, local)
        self.state.files[posixpath.join(root, "requirements_pipreqs.txt")] = "".join(
            name + "\n" for name in requirements
        )
        log = f"found {len(requirements)} candidate requirements"
        self.state.files[posixpath.join(root, "pipreqs_output.txt")] = log + "\n"
        self.state.files[posixpath.join(root, "pipreqs_error.txt")] = ""
        return 0, log + "\n", ""
