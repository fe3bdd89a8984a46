"""Benchmark harness: build repositories, verify Dockerfiles, score outcomes.

Two rates: the fraction of attempts whose Dockerfile builds without errors,
and the stricter fraction whose built image actually runs the repository's
tests under pytest (pass or fail). The second can never exceed the first.
"""

from __future__ import annotations

import json
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import dockerfile as df
from .agent import loop as agent_loop
from .agent.policy import Policy, ScriptedPolicy, load_policy
from .sandbox import SimConfig, SimSandbox, create_sandbox
from .sandbox.base import Sandbox
from .trace import DEFAULT_BASE_IMAGE, BaseImage, Trace, serialize_trace

FAILURE_CATEGORIES = (
    "hardware",
    "missing-token",
    "repo-defect",
    "install-timeout",
    "runtest-timeout",
    "other",
)

HISTOGRAM_BUCKET_SECONDS = 600  # ten-minute buckets

_FIXTURE_CONFIG_NAME = "sim.json"
_FIXTURE_ACTIONS_NAME = "actions.json"


class EvalError(Exception):
    pass


@dataclass(frozen=True)
class BenchEntry:
    full_name: str
    sha: str = ""
    source: str = "remote"  # "remote" or a local fixture directory

    @property
    def is_local(self) -> bool:
        return self.source != "remote"

    @classmethod
    def from_json(cls, obj: dict) -> "BenchEntry":
        if "full_name" not in obj:
            raise EvalError(f"bench entry lacks full_name: {obj}")
        return cls(
            full_name=obj["full_name"],
            sha=obj.get("sha", ""),
            source=obj.get("source", "remote"),
        )


@dataclass
class BuildReport:
    entry: BenchEntry
    trace_path: str | None = None
    dockerfile_path: str | None = None
    dockerfile_built: bool = False
    tests_ran: bool = False
    wall_seconds: float = 0.0
    failure_category: str | None = None

    def validate(self) -> None:
        if self.tests_ran and not self.dockerfile_built:
            raise EvalError("tests cannot run without a built image")
        if (self.failure_category is None) != self.tests_ran:
            raise EvalError("failure_category present iff tests did not run")
        if self.failure_category is not None and self.failure_category not in FAILURE_CATEGORIES:
            raise EvalError(f"unknown failure category {self.failure_category!r}")

    def to_json(self) -> dict:
        return {
            "full_name": self.entry.full_name,
            "sha": self.entry.sha,
            "source": self.entry.source,
            "trace_path": self.trace_path,
            "dockerfile_path": self.dockerfile_path,
            "dockerfile_built": self.dockerfile_built,
            "tests_ran": self.tests_ran,
            "wall_seconds": round(self.wall_seconds, 3),
            "failure_category": self.failure_category,
        }


@dataclass
class AggregateReport:
    n: int
    dgsr: float | None
    ebsr: float | None
    time_histogram: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "dgsr": self.dgsr,
            "ebsr": self.ebsr,
            "time_histogram": self.time_histogram,
        }


def _bucket_label(seconds: float) -> str:
    bucket = int(seconds // HISTOGRAM_BUCKET_SECONDS)
    low = bucket * HISTOGRAM_BUCKET_SECONDS // 60
    return f"{low}-{low + HISTOGRAM_BUCKET_SECONDS // 60}min"


def score(reports: list[BuildReport]) -> AggregateReport:
    """DGSR/EBSR fractions plus a ten-minute wall-time histogram."""
    n = len(reports)
    if n == 0:
        return AggregateReport(n=0, dgsr=None, ebsr=None)
    built = sum(1 for r in reports if r.dockerfile_built)
    ran = sum(1 for r in reports if r.tests_ran)
    histogram: dict[str, int] = {}
    for report in sorted(reports, key=lambda r: r.wall_seconds):
        label = _bucket_label(report.wall_seconds)
        histogram[label] = histogram.get(label, 0) + 1
    return AggregateReport(n=n, dgsr=built / n, ebsr=ran / n, time_histogram=histogram)


# -- Dockerfile verification ---------------------------------------------------

_ENV_PAYLOAD_RE = re.compile(r'^([A-Za-z_][A-Za-z0-9_]*)="(.*)"$', re.DOTALL)


def _unescape_env(value: str) -> str:
    return value.replace('\\"', '"').replace("\\\\", "\\")


def replay_statements_sim(
    statements: list[tuple[str, str]],
    asset_reader,
    sim_config: SimConfig,
) -> tuple[bool, SimSandbox | None]:
    """Execute rendered statements on a fresh simulated environment.

    ``asset_reader(relpath)`` returns file content, or a {relpath: content}
    mapping for directory sources. Returns (built_ok, final_sandbox).
    """
    if not statements or statements[0][0] != "FROM":
        return False, None
    sandbox = SimSandbox(BaseImage.from_name(statements[0][1]), config=sim_config)
    for keyword, payload in statements[1:]:
        if keyword == "FROM":
            sandbox.reset_with_base_image(BaseImage.from_name(payload))
        elif keyword == "ENV":
            m = _ENV_PAYLOAD_RE.match(payload)
            if not m:
                return False, sandbox
            sandbox.state.env[m.group(1)] = _unescape_env(m.group(2))
        elif keyword == "COPY":
            try:
                src, dest = payload.split()
            except ValueError:
                return False, sandbox
            content = asset_reader(src)
            if content is None:
                return False, sandbox
            if isinstance(content, dict):
                for rel, body in sorted(content.items()):
                    sandbox.put_file(f"{dest.rstrip('/')}/{rel}", body)
            else:
                sandbox.put_file(dest, content)
        elif keyword == "RUN":
            result = sandbox.exec(payload)
            if result.return_code != 0:
                return False, sandbox
    return True, sandbox


def directory_asset_reader(base: Path):
    def read(relpath: str):
        path = base / relpath
        if path.is_file():
            return path.read_text(encoding="utf-8")
        if path.is_dir():
            return {
                str(child.relative_to(path)): child.read_text(encoding="utf-8")
                for child in sorted(path.rglob("*"))
                if child.is_file()
            }
        return None

    return read


def _sim_tests_run(sandbox: SimSandbox) -> bool:
    session = agent_loop.BuildSession(sandbox, repo="replay")
    status, _, _ = session.run_tests()
    return status == "verified"


def verify_dockerfile(
    dockerfile_dir: str | Path,
    backend: str,
    *,
    sim_config: SimConfig | None = None,
    timeout: float | None = None,
) -> tuple[bool, bool]:
    """(dockerfile_built, tests_ran) for an emitted Dockerfile directory."""
    out = Path(dockerfile_dir)
    dockerfile = out / "Dockerfile"
    if not dockerfile.is_file():
        raise EvalError(f"no Dockerfile in {out}")

    if backend == "sim":
        try:
            statements = df.parse_rendered(dockerfile.read_text(encoding="utf-8"))
        except df.SynthesisError:
            return False, False
        built, sandbox = replay_statements_sim(
            statements, directory_asset_reader(out), sim_config or SimConfig()
        )
        if not built or sandbox is None:
            return False, False
        return True, _sim_tests_run(sandbox)

    if backend in ("docker", "container"):
        import subprocess
        import uuid

        from .sandbox.docker import DockerSandbox

        tag = f"envforge-verify:{uuid.uuid4().hex[:12]}"
        build = subprocess.run(
            ["docker", "build", "-t", tag, str(out)],
            capture_output=True,
            text=True,
            timeout=timeout or 1800,
        )
        if build.returncode != 0:
            return False, False
        sandbox = DockerSandbox(BaseImage.from_name(tag))
        try:
            session = agent_loop.BuildSession(sandbox, repo="replay", command_timeout=timeout)
            status, _, _ = session.run_tests()
            return True, status == "verified"
        finally:
            sandbox.close()
            subprocess.run(["docker", "rmi", "-f", tag], capture_output=True)

    raise EvalError(f"unknown backend {backend!r}")


# -- per-entry pipeline ------------------------------------------------------------

def load_fixture_config(source_dir: Path) -> SimConfig:
    """Sim config for a fixture: sim.json plus the fixture tree as repo files.

    Caches and binary files are skipped; the simulation models text files.
    """
    config = SimConfig()
    config_path = source_dir / _FIXTURE_CONFIG_NAME
    if config_path.is_file():
        config = SimConfig.from_json(config_path.read_text(encoding="utf-8"))
    for child in sorted(source_dir.rglob("*")):
        if not child.is_file() or child.name in (_FIXTURE_CONFIG_NAME, _FIXTURE_ACTIONS_NAME):
            continue
        rel = str(child.relative_to(source_dir))
        if "__pycache__" in rel or rel.endswith(".pyc"):
            continue
        try:
            content = child.read_text(encoding="utf-8")
        except UnicodeDecodeError:
            continue
        config.repo_files.setdefault(rel, content)
    return config


def _resolve_policy(entry: BenchEntry, policy_spec: str | None) -> Policy:
    if policy_spec:
        return load_policy(policy_spec)
    if entry.is_local:
        actions = Path(entry.source) / _FIXTURE_ACTIONS_NAME
        if actions.is_file():
            return ScriptedPolicy.from_file(actions)
    raise EvalError(
        f"no policy for {entry.full_name}: pass --policy or add {_FIXTURE_ACTIONS_NAME}"
    )


_TIMEOUT_RC = 124

_HARDWARE_RE = re.compile(r"no space left|out of memory|oom|killed|cuda", re.IGNORECASE)
_TOKEN_RE = re.compile(
    r"401|403|authentication|unauthorized|credential|access token", re.IGNORECASE
)


def classify_failure(trace: Trace | None, error_text: str = "") -> str:
    """Map a failed attempt onto the failure taxonomy, 'other' as fallback."""
    haystack = error_text
    if trace is not None:
        for record in trace.records:
            haystack += record.stderr_excerpt + "\n"
            if record.return_code == _TIMEOUT_RC:
                if record.command.argv0 in ("runtest", "poetryruntest"):
                    return "runtest-timeout"
                if record.classification == "install":
                    return "install-timeout"
        runs = [
            r for r in trace.records if r.command.argv0 in ("runtest", "poetryruntest")
        ]
        if runs and runs[-1].return_code == _TIMEOUT_RC:
            return "runtest-timeout"
        if runs and runs[-1].return_code not in (0, 1):
            return "repo-defect"
    if _TOKEN_RE.search(haystack):
        return "missing-token"
    if _HARDWARE_RE.search(haystack):
        return "hardware"
    return "other"


def run_entry(
    entry: BenchEntry,
    *,
    backend: str,
    budget: agent_loop.BuildBudget,
    outdir: Path,
    policy_spec: str | None = None,
    command_timeout: float | None = None,
) -> BuildReport:
    """Build, synthesize and verify one bench entry."""
    started = time.monotonic()
    report = BuildReport(entry=entry)
    entry_dir = outdir / entry.full_name.replace("/", "__")
    entry_dir.mkdir(parents=True, exist_ok=True)
    trace: Trace | None = None
    error_text = ""
    sandbox: Sandbox | None = None

    try:
        sim_config = None
        if backend == "sim":
            sim_config = (
                load_fixture_config(Path(entry.source)) if entry.is_local else SimConfig()
            )
        policy = _resolve_policy(entry, policy_spec)
        sandbox = create_sandbox(backend, DEFAULT_BASE_IMAGE, sim_config=sim_config)
        repo_ref = entry.source if entry.is_local else entry.full_name
        trace = agent_loop.run_build(
            repo_ref,
            entry.sha,
            policy,
            budget,
            sandbox,
            command_timeout=command_timeout,
        )
        trace_path = entry_dir / f"{entry.full_name.replace('/', '__')}.trace.jsonl"
        trace_path.write_bytes(serialize_trace(trace))
        report.trace_path = str(trace_path)

        if trace.outcome == "verified":
            copy_repo = entry.is_local and backend in ("docker", "container")
            program = df.synthesize(
                trace, copy_repo_from=entry.source if copy_repo else None
            )
            dockerfile_path = df.write_output(program, entry_dir)
            report.dockerfile_path = str(dockerfile_path)
            built, ran = verify_dockerfile(
                entry_dir, backend, sim_config=sim_config, timeout=command_timeout
            )
            report.dockerfile_built = built
            report.tests_ran = ran
    except Exception as exc:  # noqa: BLE001 - a bench entry must never kill the run
        error_text = str(exc)
    finally:
        if sandbox is not None:
            sandbox.close()

    report.wall_seconds = time.monotonic() - started
    if not report.tests_ran:
        report.failure_category = classify_failure(trace, error_text)
    report.validate()
    return report


def run_bench(
    entries: list[BenchEntry],
    *,
    backend: str,
    budget: agent_loop.BuildBudget,
    outdir: Path,
    jobs: int = 1,
    policy_spec: str | None = None,
    command_timeout: float | None = None,
) -> tuple[list[BuildReport], AggregateReport]:
    """Run every entry (optionally in parallel) and aggregate the reports."""
    outdir.mkdir(parents=True, exist_ok=True)

    def one(entry: BenchEntry) -> BuildReport:
        return run_entry(
            entry,
            backend=backend,
            budget=budget,
            outdir=outdir,
            policy_spec=policy_spec,
            command_timeout=command_timeout,
        )

    if jobs <= 1:
        reports = [one(entry) for entry in entries]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(one, entries))
    return reports, score(reports)


def load_bench_file(path: str | Path) -> list[BenchEntry]:
    entries = []
    for line_no, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            entries.append(BenchEntry.from_json(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise EvalError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
    return entries


def report_to_json(reports: list[BuildReport], aggregate: AggregateReport) -> dict:
    return {
        "entries": [r.to_json() for r in reports],
        "aggregate": aggregate.to_json(),
    }
