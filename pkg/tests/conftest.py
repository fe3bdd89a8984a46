"""Shared fixtures: scripted registries, random generators, replay oracles."""

from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from envforge.agent.loop import BuildBudget, run_build
from envforge.agent.policy import ScriptedPolicy
from envforge.dockerfile import parse_rendered, render, synthesize
from envforge.evalharness import replay_statements_sim
from envforge.sandbox.sim import RegistryEntry, SimConfig, SimRegistry, SimSandbox
from envforge.trace import (
    BaseImage,
    Command,
    CommandRecord,
    Trace,
)

FIXTURES = Path(__file__).parent / "fixtures"

DEFAULT_REPO_FILES = {
    "README.md": "demo repository\n",
    "requirements.txt": "pkgok0\npkgok1>=1.0\n",
    "src/app.py": "import pkgok0\n\nVALUE = 1\n",
    "tests/test_app.py": "def test_value():\n    assert 1 == 1\n",
}


def load_pollution_catalog() -> dict:
    return json.loads((FIXTURES / "pollution_catalog.json").read_text())


def build_registry(extra: dict | None = None) -> SimRegistry:
    entries: dict[str, RegistryEntry] = {}
    for i in range(10):
        entries[f"pkgok{i}"] = RegistryEntry("ok", f"{i + 1}.{i}.0")
    for i in range(3):
        entries[f"pkgbad{i}"] = RegistryEntry("fail_clean")
    entries["sysdep"] = RegistryEntry("ok", "2.4")
    entries["pytest"] = RegistryEntry("ok", "8.0.0")
    for name, spec in load_pollution_catalog().items():
        entries[name] = RegistryEntry(
            spec["behavior"], spec.get("version"), tuple(spec.get("side_installs", []))
        )
    for name, spec in (extra or {}).items():
        entries[name] = spec
    return SimRegistry(entries)


def make_sim_config(
    test_profile: str = "runs_pass", repo_files: dict | None = None
) -> SimConfig:
    return SimConfig(
        registry=build_registry(),
        test_profile=test_profile,
        repo_files=dict(DEFAULT_REPO_FILES if repo_files is None else repo_files),
    )


def make_sim(
    image: str = "python:3.10",
    test_profile: str = "runs_pass",
    repo_files: dict | None = None,
) -> SimSandbox:
    return SimSandbox(
        BaseImage.from_name(image),
        config=make_sim_config(test_profile, repo_files),
    )


@pytest.fixture
def sim() -> SimSandbox:
    return make_sim()


def comparable(state: dict) -> dict:
    out = dict(state)
    out.pop("cwd", None)
    return out


# -- randomized build sessions (the replay-equivalence workload) ----------------

POLLUTING_PACKAGES = sorted(load_pollution_catalog())
EXPORT_KEYS = ("PYTHONPATH", "APP_MODE", "CFG_DIR")


def random_action_list(rng: random.Random) -> list:
    """A plausible build transcript: ~10% failures, 30% of those polluting."""
    actions: list = []
    n_body = rng.randint(6, 22)
    n_changes = rng.choice((0, 0, 1, 1, 2))
    n_exports = rng.randint(0, 3)
    change_slots = sorted(rng.sample(range(n_body), n_changes)) if n_changes else []
    made_dirs: list[str] = []
    counter = 0

    for slot in range(n_body):
        counter += 1
        if slot in change_slots:
            if rng.random() < 0.25:
                actions.append("clear_configuration")
            else:
                actions.append(f"change_python_version 3.1{rng.randint(1, 2)}")
            continue
        roll = rng.random()
        if roll < 0.10:  # scripted failure
            if rng.random() < 0.30:  # polluting flavor
                if rng.random() < 0.5:
                    actions.append(f"pip install {rng.choice(POLLUTING_PACKAGES)}")
                else:
                    actions.append(f"rm /repo/README.md /nonexistent{counter}")
            else:
                actions.append(
                    rng.choice(
                        [
                            "false",
                            f"rm /missing{counter}.txt",
                            f"pip install pkgbad{rng.randint(0, 2)}",
                            f"pip install nosuchpkg{counter}",
                        ]
                    )
                )
            continue
        kind = rng.choice(
            (
                "safe", "safe", "mkdir", "write", "install", "install",
                "wl", "apt", "edit", "pipreqs", "copy",
            )
        )
        if kind == "safe":
            actions.append(
                rng.choice(
                    ("ls", "pwd", "cat README.md", "echo checking state", "env")
                )
            )
        elif kind == "mkdir":
            path = f"/data/d{counter}"
            made_dirs.append(path)
            actions.append(f"mkdir -p {path}")
        elif kind == "write":
            if made_dirs and rng.random() < 0.5:
                actions.append(f"echo payload{counter} > {rng.choice(made_dirs)}/out.txt")
            else:
                actions.append(f"echo note{counter} > /repo/note{counter}.txt")
        elif kind == "install":
            i = rng.randint(0, 9)
            spec = f"pkgok{i}" if rng.random() < 0.5 else f"pkgok{i}>={i + 1}.0"
            actions.append(f"pip install '{spec}'")
        elif kind == "wl":
            i = rng.randint(0, 9)
            actions.append(f"waitinglist add -p pkgok{i} -t pip")
            actions.append("download")
        elif kind == "apt":
            actions.append("apt-get install -y sysdep")
        elif kind == "edit":
            actions.append(
                {
                    "verb": "edit_file",
                    "args": {
                        "path": f"/repo/src/mod{counter}.py",
                        "content": f"GENERATED = {counter}\n",
                    },
                }
            )
        elif kind == "pipreqs":
            actions.append("runpipreqs")
        elif kind == "copy":
            actions.append(f"cp /repo/requirements.txt /repo/req_copy{counter}.txt")
    if n_exports:
        keys = [rng.choice(EXPORT_KEYS) for _ in range(n_exports)]
        for i, key in enumerate(keys):
            position = rng.randint(0, len(actions))
            actions.insert(position, f"export {key}=/value/{i}")
    actions.append("poetryruntest" if rng.random() < 0.2 else "runtest")
    return actions


def run_random_session(
    rng: random.Random, *, rollback_enabled: bool = True
) -> tuple[Trace, dict, SimConfig, SimSandbox]:
    """Drive a full scripted build; returns (trace, final_state, config, sandbox)."""
    config = make_sim_config()
    sandbox = SimSandbox(BaseImage.from_name("python:3.10"), config=config)
    actions = random_action_list(rng)
    policy = ScriptedPolicy(actions)
    budget = BuildBudget(max_turns=len(actions) + 10, max_wall_seconds=600)
    trace = run_build(
        "acme/demo",
        "",
        policy,
        budget,
        sandbox,
        rollback_enabled=rollback_enabled,
    )
    return trace, sandbox.observable_state(include_cwd=False), config, sandbox


def program_asset_reader(program):
    def read(relpath: str):
        if relpath.startswith("assets/"):
            return program.assets.get(relpath[len("assets/") :])
        return None

    return read


def replay_trace_program(trace: Trace, config: SimConfig) -> tuple[bool, dict | None]:
    """Synthesize, render, and sim-replay a trace; returns (built, state)."""
    program = synthesize(trace)
    statements = parse_rendered(render(program).decode("utf-8"))
    built, sandbox = replay_statements_sim(
        statements, program_asset_reader(program), config
    )
    if not built or sandbox is None:
        return False, None
    return True, sandbox.observable_state(include_cwd=False)


def write_fixture_repo(
    target: Path,
    *,
    test_profile: str = "runs_pass",
    actions: list | None = None,
    registry: dict | None = None,
) -> Path:
    """Materialize a small fixture repository directory for eval runs."""
    target.mkdir(parents=True, exist_ok=True)
    (target / "src").mkdir(exist_ok=True)
    (target / "README.md").write_text("fixture repo\n")
    (target / "requirements.txt").write_text("pkga\n")
    (target / "src" / "app.py").write_text("import pkga\n")
    (target / "tests_dir_placeholder.txt").write_text("x\n")
    sim = {
        "registry": registry
        or {
            "pkga": {"behavior": "ok", "version": "1.2.3"},
            "pytest": {"behavior": "ok", "version": "8.0.0"},
        },
        "test_profile": test_profile,
    }
    (target / "sim.json").write_text(json.dumps(sim, indent=2))
    default_actions = [
        "pip install pytest",
        "waitinglist addfile /repo/requirements.txt",
        "download",
        "runtest",
    ]
    (target / "actions.json").write_text(json.dumps(actions or default_actions))
    return target


def worked_example_trace() -> Trace:
    """The canonical mixed-history build: one record of every interesting kind.

    Safe observation; a successful command; a failed rolled-back polluting
    install; a base-image change that supersedes everything before it; a code
    edit; a range-constrained install resolved to an exact version; an
    export; the final test run.
    """
    edit_script_path = "/opt/envforge/code_edit.py"
    patch_path = "/opt/envforge/patch_6.diff"
    records = [
        CommandRecord(
            turn=1,
            command=Command.from_raw("cat README.md"),
            cwd="/repo",
            return_code=0,
            classification="safe",
        ),
        CommandRecord(
            turn=2,
            command=Command.from_raw("mkdir /data"),
            cwd="/",
            return_code=0,
            classification="mutating",
            snapshot_before="snap-2",
        ),
        CommandRecord(
            turn=3,
            command=Command.from_raw("pip install cupy"),
            cwd="/",
            return_code=1,
            classification="install",
            stderr_excerpt="ERROR: Failed building wheel for cupy\n",
            snapshot_before="snap-3",
            rolled_back=True,
        ),
        CommandRecord(
            turn=4,
            command=Command.from_raw("change_python_version 3.11"),
            cwd="/",
            return_code=0,
            classification="base-image-change",
        ),
        CommandRecord(
            turn=5,
            command=Command.from_raw("git clone https://github.com/acme/demo.git /repo"),
            cwd="/",
            return_code=0,
            classification="mutating",
            snapshot_before="snap-5",
        ),
        CommandRecord(
            turn=6,
            command=Command.from_raw(
                f"python {edit_script_path} replace {patch_path} /repo/src/app.py"
            ),
            cwd="/repo",
            return_code=0,
            classification="code-edit",
            snapshot_before="snap-6",
            assets=(
                (edit_script_path, "#!/usr/bin/env python3\n# apply a recorded edit\n"),
                (patch_path, 'print("fixed quoting")\n'),
            ),
        ),
        CommandRecord(
            turn=7,
            command=Command.from_raw("pip install 'B>=1.0,<2.0'"),
            cwd="/",
            return_code=0,
            classification="install",
            snapshot_before="snap-7",
            installed=(("pip", "B", "1.5.1"),),
        ),
        CommandRecord(
            turn=8,
            command=Command.from_raw("export PYTHONPATH=/repo/src"),
            cwd="/repo",
            return_code=0,
            classification="export",
            snapshot_before="snap-8",
            env_delta=(("PYTHONPATH", "/repo/src"),),
        ),
        CommandRecord(
            turn=9,
            command=Command.from_raw("runtest"),
            cwd="/repo",
            return_code=0,
            classification="safe",
        ),
    ]
    return Trace(
        repo_full_name="acme/demo",
        sha="deadbeef",
        initial_base_image=BaseImage.from_name("python:3.10"),
        records=records,
        final_base_image=BaseImage.from_name("python:3.11"),
        outcome="verified",
    )


# -- randomized plain traces (serialization round-trip workload) -------------------

_WORDS = ("cat", "pip", "echo", "make", "tar", "grep", "install", "cfg")


def random_trace(rng: random.Random) -> Trace:
    """A structurally valid trace with varied field shapes (not executable)."""
    records = []
    turn = 0
    changed = False
    for _ in range(rng.randint(0, 12)):
        turn += rng.randint(1, 3)
        kind = rng.choice(
            ("safe", "mutating", "mutating", "install", "export", "code-edit", "base-image-change")
        )
        raw = " ".join(rng.choice(_WORDS) for _ in range(rng.randint(1, 4)))
        if kind == "export":
            raw = "export K=V"
        if kind == "base-image-change":
            raw = "change_python_version 3.11"
            changed = True
        failed = kind != "safe" and rng.random() < 0.3
        rolled = failed and rng.random() < 0.8
        records.append(
            CommandRecord(
                turn=turn,
                command=Command.from_raw(raw),
                cwd=rng.choice(("/", "/repo", "/repo/sub dir")),
                return_code=rng.choice((1, 2, 127)) if failed else 0,
                classification=kind,
                stdout_excerpt=rng.choice(("", "ok\n", "unicode ✓ output\n", "a" * 50)),
                stderr_excerpt=rng.choice(("", "warn\n", 'quote " and \\ noise')),
                snapshot_before=None if kind == "safe" else f"snap-{turn}",
                rolled_back=rolled,
                env_delta=(("K", "V"),) if kind == "export" else (),
                installed=(("pip", "pkg", "1.0"),) if kind == "install" and not failed else (),
                assets=(("/opt/envforge/patch_1.diff", "content\n"),)
                if kind == "code-edit" and rng.random() < 0.5
                else (),
                thought="because" if rng.random() < 0.3 else None,
            )
        )
    outcome = rng.choice(("verified", "budget_exhausted", "aborted"))
    if outcome == "verified":
        turn += 1
        records.append(
            CommandRecord(
                turn=turn,
                command=Command.from_raw("runtest"),
                cwd="/repo",
                return_code=rng.choice((0, 1)),
                classification="safe",
            )
        )
    final = BaseImage.from_name("python:3.11") if changed else BaseImage.from_name("python:3.10")
    return Trace(
        repo_full_name="acme/demo",
        sha="abc1234",
        initial_base_image=BaseImage.from_name("python:3.10"),
        records=records,
        final_base_image=final,
        outcome=outcome,
    )
