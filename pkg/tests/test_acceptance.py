"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Stated runtime bounds are asserted inside the tests.
"""

from __future__ import annotations

import random
import time
from pathlib import Path

import pytest

from conftest import (
    FIXTURES,
    comparable,
    make_sim_config,
    replay_trace_program,
    run_random_session,
    worked_example_trace,
)
from envforge.agent.loop import BuildBudget, run_build
from envforge.agent.policy import ScriptedPolicy
from envforge.classify import classify, safe_list
from envforge.depmgr import (
    ConflictsPendingError,
    DependencyLists,
    constraint_conflicts,
    constraint_satisfies,
    download,
)
from envforge.dockerfile import render, synthesize
from envforge.evalharness import BenchEntry, BuildReport, run_entry, score
from envforge.sandbox import docker_available
from envforge.sandbox.sim import SimSandbox
from envforge.trace import BaseImage

GOLDEN = Path(__file__).parent / "golden" / "worked_example.Dockerfile"


def _pass(name: str, detail: str = "") -> None:
    suffix = f" ({detail})" if detail else ""
    print(f"\nACCEPTANCE PASS: {name}{suffix}")


def test_golden_synthesis_byte_exact():
    started = time.monotonic()
    trace = worked_example_trace()
    program = synthesize(trace)
    rendered = render(program)
    elapsed = time.monotonic() - started

    lines = rendered.decode().splitlines()
    assert lines[0] == "FROM python:3.11"                      # (a) post-change image
    assert not any("cat README.md" in l for l in lines)        # (b) safe omitted
    assert not any("cupy" in l for l in lines)                 # (b) rolled back omitted
    copy_idx = [i for i, l in enumerate(lines) if l.startswith("COPY")]
    edit_idx = [i for i, l in enumerate(lines) if "code_edit.py" in l and l.startswith("RUN")]
    assert copy_idx and edit_idx and max(copy_idx) < min(edit_idx)  # (c)
    assert sum(l.startswith("ENV ") for l in lines) == 1       # (d) one ENV
    assert "RUN pip install 'B==1.5.1'" in lines               # (e) pinned

    assert rendered == GOLDEN.read_bytes(), "render deviates from the golden file"
    assert elapsed < 1.0
    _pass("golden synthesis", f"{len(lines)} statements in {elapsed * 1000:.0f} ms")


def test_replay_equivalence_300_randomized_traces():
    started = time.monotonic()
    rng = random.Random(20240613)
    divergences = 0
    total = 300
    for _ in range(total):
        trace, final_state, config, _ = run_random_session(rng)
        assert trace.outcome == "verified"
        built, replayed = replay_trace_program(trace, config)
        if not built or comparable(replayed) != comparable(final_state):
            divergences += 1
    elapsed = time.monotonic() - started
    assert divergences == 0
    assert elapsed < 60.0
    _pass(
        "replay equivalence",
        f"{total} randomized builds, 0 divergences, {elapsed:.1f} s",
    )


def test_rollback_ablation_pollution_scenario():
    actions = ["pip install cupy", "pip install pkgok0", "runtest"]

    def build(rollback_enabled: bool):
        config = make_sim_config()
        sandbox = SimSandbox(BaseImage.from_name("python:3.10"), config=config)
        trace = run_build(
            "acme/demo",
            "",
            ScriptedPolicy(list(actions)),
            BuildBudget(max_turns=10),
            sandbox,
            rollback_enabled=rollback_enabled,
        )
        return trace, sandbox.observable_state(include_cwd=False), config

    # With the guard disabled, the failed install leaves its side packages
    # behind; the synthesized Dockerfile cannot reproduce that state.
    trace, final_state, config = build(rollback_enabled=False)
    assert trace.outcome == "verified"
    polluted = final_state["installed"]["pip"]
    assert "fastrlock" in polluted and "numpy" in polluted
    built, replayed = replay_trace_program(trace, config)
    diverged = (not built) or comparable(replayed) != comparable(final_state)
    assert diverged, "disabling rollback must produce a replay divergence"

    # With the guard on, the same transcript replays exactly.
    trace, final_state, config = build(rollback_enabled=True)
    built, replayed = replay_trace_program(trace, config)
    assert built and comparable(replayed) == comparable(final_state)
    _pass(
        "rollback ablation",
        "pollution scenario diverges without rollback; replays exactly with it",
    )


def test_safe_command_conformance():
    commands = sorted(safe_list())
    assert len(commands) == 44  # the allowlist as enumerated
    assertions = 0
    for name in commands:
        assert classify(f"{name} sample-arg").kind == "safe"
        assertions += 1
        redirected = classify(f"{name} sample-arg > /tmp/out")
        appended = classify(f"{name} sample-arg >> /tmp/out")
        assert redirected.kind == "mutating" and appended.kind == "mutating"
        assertions += 1
    _pass(
        "safe-command conformance",
        f"{len(commands)} commands x (safe + redirect flip) = {assertions} assertions",
    )


def _oracle_checks(constraint: str) -> list[tuple[str, tuple[int, ...]]]:
    checks: list[tuple[str, tuple[int, ...]]] = []
    for clause in filter(None, (c.strip() for c in constraint.split(","))):
        for op in ("==", "!=", ">=", "<=", "~=", ">", "<"):
            if clause.startswith(op):
                bound = tuple(int(p) for p in clause[len(op):].strip().split("."))
                break
        if op == "~=":
            checks.append((">=", bound))
            checks.append(("<", bound[:-1] + (bound[-1] + 1,)))
        else:
            checks.append((op, bound))
    return checks


def _oracle_holds(v: tuple[int, ...], checks) -> bool:
    def pad(t, width):
        return t + (0,) * (width - len(t))

    for op, bound in checks:
        width = max(len(v), len(bound))
        a, b = pad(v, width), pad(bound, width)
        result = {
            "==": a == b, "!=": a != b, ">=": a >= b,
            "<=": a <= b, ">": a > b, "<": a < b,
        }[op]
        if not result:
            return False
    return True


def _oracle_satisfies(version: str, constraint: str) -> bool:
    return _oracle_holds(
        tuple(int(p) for p in version.split(".")), _oracle_checks(constraint)
    )


def _oracle_conflicts(x: str, y: str) -> bool:
    checks_x, checks_y = _oracle_checks(x), _oracle_checks(y)
    for major in range(21):
        for minor in range(11):
            for patch in range(11):
                v = (major, minor, patch)
                if _oracle_holds(v, checks_x) and _oracle_holds(v, checks_y):
                    return False
    return True


def _random_constraint(rng: random.Random) -> str:
    clauses = []
    for _ in range(rng.randint(1, 2)):
        op = rng.choice(("==", "!=", ">=", "<=", ">", "<", "~="))
        if op == "~=":
            version = f"{rng.randint(0, 20)}.{rng.randint(0, 10)}"
        else:
            parts = [str(rng.randint(0, 20))] + [
                str(rng.randint(0, 10)) for _ in range(rng.randint(0, 2))
            ]
            version = ".".join(parts)
        clauses.append(op + version)
    return ",".join(clauses)


def test_constraint_oracle_agreement():
    started = time.monotonic()
    rng = random.Random(8675309)
    pairs = 500
    for _ in range(pairs):
        a, b = _random_constraint(rng), _random_constraint(rng)
        assert constraint_conflicts(a, b) == _oracle_conflicts(a, b), (a, b)
        version = f"{rng.randint(0, 20)}.{rng.randint(0, 10)}.{rng.randint(0, 10)}"
        assert constraint_satisfies(version, a) == _oracle_satisfies(version, a)
    elapsed = time.monotonic() - started
    assert elapsed < 10.0
    _pass("constraint oracle", f"{pairs} pairs, 100% agreement, {elapsed:.1f} s")


def test_dependency_protocol_conformance():
    sim = SimSandbox(BaseImage.from_name("python:3.10"), config=make_sim_config())
    lists = DependencyLists()
    lists.add("numpy", ">=1.21", "pip")
    lists.add("numpy", "<1.20", "pip")
    with pytest.raises(ConflictsPendingError):
        download(lists, sim, sim.next_turn)

    lists.solve_first_conflict(None)  # keep the original constraint
    assert [i.constraint.text() for i in lists.waiting] == [">=1.21"]
    assert not lists.conflicts

    lists.clear_waiting()
    content = "pkgok0\n# tooling\npkgok1>=1.0\n\npkgok2\n"
    non_comment_lines = 3
    assert lists.add_requirements(content) == non_comment_lines
    _pass("dependency protocol", "refusal, keep-original, addfile counting")


def test_metrics_arithmetic():
    def report(built: bool, ran: bool, wall: float = 120.0) -> BuildReport:
        return BuildReport(
            entry=BenchEntry("acme/demo"),
            dockerfile_built=built,
            tests_ran=ran,
            wall_seconds=wall,
            failure_category=None if ran else "other",
        )

    scripted = [report(True, True), report(True, True), report(True, False), report(False, False)]
    aggregate = score(scripted)
    assert aggregate.dgsr == 0.75
    assert aggregate.ebsr == 0.50

    rng = random.Random(99)
    for _ in range(100):
        batch = []
        for _ in range(rng.randint(1, 20)):
            built = rng.random() < 0.6
            ran = built and rng.random() < 0.7
            batch.append(report(built, ran, rng.uniform(0, 5000)))
        agg = score(batch)
        assert 0.0 <= agg.ebsr <= agg.dgsr <= 1.0
    _pass("metrics arithmetic", "dgsr 0.75 / ebsr 0.50 + 100 randomized report sets")


@pytest.mark.skipif(not docker_available(), reason="container runtime not available")
def test_end_to_end_container_smoke(tmp_path):
    started = time.monotonic()
    entry = BenchEntry("fixtures/tiny_repo", "", str(FIXTURES / "tiny_repo"))
    report = run_entry(
        entry,
        backend="docker",
        budget=BuildBudget(max_turns=20, max_wall_seconds=240),
        outdir=tmp_path,
        command_timeout=180,
    )
    elapsed = time.monotonic() - started
    assert report.dockerfile_built and report.tests_ran
    assert elapsed < 300
    _pass("container smoke", f"fixture built and verified in {elapsed:.0f} s")
