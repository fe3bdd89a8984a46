"""Command line interface: build, synthesize, eval, classify, replay."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import dockerfile as df
from .agent.loop import BuildBudget, run_build
from .agent.policy import PolicyError, load_policy
from .classify import Classification, UnparsableLineError, UnsupportedFlagError, classify
from .evalharness import (
    BenchEntry,
    load_bench_file,
    load_fixture_config,
    run_bench,
    verify_dockerfile,
)
from .figures import write_report_files
from .sandbox import SandboxError, SimConfig, create_sandbox
from .trace import DEFAULT_BASE_IMAGE, TraceError, parse_trace, serialize_trace

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _classification_json(cls: Classification) -> dict:
    out = asdict(cls)
    out["installs"] = [
        {k: v for k, v in spec.items() if v not in (None, "")}
        for spec in out["installs"]
    ]
    return out


def _load_sim_config(path: str | None) -> SimConfig | None:
    if path is None:
        return None
    return SimConfig.from_json(Path(path).read_text(encoding="utf-8"))


def _budget_from_args(args: argparse.Namespace) -> BuildBudget:
    return BuildBudget(
        max_turns=args.budget_turns,
        max_wall_seconds=args.budget_seconds,
        max_base_image_changes=args.budget_image_changes,
    )


def _add_budget_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--budget-turns", type=int, default=100)
    parser.add_argument("--budget-seconds", type=int, default=7200)
    parser.add_argument("--budget-image-changes", type=int, default=5)


def cmd_classify(args: argparse.Namespace) -> int:
    try:
        cls = classify(args.line)
    except (UnparsableLineError, UnsupportedFlagError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps(_classification_json(cls), indent=2))
    return EXIT_OK


def cmd_build(args: argparse.Namespace) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        sim_config = _load_sim_config(args.sim_config)
        if args.backend == "sim" and sim_config is None and Path(args.repo).is_dir():
            sim_config = load_fixture_config(Path(args.repo))
        policy = load_policy(args.policy)
        sandbox = create_sandbox(args.backend, DEFAULT_BASE_IMAGE, sim_config=sim_config)
    except (PolicyError, SandboxError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    try:
        trace = run_build(
            args.repo,
            args.sha,
            policy,
            _budget_from_args(args),
            sandbox,
            command_timeout=args.command_timeout,
        )
    finally:
        sandbox.close()

    stem = args.repo.rstrip("/").rsplit("/", 1)[-1] or "build"
    trace_path = outdir / f"{stem}.trace.jsonl"
    trace_path.write_bytes(serialize_trace(trace))
    print(f"trace: {trace_path} (outcome: {trace.outcome})")

    if trace.outcome != "verified":
        print("build did not verify; no Dockerfile synthesized", file=sys.stderr)
        return EXIT_FAILURE
    copy_from = args.repo if args.copy_repo else None
    program = df.synthesize(trace, copy_repo_from=copy_from)
    dockerfile_path = df.write_output(program, outdir)
    print(f"dockerfile: {dockerfile_path}")
    return EXIT_OK


def cmd_synthesize(args: argparse.Namespace) -> int:
    try:
        trace = parse_trace(Path(args.trace).read_bytes())
    except (OSError, TraceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    copy_from = None
    if args.copy_repo:
        copy_from = args.copy_repo_dir or df.repo_source(trace)
        if copy_from is None or not Path(copy_from).is_dir():
            print(f"error: no local repository to copy ({copy_from})", file=sys.stderr)
            return EXIT_FAILURE
    try:
        program = df.synthesize(trace, copy_repo_from=copy_from)
    except df.SynthesisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    dockerfile_path = df.write_output(program, Path(args.out))
    print(f"dockerfile: {dockerfile_path}")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        sim_config = _load_sim_config(args.sim_config)
        if sim_config is None and args.fixture:
            sim_config = load_fixture_config(Path(args.fixture))
        built, ran = verify_dockerfile(
            args.dockerfile_dir,
            args.backend,
            sim_config=sim_config,
            timeout=args.command_timeout,
        )
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"dockerfile_built: {str(built).lower()}")
    print(f"tests_ran: {str(ran).lower()}")
    return EXIT_OK if built and ran else EXIT_FAILURE


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        entries: list[BenchEntry] = load_bench_file(args.bench)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    outdir = Path(args.workdir)
    reports, aggregate = run_bench(
        entries,
        backend=args.backend,
        budget=_budget_from_args(args),
        outdir=outdir,
        jobs=args.jobs,
        policy_spec=args.policy,
        command_timeout=args.command_timeout,
    )
    out_json = Path(args.out)
    written = write_report_files(reports, aggregate, out_json, figures=not args.no_figures)
    for path in written:
        print(f"wrote {path}")
    dgsr = "n/a" if aggregate.dgsr is None else f"{aggregate.dgsr:.3f}"
    ebsr = "n/a" if aggregate.ebsr is None else f"{aggregate.ebsr:.3f}"
    print(f"n={aggregate.n} dgsr={dgsr} ebsr={ebsr}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="envforge",
        description=(
            "Build executable test environments in a sandbox and compile the "
            "validated command trace into a runnable Dockerfile."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_classify = sub.add_parser("classify", help="classify one shell line as JSON")
    p_classify.add_argument("line")
    p_classify.set_defaults(func=cmd_classify)

    p_build = sub.add_parser("build", help="run the build phase, then synthesize")
    p_build.add_argument("--repo", required=True, help="owner/name or local path")
    p_build.add_argument("--sha", default="")
    p_build.add_argument("--policy", required=True, help="scripted:FILE or llm[:MODEL]")
    p_build.add_argument("--backend", choices=("sim", "docker"), default="sim")
    p_build.add_argument("--sim-config", default=None)
    p_build.add_argument("-o", "--out", default="out")
    p_build.add_argument("--copy-repo", action="store_true")
    p_build.add_argument("--command-timeout", type=float, default=None)
    _add_budget_flags(p_build)
    p_build.set_defaults(func=cmd_build)

    p_synth = sub.add_parser("synthesize", help="compile a trace file to a Dockerfile")
    p_synth.add_argument("trace")
    p_synth.add_argument("-o", "--out", required=True)
    p_synth.add_argument("--copy-repo", action="store_true")
    p_synth.add_argument("--copy-repo-dir", default=None)
    p_synth.set_defaults(func=cmd_synthesize)

    p_replay = sub.add_parser("replay", help="build a Dockerfile and run the tests")
    p_replay.add_argument("dockerfile_dir")
    p_replay.add_argument("--backend", choices=("sim", "docker"), default="sim")
    p_replay.add_argument("--sim-config", default=None)
    p_replay.add_argument("--fixture", default=None, help="fixture dir for sim configs")
    p_replay.add_argument("--command-timeout", type=float, default=None)
    p_replay.set_defaults(func=cmd_replay)

    p_eval = sub.add_parser("eval", help="run a bench file and score the outcomes")
    p_eval.add_argument("bench")
    p_eval.add_argument("--backend", choices=("sim", "docker"), default="sim")
    p_eval.add_argument("--jobs", type=int, default=min(4, os.cpu_count() or 1))
    p_eval.add_argument("--out", default="report.json")
    p_eval.add_argument("--workdir", default="eval-out")
    p_eval.add_argument("--policy", default=None)
    p_eval.add_argument("--no-figures", action="store_true")
    p_eval.add_argument("--command-timeout", type=float, default=None)
    _add_budget_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
