"""Single ``lego`` entrypoint: library validation, composed runs, experience
store maintenance, skill building, benchmark reporting, and pass@k math.

Exit codes: 0 success, 1 validation or benchmark failures present, 2 usage
error, 3 environment error (missing tool or unreadable path).
"""

from __future__ import annotations

import argparse
import json
import shlex
import shutil
import sys
from pathlib import Path

from . import bench, builder, seed_library_path
from .backend import ReplayBackend, SubprocessBackend
from .eda import EdaHarness, ToolConfig
from .orchestrator import ConfigError, ConfigTemplate, SummaryReport, summarize
from .rag import DEFAULT_K, DEFAULT_TAU, KnowledgeUnit, RagStore
from .registry import LoadError, ManifestError, UnknownGroup, load_library, stats
from .skill import WorkflowStep

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_USAGE = 2
EXIT_ENVIRONMENT = 3


def cmd_validate(args) -> int:
    library = Path(args.library_dir)
    if not library.is_dir():
        print(f"error: {library} is not a readable directory", file=sys.stderr)
        return EXIT_ENVIRONMENT
    try:
        registry = load_library(library)
    except LoadError as exc:
        for path, message in exc.failures:
            print(f"{path}: {message}")
        print(f"{len(exc.failures)} file(s) with violations")
        return EXIT_FAILURES
    except ManifestError as exc:
        print(f"manifest: {exc}")
        return EXIT_FAILURES
    steps, groups, skills = stats(registry)
    print(f"{skills} skills, {groups} groups, {steps} steps")
    return EXIT_OK


def _backend_factory(config: ConfigTemplate):
    if config.backend.kind == "replay":
        script = Path(config.backend.script_path)
        if not script.is_file():
            raise FileNotFoundError(f"replay script not found: {script}")
        master = ReplayBackend.from_file(script)
        return lambda: master.fresh()
    command = config.backend.command
    if not command:
        raise ConfigError("subprocess backend requires a command")
    head = shlex.split(command)[0]
    if shutil.which(head) is None:
        raise FileNotFoundError(f"backend command not found: {head}")
    shared = SubprocessBackend()
    return lambda: shared


def cmd_run(args) -> int:
    try:
        config = ConfigTemplate.from_file(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    library = config.library or seed_library_path()
    try:
        registry = load_library(library)
    except (LoadError, ManifestError) as exc:
        print(f"library error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT

    problems_dir = Path(args.problems)
    if not problems_dir.is_dir():
        print(f"error: problems directory not readable: {problems_dir}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    try:
        problems = bench.load_problems(problems_dir)
    except bench.MalformedProblem as exc:
        print(f"problem error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not problems:
        print("no problems found", file=sys.stderr)
        return EXIT_USAGE

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        backend_factory = _backend_factory(config)
    except FileNotFoundError as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    tool_config = ToolConfig()
    if args.tools:
        tool_config = ToolConfig.from_json(json.loads(Path(args.tools).read_text()))
    rag_store = RagStore(Path(args.rag_store)) if args.rag_store else (
        RagStore(out_dir / "rag") if config.rag_enabled else None
    )

    try:
        scheme_result, records, results = bench.run_scheme(
            problems,
            config,
            registry,
            backend_factory,
            harness=EdaHarness(tool_config),
            rag_store=rag_store,
            n_runs=args.runs,
            jobs=args.jobs,
            workspace_root=out_dir / "workspaces",
        )
    except UnknownGroup as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ManifestError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    bench.write_records_jsonl(records, out_dir / "results.jsonl")
    first_runs = [res for rec, res in zip(records, results) if rec.run_index == 0]
    report: SummaryReport = summarize(first_runs)
    (out_dir / "summary.json").write_text(
        json.dumps(report.to_json_dict(), indent=2) + "\n", encoding="utf-8"
    )
    (out_dir / "summary.md").write_text(report.to_markdown(), encoding="utf-8")
    print(f"solved {report.solved} / {report.total}")
    return EXIT_OK if report.solved == report.total else EXIT_FAILURES


def cmd_rag(args) -> int:
    store = RagStore(Path(args.store))
    step = WorkflowStep(args.step)
    if args.rag_command == "add":
        unit = KnowledgeUnit(
            id=0,
            step=step,
            description=args.description,
            symptom_pattern=args.symptom,
            root_cause=args.root_cause,
            fix_strategy=args.fix_strategy,
            applicable_conditions=args.applicable or "",
        )
        try:
            unit_id = store.append_unit(unit)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"id: {unit_id}")
        return EXIT_OK

    hits = store.stage1_retrieve(step, args.query, k=args.k, tau=args.tau)
    if not hits:
        print("no hits")
        return EXIT_OK
    for hit in hits:
        print(f"[{hit.id}] score={hit.score:.3f} {hit.description}")
        if args.full:
            unit = store.stage2_load(step, hit.id)
            print(f"    symptom pattern: {unit.symptom_pattern}")
            print(f"    root cause: {unit.root_cause}")
            print(f"    fix strategy: {unit.fix_strategy}")
            print(f"    applicable conditions: {unit.applicable_conditions}")
    return EXIT_OK


def cmd_build_skills(args) -> int:
    project = Path(args.project)
    if not project.is_dir():
        print(f"error: project directory not readable: {project}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    paper_path = Path(args.paper)
    if not paper_path.is_file():
        print(f"error: paper file not readable: {paper_path}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    try:
        backend_config = json.loads(Path(args.backend).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: backend config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if backend_config.get("kind") == "replay":
        backend = ReplayBackend.from_file(backend_config["script_path"])
    else:
        backend = SubprocessBackend()

    try:
        outcome = builder.build_skills(
            project, paper_path.read_text(encoding="utf-8"), backend
        )
    except (builder.BackendError, builder.SchemaViolation) as exc:
        print(f"builder error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .skill import render_skill

    for skill in outcome.skills:
        (out_dir / f"{skill.name}.md").write_text(render_skill(skill), encoding="utf-8")
    manifest = {
        g.id: {"step": g.step.value, "members": list(g.members)} for g in outcome.groups
    }
    (out_dir / "groups.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    (out_dir / "builder_report.json").write_text(
        json.dumps(outcome.to_report_dict(), indent=2) + "\n", encoding="utf-8"
    )
    print(f"emitted {len(outcome.skills)} skills, {len(outcome.groups)} groups, "
          f"{len(outcome.dropped)} dropped")
    return EXIT_OK


def cmd_report(args) -> int:
    records = []
    for path in args.results:
        path = Path(path)
        if not path.is_file():
            print(f"error: results file not readable: {path}", file=sys.stderr)
            return EXIT_ENVIRONMENT
        records.extend(bench.read_records_jsonl(path))
    scheme_results = bench.scheme_results_from_records(records)
    try:
        table = bench.aggregate(scheme_results, args.baseline)
    except bench.ProblemSetMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.md").write_text(table.to_markdown(), encoding="utf-8")
    (out_dir / "summary.json").write_text(
        json.dumps(table.to_json_dict(), indent=2) + "\n", encoding="utf-8"
    )
    (out_dir / "heatmap.csv").write_text(bench.emit_heatmap(scheme_results), encoding="utf-8")
    print(f"wrote summary and heatmap for {len(scheme_results)} scheme(s)")
    return EXIT_OK


def cmd_passk(args) -> int:
    try:
        value = bench.pass_at_k(args.n, args.c, args.k)
    except bench.DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"pass@{args.k} = {value} = {float(value):.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lego",
        description="Skill-based workflow platform for front-end design generation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a skill library directory")
    p.add_argument("library_dir")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run a problem set under a config template")
    p.add_argument("--config", required=True)
    p.add_argument("--problems", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--tools", help="tool config JSON for the EDA harness")
    p.add_argument("--rag-store", help="experience store directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("rag", help="maintain and query the experience store")
    rag_sub = p.add_subparsers(dest="rag_command", required=True)
    add = rag_sub.add_parser("add", help="append one knowledge unit")
    add.add_argument("--store", required=True)
    add.add_argument("--step", required=True, choices=[s.value for s in WorkflowStep])
    add.add_argument("--description", required=True)
    add.add_argument("--symptom", required=True)
    add.add_argument("--root-cause", required=True, dest="root_cause")
    add.add_argument("--fix-strategy", required=True, dest="fix_strategy")
    add.add_argument("--applicable", default="")
    add.set_defaults(func=cmd_rag)
    query = rag_sub.add_parser("query", help="stage-1 retrieval over descriptions")
    query.add_argument("--store", required=True)
    query.add_argument("--step", required=True, choices=[s.value for s in WorkflowStep])
    query.add_argument("--query", required=True)
    query.add_argument("-k", type=int, default=DEFAULT_K)
    query.add_argument("--tau", type=float, default=DEFAULT_TAU)
    query.add_argument("--full", action="store_true", help="stage-2 load each hit")
    query.set_defaults(func=cmd_rag)

    p = sub.add_parser("build-skills", help="extract skills from a project")
    p.add_argument("--project", required=True)
    p.add_argument("--paper", required=True)
    p.add_argument("--backend", required=True, help="backend config JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_skills)

    p = sub.add_parser("report", help="aggregate results files into tables")
    p.add_argument("results", nargs="+")
    p.add_argument("--baseline", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("passk", help="exact pass@k for one (n, c, k)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--c", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.set_defaults(func=cmd_passk)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT


if __name__ == "__main__":
    sys.exit(main())
