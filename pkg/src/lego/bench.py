"""Benchmark harness: problem loading, repeated workflow runs, exact pass@k,
aggregate tables, and per-problem heatmap emission.

pass@k uses exact integer binomials kept as rationals until rendering, so
there is no factorial overflow and no float drift for larger run counts.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .orchestrator import ConfigTemplate, RunResult, run
from .registry import SkillRegistry


class DomainError(Exception):
    pass


class MalformedProblem(Exception):
    def __init__(self, problem_id: str, missing: str):
        self.problem_id = problem_id
        self.missing = missing
        super().__init__(f"problem {problem_id}: missing {missing}")


class ProblemSetMismatch(Exception):
    pass


@dataclass(frozen=True)
class Problem:
    id: str
    spec: str
    module_header: str
    ref_testbench: str | None = None


def load_problems(root: Path | str) -> list[Problem]:
    """One problem per subdirectory: spec.md and header.v required, tb.v
    optional. Returns problems sorted by id."""
    root = Path(root)
    problems = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        spec_path = sub / "spec.md"
        header_path = sub / "header.v"
        if not spec_path.is_file():
            raise MalformedProblem(sub.name, "spec.md")
        if not header_path.is_file():
            raise MalformedProblem(sub.name, "header.v")
        tb_path = sub / "tb.v"
        problems.append(
            Problem(
                id=sub.name,
                spec=spec_path.read_text(encoding="utf-8"),
                module_header=header_path.read_text(encoding="utf-8"),
                ref_testbench=tb_path.read_text(encoding="utf-8") if tb_path.is_file() else None,
            )
        )
    return problems


def pass_at_k(n: int, c: int, k: int) -> Fraction:
    """Exact expected pass@k for one problem: 1 - C(n-c, k) / C(n, k)."""
    if n < 1 or not (1 <= k <= n) or not (0 <= c <= n):
        raise DomainError(f"need 1 <= k <= n and 0 <= c <= n, got n={n} c={c} k={k}")
    return 1 - Fraction(math.comb(n - c, k), math.comb(n, k))


@dataclass(frozen=True)
class RunRecord:
    """One (scheme, problem, run) outcome as persisted to results JSONL."""

    scheme: str
    problem_id: str
    run_index: int
    solved: bool
    loop_count: int
    iterations: int = 0
    elapsed: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "problem_id": self.problem_id,
            "run_index": self.run_index,
            "solved": self.solved,
            "loop_count": self.loop_count,
            "iterations": self.iterations,
            "elapsed": round(self.elapsed, 6),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "RunRecord":
        return cls(
            scheme=data["scheme"],
            problem_id=data["problem_id"],
            run_index=int(data["run_index"]),
            solved=bool(data["solved"]),
            loop_count=int(data["loop_count"]),
            iterations=int(data.get("iterations", 0)),
            elapsed=float(data.get("elapsed", 0.0)),
        )


@dataclass(frozen=True)
class ProblemRuns:
    problem_id: str
    runs: tuple[tuple[bool, int], ...]  # (passed, loop_count) per run, in order

    @property
    def n(self) -> int:
        return len(self.runs)

    @property
    def c(self) -> int:
        return sum(1 for passed, _ in self.runs if passed)

    @property
    def loop_counts(self) -> tuple[int, ...]:
        return tuple(loops for _, loops in self.runs)


@dataclass(frozen=True)
class SchemeResult:
    scheme: str
    problems: tuple[ProblemRuns, ...]

    def problem_ids(self) -> tuple[str, ...]:
        return tuple(p.problem_id for p in self.problems)


def scheme_results_from_records(records: list[RunRecord]) -> list[SchemeResult]:
    """Group raw records into per-scheme, per-problem run lists."""
    by_scheme: dict[str, dict[str, list[RunRecord]]] = {}
    for rec in records:
        by_scheme.setdefault(rec.scheme, {}).setdefault(rec.problem_id, []).append(rec)
    out = []
    for scheme in sorted(by_scheme):
        problems = []
        for pid in sorted(by_scheme[scheme]):
            runs = sorted(by_scheme[scheme][pid], key=lambda r: r.run_index)
            problems.append(
                ProblemRuns(
                    problem_id=pid,
                    runs=tuple((r.solved, r.loop_count) for r in runs),
                )
            )
        out.append(SchemeResult(scheme=scheme, problems=tuple(problems)))
    return out


def run_scheme(
    problems: list[Problem],
    template: ConfigTemplate,
    registry: SkillRegistry,
    backend_factory,
    harness=None,
    rag_store=None,
    n_runs: int = 1,
    jobs: int = 1,
    workspace_root: Path | None = None,
) -> tuple[SchemeResult, list[RunRecord], list[RunResult]]:
    """Execute every problem n_runs times under one composition scheme.

    backend_factory is called once per run so scripted backends start each
    run with a fresh cursor. Distinct (problem, run) pairs may execute in
    parallel; they share no mutable state beyond the read-only registry.
    """
    import dataclasses

    base_root = Path(workspace_root) if workspace_root else Path(template.workspace_root)

    def one(problem: Problem, run_index: int) -> tuple[RunRecord, RunResult]:
        run_template = dataclasses.replace(
            template, workspace_root=base_root / f"run{run_index}"
        )
        result = run(
            problem,
            run_template,
            registry,
            backend_factory(),
            harness=harness,
            rag_store=rag_store,
        )
        record = RunRecord(
            scheme=template.name,
            problem_id=problem.id,
            run_index=run_index,
            solved=result.solved,
            loop_count=result.loop_count,
            iterations=result.final_state.iteration,
            elapsed=result.elapsed,
        )
        return record, result

    tasks = [(p, i) for p in problems for i in range(n_runs)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(lambda t: one(*t), tasks))
    else:
        outcomes = [one(*t) for t in tasks]

    records = [rec for rec, _ in outcomes]
    results = [res for _, res in outcomes]
    (scheme_result,) = scheme_results_from_records(records)
    return scheme_result, records, results


@dataclass(frozen=True)
class SummaryTable:
    """Aggregate metrics per scheme: solved counts, mean pass@1, and gain in
    percentage points over the named baseline."""

    schemes: tuple[str, ...]
    total: int
    solved: dict[str, int]
    pass_at_1: dict[str, Fraction]
    gain: dict[str, Fraction]
    baseline: str

    def to_json_dict(self) -> dict:
        return {
            "baseline": self.baseline,
            "total": self.total,
            "schemes": [
                {
                    "scheme": s,
                    "solved": self.solved[s],
                    "pass_at_1": round(float(self.pass_at_1[s]), 3),
                    "gain_percent": round(float(self.gain[s]) * 100, 1),
                }
                for s in self.schemes
            ],
        }

    def to_markdown(self) -> str:
        header = "| Metric | " + " | ".join(self.schemes) + " |"
        rule = "| --- |" + " --- |" * len(self.schemes)
        solved = "| Solved | " + " | ".join(
            f"{self.solved[s]} / {self.total}" for s in self.schemes
        ) + " |"
        pass1 = "| Pass@1 | " + " | ".join(
            f"{float(self.pass_at_1[s]):.3f}" for s in self.schemes
        ) + " |"
        gain = "| Gain | " + " | ".join(
            f"{float(self.gain[s]) * 100:+.1f}%" for s in self.schemes
        ) + " |"
        return "\n".join(["# Aggregate Metrics", "", header, rule, solved, pass1, gain]) + "\n"


def aggregate(scheme_results: list[SchemeResult], baseline_label: str) -> SummaryTable:
    """Solved / Pass@1 / Gain per scheme over a shared problem set."""
    if not scheme_results:
        raise ProblemSetMismatch("no scheme results")
    id_sets = {sr.scheme: set(sr.problem_ids()) for sr in scheme_results}
    reference = id_sets[scheme_results[0].scheme]
    for scheme, ids in id_sets.items():
        if ids != reference:
            raise ProblemSetMismatch(
                f"scheme {scheme} covers a different problem set "
                f"(+{sorted(ids - reference)} -{sorted(reference - ids)})"
            )
    labels = tuple(sr.scheme for sr in scheme_results)
    if baseline_label not in labels:
        raise ProblemSetMismatch(f"baseline {baseline_label!r} not among schemes {labels}")

    solved: dict[str, int] = {}
    pass1: dict[str, Fraction] = {}
    for sr in scheme_results:
        solved[sr.scheme] = sum(1 for p in sr.problems if p.c >= 1)
        values = [pass_at_k(p.n, p.c, 1) for p in sr.problems]
        pass1[sr.scheme] = sum(values, Fraction(0)) / len(values)
    gain = {s: pass1[s] - pass1[baseline_label] for s in labels}
    return SummaryTable(
        schemes=labels,
        total=len(reference),
        solved=solved,
        pass_at_1=pass1,
        gain=gain,
        baseline=baseline_label,
    )


def emit_heatmap(scheme_results: list[SchemeResult]) -> str:
    """CSV: one row per scheme, one column per problem id; each cell is the
    first run's 1/0 with a ``:L`` suffix when its loop count L is nonzero."""
    ids = sorted({pid for sr in scheme_results for pid in sr.problem_ids()})
    lines = ["scheme," + ",".join(ids)]
    for sr in scheme_results:
        by_id = {p.problem_id: p for p in sr.problems}
        cells = []
        for pid in ids:
            p = by_id.get(pid)
            if p is None or not p.runs:
                cells.append("")
                continue
            passed, loops = p.runs[0]
            cell = "1" if passed else "0"
            if loops > 0:
                cell += f":{loops}"
            cells.append(cell)
        lines.append(sr.scheme + "," + ",".join(cells))
    return "\n".join(lines) + "\n"


def write_records_jsonl(records: list[RunRecord], path: Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict()) + "\n")


def read_records_jsonl(path: Path) -> list[RunRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(RunRecord.from_json_dict(json.loads(line)))
    return records
