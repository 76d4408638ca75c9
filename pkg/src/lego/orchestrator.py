"""Six-step workflow state machine: executes the active composition plan,
accumulates artifacts and decisions, and loops back from EDA tool feedback
until the problem is solved or the loop budget runs out.

Loop-back targets: compile errors return to RTL generation; simulation
mismatches go to the configured failure route (RTL generation by default,
testbench generation optionally). Steps with empty skill lists are skipped.
The trailing utility step runs once after a passing simulation, never
inside the loop.
"""

from __future__ import annotations

import dataclasses
import json
import re
import shutil
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from . import eda
from .backend import AgentRequest, ReplayExhausted, ReplayMismatch, assemble_prompt, resolve_entrypoint
from .rag import RagStore, build_fix_prompt
from .registry import CompositionPlan, SkillRegistry, compose, plan_from_steps
from .skill import STEPS_IN_ORDER, Skill, WorkflowStep

# Outcome tags classified from skill execution and tool feedback.
OK = "ok"
COMPILE_ERROR = "compile_error"
SIM_MISMATCH = "sim_mismatch"
TOOL_ERROR = "tool_error"
TIMEOUT = "timeout"
OUTCOME_TAGS = (OK, COMPILE_ERROR, SIM_MISMATCH, TOOL_ERROR, TIMEOUT)

ARTIFACT_FILENAMES = {
    "rtl_spec": "rtl_spec.md",
    "tb_spec": "tb_spec.md",
    "rtl_code": "rtl.v",
    "tb_code": "tb.v",
    "compile_log": "compile.log",
    "sim_log": "sim.log",
    "waveform": "wave.vcd",
    "report": "report.md",
}
ARTIFACT_KINDS = tuple(ARTIFACT_FILENAMES)

SIM_BINARY_NAME = "sim.out"
RAG_QUERY_LIMIT = 500


class WorkspaceError(Exception):
    pass


class EmptyPlan(Exception):
    pass


class IllegalTransition(Exception):
    pass


class EmptyResults(Exception):
    pass


class ConfigError(Exception):
    pass


class ArtifactConflict(Exception):
    pass


@dataclass(frozen=True)
class ArtifactEntry:
    path: Path
    step: WorkflowStep
    iteration: int


class ArtifactSet:
    """Accumulated run outputs, kind-keyed with per-kind history.

    Entries are never removed; re-recording a kind within one iteration is
    only legal as an explicit no-op on the identical entry, so nothing is
    overwritten silently.
    """

    def __init__(self, workspace: Path):
        self.workspace = Path(workspace)
        self._history: dict[str, list[ArtifactEntry]] = {}

    def record(self, kind: str, path: Path, step: WorkflowStep, iteration: int) -> None:
        if kind not in ARTIFACT_FILENAMES:
            raise ValueError(f"unknown artifact kind {kind!r}")
        path = Path(path)
        if not path.resolve().is_relative_to(self.workspace.resolve()):
            raise ArtifactConflict(f"{kind}: path {path} escapes the run workspace")
        entry = ArtifactEntry(path=path, step=step, iteration=iteration)
        bucket = self._history.setdefault(kind, [])
        if bucket and bucket[-1].iteration == iteration:
            if bucket[-1] == entry:
                return
            raise ArtifactConflict(
                f"{kind}: already recorded at iteration {iteration}"
            )
        if bucket and bucket[-1].iteration > iteration:
            raise ArtifactConflict(f"{kind}: iteration went backwards")
        bucket.append(entry)

    def history(self, kind: str) -> tuple[ArtifactEntry, ...]:
        return tuple(self._history.get(kind, ()))

    def latest(self, kind: str) -> ArtifactEntry | None:
        bucket = self._history.get(kind)
        return bucket[-1] if bucket else None

    @property
    def entries(self) -> dict[str, ArtifactEntry]:
        return {kind: bucket[-1] for kind, bucket in self._history.items() if bucket}

    def total_entries(self) -> int:
        return sum(len(b) for b in self._history.values())


@dataclass(frozen=True)
class DecisionEntry:
    iteration: int
    step: WorkflowStep
    skill: str
    action: str
    outcome: str


class DecisionLog:
    """Append-only record of what ran and how it went."""

    def __init__(self):
        self._entries: list[DecisionEntry] = []

    def append(self, entry: DecisionEntry) -> None:
        if self._entries and entry.iteration < self._entries[-1].iteration:
            raise ValueError("decision iterations must be nondecreasing")
        self._entries.append(entry)

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def entries(self) -> tuple[DecisionEntry, ...]:
        return tuple(self._entries)


@dataclass(frozen=True)
class Terminal:
    solved: bool
    reason: str = ""


@dataclass(frozen=True)
class WorkflowState:
    current_step: WorkflowStep
    active_skill: str | None
    artifacts: ArtifactSet
    decisions: DecisionLog
    iteration: int
    loop_count: int
    terminal: Terminal | None
    plan: CompositionPlan
    workspace: Path


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "replay"  # replay | subprocess
    command: str = ""
    script_path: str = ""
    timeout_seconds: float = 120.0


@dataclass(frozen=True)
class ConfigTemplate:
    """User-facing run configuration, normally loaded from a JSON file."""

    name: str
    groups: tuple[str, ...] | None = None
    steps: dict[str, list[str]] | None = None
    max_loops: int = 0
    rag_enabled: bool = False
    rag_k: int = 3
    rag_tau: float = 0.2
    backend: BackendConfig = BackendConfig()
    failure_route: WorkflowStep = WorkflowStep.RTL_GEN
    workspace_root: Path = Path("runs")
    library: Path | None = None
    source_path: Path | None = None

    @classmethod
    def from_json(cls, data: dict, source_path: Path | None = None) -> "ConfigTemplate":
        try:
            name = data["name"]
            groups = tuple(data["groups"]) if "groups" in data else None
            steps = dict(data["steps"]) if "steps" in data else None
            if groups is None and steps is None:
                raise ConfigError("config needs either 'groups' or 'steps'")
            max_loops = int(data.get("max_loops", 0))
            if max_loops < 0:
                raise ConfigError("max_loops must be >= 0")
            rag = data.get("rag", {})
            backend_data = data.get("backend", {})
            kind = backend_data.get("kind", "replay")
            if kind not in ("replay", "subprocess"):
                raise ConfigError(f"unknown backend kind {kind!r}")
            failure_route = WorkflowStep(data.get("failure_route", "rtl-gen"))
            if failure_route not in (WorkflowStep.RTL_GEN, WorkflowStep.TB_GEN):
                raise ConfigError("failure_route must be rtl-gen or tb-gen")
            return cls(
                name=name,
                groups=groups,
                steps=steps,
                max_loops=max_loops,
                rag_enabled=bool(rag.get("enabled", False)),
                rag_k=int(rag.get("k", 3)),
                rag_tau=float(rag.get("tau", 0.2)),
                backend=BackendConfig(
                    kind=kind,
                    command=backend_data.get("command", ""),
                    script_path=backend_data.get("script_path", ""),
                    timeout_seconds=float(backend_data.get("timeout_seconds", 120.0)),
                ),
                failure_route=failure_route,
                workspace_root=Path(data.get("workspace_root", "runs")),
                library=Path(data["library"]) if "library" in data else None,
                source_path=source_path,
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    @classmethod
    def from_file(cls, path: Path | str) -> "ConfigTemplate":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_json(data, source_path=path)


@dataclass(frozen=True)
class RunResult:
    problem_id: str
    solved: bool
    loop_count: int
    final_state: WorkflowState
    elapsed: float


def resolve_plan(template: ConfigTemplate, registry: SkillRegistry) -> CompositionPlan:
    if template.groups is not None:
        return compose(registry, list(template.groups))
    return plan_from_steps(registry, template.steps or {}, label=template.name)


def _sanitize(problem_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", problem_id) or "problem"


def init_run(template: ConfigTemplate, plan: CompositionPlan, problem) -> WorkflowState:
    """Initial state: first nonempty step, iteration 0, fresh workspace."""
    nonempty = plan.nonempty_steps()
    if not nonempty:
        raise EmptyPlan("all six steps are empty")
    # Absolute from the start: artifact paths are handed to tools running
    # with the workspace as their cwd, where relative roots would dangle.
    workspace = (Path(template.workspace_root) / _sanitize(problem.id)).resolve()
    try:
        workspace.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise WorkspaceError(str(exc)) from exc
    return WorkflowState(
        current_step=nonempty[0],
        active_skill=None,
        artifacts=ArtifactSet(workspace),
        decisions=DecisionLog(),
        iteration=0,
        loop_count=0,
        terminal=None,
        plan=plan,
        workspace=workspace,
    )


def _next_nonempty(plan: CompositionPlan, after: WorkflowStep) -> WorkflowStep | None:
    for step in STEPS_IN_ORDER:
        if step.ordinal > after.ordinal and plan.per_step.get(step):
            return step
    return None


def _loop_target(plan: CompositionPlan, target: WorkflowStep) -> WorkflowStep:
    """First nonempty step at or after the target, wrapping to the start."""
    for step in STEPS_IN_ORDER:
        if step.ordinal >= target.ordinal and plan.per_step.get(step):
            return step
    return plan.nonempty_steps()[0]


def transition(
    state: WorkflowState, outcome: str, template: ConfigTemplate
) -> WorkflowState:
    """One state machine step; total over every (step, outcome) pair."""
    if state.terminal is not None:
        raise IllegalTransition("state is terminal")
    if outcome not in OUTCOME_TAGS:
        raise ValueError(f"unknown outcome tag {outcome!r}")

    def move(**changes) -> WorkflowState:
        return dataclasses.replace(
            state, iteration=state.iteration + 1, active_skill=None, **changes
        )

    if outcome == OK:
        nxt = _next_nonempty(state.plan, state.current_step)
        if nxt is None:
            return move(terminal=Terminal(solved=True))
        return move(current_step=nxt)

    if outcome in (COMPILE_ERROR, SIM_MISMATCH):
        if state.loop_count == template.max_loops:
            return move(terminal=Terminal(solved=False, reason="loop-budget"))
        target = (
            WorkflowStep.RTL_GEN if outcome == COMPILE_ERROR else template.failure_route
        )
        return move(
            current_step=_loop_target(state.plan, target),
            loop_count=state.loop_count + 1,
        )

    # tool_error / timeout
    return move(terminal=Terminal(solved=False, reason=outcome))


def _feedback_query(diagnostics: list[eda.Diagnostic]) -> str:
    """Newest-first concatenation of diagnostic messages, capped."""
    joined = "; ".join(d.message for d in reversed(diagnostics) if d.message)
    return joined[:RAG_QUERY_LIMIT]


class _SkillRunner:
    """Executes the skills of one step and classifies the step outcome."""

    def __init__(self, state, template, registry, backend, harness, problem_text):
        self.state = state
        self.template = template
        self.registry = registry
        self.backend = backend
        self.harness = harness
        self.problem_text = problem_text
        self.feedback = ""

    def _record_output(self, kind: str, skill: Skill) -> None:
        canonical = self.state.workspace / ARTIFACT_FILENAMES[kind]
        if not canonical.exists():
            return
        attic = self.state.workspace / "artifacts"
        attic.mkdir(exist_ok=True)
        copy = attic / f"{kind}.it{self.state.iteration}{canonical.suffix}"
        shutil.copyfile(canonical, copy)
        self.state.artifacts.record(kind, copy, skill.step, self.state.iteration)

    def _declared_artifact_outputs(self, skill: Skill) -> tuple[str, ...]:
        return tuple(
            f.name for f in skill.io_spec.outputs if f.name in ARTIFACT_FILENAMES
        )

    def _compile(self, skill: Skill) -> str:
        rtl = self.state.artifacts.latest("rtl_code")
        if rtl is None:
            self.feedback = "no design to compile"
            return TOOL_ERROR
        sources = [rtl.path]
        tb = self.state.artifacts.latest("tb_code")
        if tb is not None:
            sources.append(tb.path)
        try:
            result = self.harness.compile(sources, self.state.workspace)
        except eda.Timeout:
            return TIMEOUT
        except (eda.SpawnError, ValueError) as exc:
            self.feedback = str(exc)
            return TOOL_ERROR
        (self.state.workspace / ARTIFACT_FILENAMES["compile_log"]).write_text(
            result.log, encoding="utf-8"
        )
        self._record_output("compile_log", skill)
        if result.success:
            return OK
        self.feedback = _feedback_query(list(result.diagnostics))
        return COMPILE_ERROR

    def _simulate(self, skill: Skill) -> str:
        # Always rebuild: the design may have been regenerated since the
        # last compile, and a stale binary would mask the fix.
        status = self._compile(skill)
        if status != OK:
            return status
        binary = self.state.workspace / SIM_BINARY_NAME
        try:
            result = self.harness.simulate(binary, self.state.workspace)
        except (eda.SpawnError, ValueError) as exc:
            self.feedback = str(exc)
            return TOOL_ERROR
        (self.state.workspace / ARTIFACT_FILENAMES["sim_log"]).write_text(
            result.log, encoding="utf-8"
        )
        self._record_output("sim_log", skill)
        if (self.state.workspace / ARTIFACT_FILENAMES["waveform"]).exists():
            self._record_output("waveform", skill)
        if result.status == "pass":
            return OK
        if result.status == "mismatch":
            self.feedback = _feedback_query(eda.parse_diagnostics(result.log))
            return SIM_MISMATCH
        self.feedback = _feedback_query(eda.parse_diagnostics(result.log))
        return TIMEOUT if result.status == "timeout" else TOOL_ERROR

    def _invoke_backend(self, skill: Skill, fixes: str | None) -> str:
        prompt = assemble_prompt(skill, self.state.artifacts, self.problem_text, fixes)
        template_cmd = (
            self.template.backend.command
            if self.template.backend.kind == "subprocess" and self.template.backend.command
            else skill.entrypoint
        )
        expected = self._declared_artifact_outputs(skill)
        try:
            request = AgentRequest(
                skill=skill.name,
                prompt=prompt,
                workspace=self.state.workspace,
                entrypoint=resolve_entrypoint(
                    template_cmd, self.state.workspace, self.template.source_path or ""
                ),
                timeout=self.template.backend.timeout_seconds,
                expected_outputs=expected,
            )
            response = self.backend.invoke(request)
        except eda.Timeout:
            return TIMEOUT
        except (eda.SpawnError, ReplayMismatch, ReplayExhausted, ValueError, KeyError) as exc:
            self.feedback = str(exc)
            return TOOL_ERROR
        if response.exit_status != 0:
            self.feedback = _feedback_query(eda.parse_diagnostics(response.stderr))
            return TOOL_ERROR
        missing = []
        for kind in expected:
            if (self.state.workspace / ARTIFACT_FILENAMES[kind]).exists():
                self._record_output(kind, skill)
            else:
                missing.append(kind)
        if missing:
            self.feedback = f"declared outputs missing: {', '.join(missing)}"
            return TOOL_ERROR
        return OK

    def run_step(self, fixes: str | None) -> str:
        """Run the step's skills in plan order; first failure ends the step."""
        step = self.state.current_step
        for name in self.state.plan.per_step[step]:
            skill = self.registry.skills[name]
            outputs = set(self._declared_artifact_outputs(skill))
            if step is WorkflowStep.EDA_TOOL and "compile_log" in outputs:
                action, outcome = "compile", self._compile(skill)
            elif step is WorkflowStep.EDA_TOOL and outputs & {"sim_log", "waveform"}:
                action, outcome = "simulate", self._simulate(skill)
            else:
                action, outcome = "invoke", self._invoke_backend(skill, fixes)
                fixes = None  # injected into the next backend request only
            self.state.decisions.append(
                DecisionEntry(
                    iteration=self.state.iteration,
                    step=step,
                    skill=name,
                    action=action,
                    outcome=outcome,
                )
            )
            if outcome != OK:
                return outcome
        return OK


def _retrieve_fixes(
    rag_store: RagStore | None,
    template: ConfigTemplate,
    step: WorkflowStep,
    query: str,
) -> str | None:
    if rag_store is None or not template.rag_enabled or not query:
        return None
    hits = rag_store.stage1_retrieve(
        step, query, k=template.rag_k, tau=template.rag_tau
    )
    if not hits:
        return None
    units = [rag_store.stage2_load(step, h.id) for h in hits]
    return build_fix_prompt(units, context=query)


def run(
    problem,
    template: ConfigTemplate,
    registry: SkillRegistry,
    backend,
    harness=None,
    rag_store: RagStore | None = None,
) -> RunResult:
    """Drive one problem through the state machine until terminal."""
    if harness is None:
        harness = eda.EdaHarness()
    start = time.monotonic()
    plan = resolve_plan(template, registry)
    state = init_run(template, plan, problem)

    (state.workspace / "spec.md").write_text(problem.spec, encoding="utf-8")
    (state.workspace / "header.v").write_text(problem.module_header, encoding="utf-8")
    if getattr(problem, "ref_testbench", None):
        tb_path = state.workspace / ARTIFACT_FILENAMES["tb_code"]
        tb_path.write_text(problem.ref_testbench, encoding="utf-8")
        state.artifacts.record("tb_code", tb_path, state.current_step, 0)

    problem_text = f"{problem.spec}\n\nModule interface:\n{problem.module_header}"
    pending_fixes: str | None = None

    while state.terminal is None:
        runner = _SkillRunner(state, template, registry, backend, harness, problem_text)
        outcome = runner.run_step(pending_fixes)
        pending_fixes = None
        if outcome in (COMPILE_ERROR, SIM_MISMATCH) and state.loop_count < template.max_loops:
            pending_fixes = _retrieve_fixes(
                rag_store, template, state.current_step, runner.feedback
            )
        state = transition(state, outcome, template)

    return RunResult(
        problem_id=problem.id,
        solved=state.terminal.solved,
        loop_count=state.loop_count,
        final_state=state,
        elapsed=time.monotonic() - start,
    )


@dataclass(frozen=True)
class SummaryReport:
    rows: tuple[tuple[str, bool, int], ...]  # (problem id, solved, loop count)
    solved: int
    total: int
    pass_at_1: Fraction

    def to_json_dict(self) -> dict:
        return {
            "solved": self.solved,
            "total": self.total,
            "pass_at_1": round(float(self.pass_at_1), 3),
            "rows": [
                {"problem": pid, "solved": ok, "loop_count": loops}
                for pid, ok, loops in self.rows
            ],
        }

    def to_markdown(self) -> str:
        lines = [
            "# Run Summary",
            "",
            "| problem | solved | loops |",
            "| --- | --- | --- |",
        ]
        for pid, ok, loops in self.rows:
            lines.append(f"| {pid} | {'yes' if ok else 'no'} | {loops} |")
        lines += [
            "",
            f"Solved: {self.solved} / {self.total}",
            f"Pass@1: {float(self.pass_at_1):.3f}",
        ]
        return "\n".join(lines) + "\n"


def summarize(results: list[RunResult]) -> SummaryReport:
    """Aggregate per-problem outcomes into the end-of-batch report."""
    if not results:
        raise EmptyResults("no run results to summarize")
    from .bench import pass_at_k

    rows = tuple(
        (r.problem_id, r.solved, r.loop_count)
        for r in sorted(results, key=lambda r: r.problem_id)
    )
    solved = sum(1 for _, ok, _ in rows if ok)
    per_problem = [pass_at_k(1, 1 if ok else 0, 1) for _, ok, _ in rows]
    pass_at_1 = sum(per_problem, Fraction(0)) / len(per_problem)
    return SummaryReport(rows=rows, solved=solved, total=len(rows), pass_at_1=pass_at_1)
