"""Skill builder: turns an open-source project plus its reference notes into
candidate circuit skills.

The two agent-assisted stages (capability summarization and field
extraction) run through the backend contract and validate every response
against a record schema. The post-processing stage is fully deterministic:
it completes missing schema/done-criteria fields, deduplicates, classifies
by step, and groups same-step skills that share an IO signature.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .backend import AgentRequest
from .skill import (
    IoField,
    IoSpec,
    SchemaDef,
    SchemaEntry,
    Skill,
    WorkflowStep,
    validate_skill,
)
from .registry import GROUP_PREFIX_STEP, SkillGroup

NEAR_DUPLICATE_JACCARD = 0.8
DEFAULT_DONE_CRITERION = "declared outputs exist and are nonempty"
_KIND_TO_TYPE = {"text": "string", "file": "string", "directory": "string", "json-record": "record"}

STEP_GROUP_PREFIX = {step: prefix for prefix, step in GROUP_PREFIX_STEP.items()}

SUMMARIZE_SKILL = "skill_builder_summarize"
EXTRACT_SKILL = "skill_builder_extract"


class BackendError(Exception):
    pass


class SchemaViolation(Exception):
    def __init__(self, message: str, fragment: object = None):
        self.fragment = fragment
        super().__init__(
            message if fragment is None else f"{message}: {json.dumps(fragment, default=str)[:200]}"
        )


@dataclass(frozen=True)
class Capability:
    title: str
    summary: str
    evidence: tuple[str, ...]
    suggested_step: WorkflowStep


@dataclass(frozen=True)
class CandidateSkill:
    name: str
    function_desc: str
    constraints: tuple[str, ...]
    entrypoint: str
    io_spec: IoSpec
    step: WorkflowStep
    source_project: str
    schema: SchemaDef | None = None
    done_criteria: tuple[str, ...] | None = None


@dataclass(frozen=True)
class BuildOutcome:
    skills: tuple[Skill, ...]
    groups: tuple[SkillGroup, ...]
    dropped: tuple[tuple[str, str], ...]  # (candidate name, reason)

    def to_report_dict(self) -> dict:
        return {
            "skills": [s.name for s in self.skills],
            "groups": [
                {"id": g.id, "step": g.step.value, "members": list(g.members)}
                for g in self.groups
            ],
            "dropped": [{"name": n, "reason": r} for n, r in self.dropped],
        }


def project_abbr(project_root: Path | str) -> str:
    """Lowercase alphanumeric abbreviation derived from the directory name."""
    cleaned = re.sub(r"[^a-z0-9]", "", Path(project_root).name.lower())
    return cleaned or "project"


def _project_tree(project_root: Path, limit: int = 200) -> str:
    paths = sorted(
        p.relative_to(project_root).as_posix()
        for p in Path(project_root).rglob("*")
        if p.is_file()
    )
    listing = paths[:limit]
    if len(paths) > limit:
        listing.append(f"... and {len(paths) - limit} more files")
    return "\n".join(listing)


def _invoke(backend, skill_name: str, prompt: str, workspace: Path) -> str:
    request = AgentRequest(
        skill=skill_name,
        prompt=prompt,
        workspace=Path(workspace),
        entrypoint="lego-agent",
        timeout=300.0,
    )
    try:
        response = backend.invoke(request)
    except Exception as exc:
        raise BackendError(str(exc)) from exc
    if response.exit_status != 0:
        raise BackendError(f"backend exited {response.exit_status}: {response.stderr}")
    return response.stdout


def _parse_step(value: object, fragment: object) -> WorkflowStep:
    try:
        return WorkflowStep(value)
    except (ValueError, TypeError):
        raise SchemaViolation(f"suggested_step {value!r} is not a workflow step", fragment)


def summarize_project(project_root: Path | str, paper_text: str, backend) -> list[Capability]:
    """Stage one: ask the agent for the project's distinct capabilities."""
    project_root = Path(project_root)
    if not project_root.is_dir():
        raise BackendError(f"project root not readable: {project_root}")
    prompt = (
        "Summarize the distinct executable capabilities of this project.\n\n"
        f"=== Project tree ===\n{_project_tree(project_root)}\n\n"
        f"=== Reference notes ===\n{paper_text}\n\n"
        "Respond with a JSON list of objects with fields: title, summary, "
        "evidence (list of file paths), suggested_step (one of rtl-spec, "
        "tb-spec, rtl-gen, tb-gen, eda-tool, others)."
    )
    raw = _invoke(backend, SUMMARIZE_SKILL, prompt, project_root)
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"capability response is not JSON: {exc}", raw[:200])
    if not isinstance(data, list):
        raise SchemaViolation("capability response must be a JSON list", data)

    capabilities = []
    for item in data:
        if not isinstance(item, dict):
            raise SchemaViolation("capability must be an object", item)
        missing = [f for f in ("title", "summary", "evidence", "suggested_step") if f not in item]
        if missing:
            raise SchemaViolation(f"capability missing fields {missing}", item)
        if not str(item["title"]).strip():
            raise SchemaViolation("capability title is empty", item)
        capabilities.append(
            Capability(
                title=str(item["title"]),
                summary=str(item["summary"]),
                evidence=tuple(str(e) for e in item["evidence"]),
                suggested_step=_parse_step(item["suggested_step"], item),
            )
        )
    return capabilities


def extract_candidates(
    capabilities: list[Capability], project_root: Path | str, backend
) -> list[CandidateSkill]:
    """Stage two: one extraction request per capability."""
    if not capabilities:
        raise ValueError("extract_candidates requires at least one capability")
    project_root = Path(project_root)
    abbr = project_abbr(project_root)
    tree = _project_tree(project_root)

    candidates = []
    for cap in capabilities:
        prompt = (
            f"Extract one executable skill for the capability {cap.title!r}.\n\n"
            f"Capability summary: {cap.summary}\n"
            f"Evidence files: {', '.join(cap.evidence)}\n"
            f"Workflow step: {cap.suggested_step.value}\n\n"
            f"=== Project tree ===\n{tree}\n\n"
            "Respond with a JSON object with fields: name, function_desc, "
            "constraints (list), entrypoint, inputs (list of {name, kind, "
            "description}), outputs (same shape). Optional: step, source_project."
        )
        raw = _invoke(backend, EXTRACT_SKILL, prompt, project_root)
        try:
            item = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"candidate response is not JSON: {exc}", raw[:200])
        if not isinstance(item, dict):
            raise SchemaViolation("candidate must be an object", item)
        missing = [
            f for f in ("name", "function_desc", "entrypoint", "inputs", "outputs")
            if f not in item
        ]
        if missing:
            raise SchemaViolation(f"candidate missing fields {missing}", item)

        name = str(item["name"])
        if not name.startswith(abbr + "_"):
            name = f"{abbr}_{name}"
        probe = Skill(name=name, step=cap.suggested_step, function_desc="probe")
        bad_name = any(v.field == "name" for v in validate_skill(probe))
        if bad_name:
            raise SchemaViolation(f"candidate name {name!r} violates the naming pattern", item)

        def fields(side: str) -> tuple[IoField, ...]:
            out = []
            for f in item[side]:
                if not isinstance(f, dict) or "name" not in f or "kind" not in f:
                    raise SchemaViolation(f"bad {side} entry", f)
                out.append(IoField(str(f["name"]), str(f["kind"]), str(f.get("description", ""))))
            return tuple(out)

        step = _parse_step(item["step"], item) if "step" in item else cap.suggested_step
        candidates.append(
            CandidateSkill(
                name=name,
                function_desc=str(item["function_desc"]),
                constraints=tuple(str(c) for c in item.get("constraints", ())),
                entrypoint=str(item["entrypoint"]),
                io_spec=IoSpec(inputs=fields("inputs"), outputs=fields("outputs")),
                step=step,
                source_project=str(item.get("source_project", abbr)),
            )
        )
    return candidates


def _desc_tokens(text: str) -> frozenset[str]:
    return frozenset(re.findall(r"[a-z0-9]+", text.lower()))


def _jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def _complete(candidate: CandidateSkill | Skill) -> Skill:
    schema = getattr(candidate, "schema", None)
    if not schema or not schema.entries:
        schema = SchemaDef(
            entries=tuple(
                SchemaEntry(path=f.name, type_tag=_KIND_TO_TYPE.get(f.kind, "string"), required=True)
                for f in candidate.io_spec.outputs
            )
        )
    done = getattr(candidate, "done_criteria", None) or (DEFAULT_DONE_CRITERION,)
    return Skill(
        name=candidate.name,
        step=candidate.step,
        function_desc=candidate.function_desc,
        constraints=tuple(candidate.constraints),
        entrypoint=candidate.entrypoint,
        io_spec=candidate.io_spec,
        schema=schema,
        done_criteria=tuple(done),
        source_project=candidate.source_project,
    )


def _io_signature(skill: Skill) -> tuple[tuple[str, ...], tuple[str, ...]]:
    return (
        tuple(sorted(f.kind for f in skill.io_spec.inputs)),
        tuple(sorted(f.kind for f in skill.io_spec.outputs)),
    )


def post_process(candidates: list[CandidateSkill | Skill]) -> BuildOutcome:
    """Deterministic stage three: complete, validate, deduplicate, classify,
    and group. Idempotent: feeding the emitted skills back in changes
    nothing."""
    dropped: list[tuple[str, str]] = []

    completed: list[Skill] = []
    for cand in candidates:
        skill = _complete(cand)
        violations = validate_skill(skill)
        if violations:
            dropped.append((skill.name, "invalid: " + "; ".join(str(v) for v in violations)))
            continue
        completed.append(skill)

    unique: list[Skill] = []
    seen_names: set[str] = set()
    for skill in completed:
        if skill.name in seen_names:
            dropped.append((skill.name, "duplicate name"))
            continue
        seen_names.add(skill.name)
        unique.append(skill)

    survivors: list[Skill] = []
    for skill in unique:
        tokens = _desc_tokens(skill.function_desc)
        twin = next(
            (
                kept
                for kept in survivors
                if kept.step is skill.step
                and _jaccard(tokens, _desc_tokens(kept.function_desc)) >= NEAR_DUPLICATE_JACCARD
            ),
            None,
        )
        if twin is not None:
            dropped.append((skill.name, f"near-duplicate of {twin.name}"))
            continue
        survivors.append(skill)

    groups: list[SkillGroup] = []
    for step in WorkflowStep:
        step_skills = [s for s in survivors if s.step is step]
        signature_order: list[tuple] = []
        members: dict[tuple, list[str]] = {}
        for skill in step_skills:
            sig = _io_signature(skill)
            if sig not in members:
                members[sig] = []
                signature_order.append(sig)
            members[sig].append(skill.name)
        prefix = STEP_GROUP_PREFIX[step]
        for i, sig in enumerate(signature_order, start=1):
            groups.append(
                SkillGroup(id=f"{prefix}{i}", step=step, members=tuple(members[sig]))
            )

    return BuildOutcome(
        skills=tuple(survivors), groups=tuple(groups), dropped=tuple(dropped)
    )


def build_skills(
    project_root: Path | str, paper_text: str, backend
) -> BuildOutcome:
    """Full pipeline: summarize, extract, post-process."""
    capabilities = summarize_project(project_root, paper_text, backend)
    if not capabilities:
        return BuildOutcome(skills=(), groups=(), dropped=())
    candidates = extract_candidates(capabilities, project_root, backend)
    return post_process(list(candidates))
