"""Skill library loading, group curation, and composition planning.

A library is a directory of skill markdown files plus an optional
``groups.json`` manifest mapping group ids (S1, TS3, G4, E2, O1, ...) to a
workflow step and an ordered member list. Top-level manifest keys starting
with an underscore are treated as comments and ignored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
import re

from .skill import STEPS_IN_ORDER, Skill, SkillError, WorkflowStep, parse_skill, validate_skill

GROUP_ID_RE = re.compile(r"^(TS|TG|S|G|E|O)[0-9]+$")

GROUP_PREFIX_STEP = {
    "S": WorkflowStep.RTL_SPEC,
    "TS": WorkflowStep.TB_SPEC,
    "G": WorkflowStep.RTL_GEN,
    "TG": WorkflowStep.TB_GEN,
    "E": WorkflowStep.EDA_TOOL,
    "O": WorkflowStep.OTHERS,
}

MANIFEST_NAME = "groups.json"


class LoadError(Exception):
    """Aggregated per-file failures from loading a library directory."""

    def __init__(self, failures: list[tuple[str, str]]):
        self.failures = failures
        lines = "\n".join(f"  {path}: {msg}" for path, msg in failures)
        super().__init__(f"{len(failures)} file(s) failed to load:\n{lines}")


class ManifestError(Exception):
    def __init__(self, message: str, dangling: list[str] | None = None):
        self.dangling = dangling or []
        super().__init__(message)


class UnknownGroup(Exception):
    def __init__(self, group_id: str):
        self.group_id = group_id
        super().__init__(f"unknown group id: {group_id}")


@dataclass(frozen=True)
class SkillGroup:
    """A curated, ordered set of same-step skills composable as a unit."""

    id: str
    step: WorkflowStep
    members: tuple[str, ...]


@dataclass(frozen=True)
class SkillRegistry:
    skills: dict[str, Skill]
    groups: dict[str, SkillGroup]
    by_step: dict[WorkflowStep, tuple[str, ...]]

    def __post_init__(self):
        object.__setattr__(
            self,
            "by_step",
            {step: self.by_step.get(step, ()) for step in STEPS_IN_ORDER},
        )


@dataclass(frozen=True)
class CompositionPlan:
    """Per-step ordered skill lists produced by combining groups."""

    per_step: dict[WorkflowStep, tuple[str, ...]]
    label: str

    def nonempty_steps(self) -> tuple[WorkflowStep, ...]:
        return tuple(s for s in STEPS_IN_ORDER if self.per_step.get(s))


def group_prefix(group_id: str) -> str:
    m = GROUP_ID_RE.match(group_id)
    return m.group(1) if m else ""


def _load_manifest(path: Path, skills: dict[str, Skill]) -> dict[str, SkillGroup]:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")

    groups: dict[str, SkillGroup] = {}
    dangling: list[str] = []
    for gid, body in raw.items():
        if gid.startswith("_"):
            continue
        if not GROUP_ID_RE.match(gid):
            raise ManifestError(f"bad group id {gid!r}")
        if not isinstance(body, dict) or "step" not in body or "members" not in body:
            raise ManifestError(f"group {gid}: expected {{step, members}}")
        step = WorkflowStep(body["step"])
        if GROUP_PREFIX_STEP[group_prefix(gid)] is not step:
            raise ManifestError(f"group {gid}: prefix inconsistent with step {step.value}")
        members = tuple(body["members"])
        if not members:
            raise ManifestError(f"group {gid}: empty member list")
        for name in members:
            if name not in skills:
                dangling.append(f"{gid} -> {name}")
            elif skills[name].step is not step:
                raise ManifestError(
                    f"group {gid}: member {name} carries step "
                    f"{skills[name].step.value}, group is {step.value}"
                )
        groups[gid] = SkillGroup(id=gid, step=step, members=members)
    if dangling:
        raise ManifestError(f"manifest references unknown skills: {dangling}", dangling)
    return groups


def load_library(root: Path | str) -> SkillRegistry:
    """Load every ``*.md`` under root plus the groups manifest.

    Parse and validation failures are aggregated into one LoadError so a
    broken library reports every problem at once.
    """
    root = Path(root)
    if not root.is_dir():
        raise LoadError([(str(root), "not a readable directory")])

    skills: dict[str, Skill] = {}
    failures: list[tuple[str, str]] = []
    for path in sorted(root.rglob("*.md")):
        try:
            skill = parse_skill(path.read_text(encoding="utf-8"))
        except (SkillError, OSError) as exc:
            failures.append((str(path), str(exc)))
            continue
        problems = [str(v) for v in validate_skill(skill)]
        if path.stem != skill.name:
            problems.append(f"name: file-stem (file {path.stem!r} vs H1 {skill.name!r})")
        if skill.name in skills:
            problems.append(f"name: duplicate (already defined)")
        if problems:
            failures.append((str(path), "; ".join(problems)))
        else:
            skills[skill.name] = skill
    if failures:
        raise LoadError(failures)

    manifest = root / MANIFEST_NAME
    groups = _load_manifest(manifest, skills) if manifest.is_file() else {}

    by_step: dict[WorkflowStep, tuple[str, ...]] = {}
    for step in STEPS_IN_ORDER:
        by_step[step] = tuple(sorted(n for n, s in skills.items() if s.step is step))
    return SkillRegistry(skills=skills, groups=groups, by_step=by_step)


def compose(registry: SkillRegistry, group_ids: list[str]) -> CompositionPlan:
    """Combine groups into a plan; shared members are kept once, first wins."""
    per_step: dict[WorkflowStep, list[str]] = {step: [] for step in STEPS_IN_ORDER}
    for gid in group_ids:
        group = registry.groups.get(gid)
        if group is None:
            raise UnknownGroup(gid)
        bucket = per_step[group.step]
        for name in group.members:
            if name not in bucket:
                bucket.append(name)
    return CompositionPlan(
        per_step={step: tuple(names) for step, names in per_step.items()},
        label="".join(group_ids),
    )


def plan_from_steps(
    registry: SkillRegistry,
    steps: dict[str, list[str]],
    label: str = "custom",
) -> CompositionPlan:
    """Build a plan from explicit per-step skill lists (config "steps" form)."""
    per_step: dict[WorkflowStep, tuple[str, ...]] = {s: () for s in STEPS_IN_ORDER}
    for token, names in steps.items():
        step = WorkflowStep(token)
        seen: list[str] = []
        for name in names:
            if name not in registry.skills:
                raise ManifestError(f"plan references unknown skill {name!r}", [name])
            if registry.skills[name].step is not step:
                raise ManifestError(
                    f"skill {name} carries step {registry.skills[name].step.value}, "
                    f"listed under {step.value}"
                )
            if name not in seen:
                seen.append(name)
        per_step[step] = tuple(seen)
    return CompositionPlan(per_step=per_step, label=label)


def stats(registry: SkillRegistry) -> tuple[int, int, int]:
    """(populated step count, group count, skill count)."""
    populated = sum(1 for step in STEPS_IN_ORDER if registry.by_step[step])
    return populated, len(registry.groups), len(registry.skills)
