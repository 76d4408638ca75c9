"""Circuit skill data model: the seven-field skill record, its markdown file
format, parsing, rendering, and validation.

A skill file is UTF-8 markdown with an H1 equal to the skill name followed by
seven mandated H2 sections in canonical order: Step, Function, Constraints,
Entrypoint, Input/Output, Schema, Done Criteria. Unknown H2 sections are kept
as opaque extras so files round-trip byte for byte.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable


class WorkflowStep(Enum):
    """The six stages of the front-end flow, in execution order."""

    RTL_SPEC = "rtl-spec"
    TB_SPEC = "tb-spec"
    RTL_GEN = "rtl-gen"
    TB_GEN = "tb-gen"
    EDA_TOOL = "eda-tool"
    OTHERS = "others"

    @property
    def ordinal(self) -> int:
        """1-based position in the flow."""
        return _STEP_ORDER[self]

    @classmethod
    def from_token(cls, token: str) -> "WorkflowStep":
        try:
            return cls(token)
        except ValueError:
            raise BadStep(token) from None


_STEP_ORDER = {step: i + 1 for i, step in enumerate(WorkflowStep)}

STEPS_IN_ORDER: tuple[WorkflowStep, ...] = tuple(WorkflowStep)

SKILL_NAME_RE = re.compile(r"^[a-z0-9]+(_[a-z0-9]+)+$")

# Placeholders an entrypoint template may reference.
ALLOWED_PLACEHOLDERS = frozenset({"workspace", "input", "output", "config"})

IO_KINDS = frozenset({"text", "file", "directory", "json-record"})

SCHEMA_TYPE_TAGS = frozenset({"string", "integer", "float", "boolean", "list", "record"})

SECTION_TITLES = (
    "Step",
    "Function",
    "Constraints",
    "Entrypoint",
    "Input/Output",
    "Schema",
    "Done Criteria",
)


class SkillError(Exception):
    """Base class for skill file format errors."""


class MissingSection(SkillError):
    def __init__(self, name: str):
        self.section = name
        super().__init__(f"missing required section: {name}")


class BadName(SkillError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"invalid skill name: {name!r}")


class BadStep(SkillError):
    def __init__(self, token: str):
        self.token = token
        super().__init__(f"invalid workflow step: {token!r}")


class MalformedSection(SkillError):
    def __init__(self, section: str, reason: str):
        self.section = section
        self.reason = reason
        super().__init__(f"malformed section {section!r}: {reason}")


class InvalidSkill(SkillError):
    """Raised when rendering a skill that fails validation."""

    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        detail = "; ".join(str(v) for v in violations)
        super().__init__(f"skill fails validation: {detail}")


@dataclass(frozen=True)
class IoField:
    name: str
    kind: str
    description: str = ""


@dataclass(frozen=True)
class IoSpec:
    """Declared inputs and outputs of a skill."""

    inputs: tuple[IoField, ...] = ()
    outputs: tuple[IoField, ...] = ()


@dataclass(frozen=True)
class SchemaEntry:
    path: str
    type_tag: str
    required: bool = True


@dataclass(frozen=True)
class SchemaDef:
    entries: tuple[SchemaEntry, ...] = ()


@dataclass(frozen=True)
class Skill:
    """One composable capability unit.

    Fields map one-to-one onto the seven sections of the skill file: name,
    step (plus source project), function description, constraints,
    entrypoint, io spec, schema, and done criteria.
    """

    name: str
    step: WorkflowStep
    function_desc: str
    constraints: tuple[str, ...] = ()
    entrypoint: str = "lego-agent --workspace {workspace}"
    io_spec: IoSpec = IoSpec()
    schema: SchemaDef = SchemaDef()
    done_criteria: tuple[str, ...] = ("declared outputs exist and are nonempty",)
    source_project: str = ""
    extras: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class Violation:
    """One validation failure: which field broke which rule."""

    field: str
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        msg = f"{self.field}: {self.rule}"
        return f"{msg} ({self.detail})" if self.detail else msg


_PLACEHOLDER_RE = re.compile(r"\{([^{}]*)\}")
_IO_BULLET_RE = re.compile(r"^- (?P<name>[^\s(]+) \((?P<kind>[a-z-]+)\):(?: (?P<desc>.*))?$")
_SCHEMA_BULLET_RE = re.compile(
    r"^- (?P<path>[^\s(]+) \((?P<tag>[a-z]+), (?P<req>required|optional)\)$"
)
_SOURCE_RE = re.compile(r"^Source: (?P<project>\S.*)$")


def _split_sections(text: str) -> tuple[str, list[tuple[str, str]]]:
    """Return (h1 name, ordered [(title, body)]) from a skill document."""
    lines = text.splitlines()
    idx = 0
    while idx < len(lines) and not lines[idx].strip():
        idx += 1
    if idx >= len(lines) or not lines[idx].startswith("# ") or lines[idx].startswith("## "):
        raise BadName(lines[idx].strip() if idx < len(lines) else "")
    name = lines[idx][2:].strip()

    sections: list[tuple[str, list[str]]] = []
    current: list[str] | None = None
    for line in lines[idx + 1 :]:
        if line.startswith("## "):
            current = []
            sections.append((line[3:].strip(), current))
        elif line.startswith("#"):
            raise MalformedSection(
                sections[-1][0] if sections else "(preamble)",
                f"unexpected heading line {line!r}",
            )
        elif current is not None:
            current.append(line)
        elif line.strip():
            raise MalformedSection("(preamble)", f"content before first section: {line!r}")

    bodies: list[tuple[str, str]] = []
    seen: set[str] = set()
    for title, body_lines in sections:
        if title in SECTION_TITLES:
            if title in seen:
                raise MalformedSection(title, "duplicate section")
            seen.add(title)
        bodies.append((title, "\n".join(body_lines).strip("\n")))
    return name, bodies


def _parse_bullets(section: str, body: str) -> list[str]:
    items: list[str] = []
    for line in body.splitlines():
        line = line.rstrip()
        if not line:
            continue
        if line == "none":
            if items:
                raise MalformedSection(section, "'none' mixed with bullet items")
            return []
        if not line.startswith("- "):
            raise MalformedSection(section, f"expected bullet line, got {line!r}")
        items.append(line[2:])
    return items


def _parse_io(body: str) -> IoSpec:
    inputs: list[IoField] = []
    outputs: list[IoField] = []
    target: list[IoField] | None = None
    for line in body.splitlines():
        line = line.rstrip()
        if not line:
            continue
        if line == "Inputs:":
            target = inputs
            continue
        if line == "Outputs:":
            target = outputs
            continue
        if line == "none":
            continue
        if target is None:
            raise MalformedSection("Input/Output", f"line outside Inputs:/Outputs:: {line!r}")
        m = _IO_BULLET_RE.match(line)
        if not m:
            raise MalformedSection("Input/Output", f"bad bullet: {line!r}")
        target.append(IoField(m["name"], m["kind"], m["desc"] or ""))
    return IoSpec(inputs=tuple(inputs), outputs=tuple(outputs))


def _parse_schema(body: str) -> SchemaDef:
    entries: list[SchemaEntry] = []
    for item in _parse_bullets("Schema", body):
        m = _SCHEMA_BULLET_RE.match("- " + item)
        if not m:
            raise MalformedSection("Schema", f"bad bullet: {item!r}")
        entries.append(SchemaEntry(m["path"], m["tag"], m["req"] == "required"))
    return SchemaDef(entries=tuple(entries))


def parse_skill(text: str) -> Skill:
    """Parse a skill markdown document into a Skill.

    Sections may appear in any order; rendering always emits the canonical
    order. Raises MissingSection, BadName, BadStep, or MalformedSection.
    """
    name, sections = _split_sections(text)
    if not SKILL_NAME_RE.match(name):
        raise BadName(name)

    by_title = {title: body for title, body in sections if title in SECTION_TITLES}
    for title in SECTION_TITLES:
        if title not in by_title:
            raise MissingSection(title)
    extras = tuple((t, b) for t, b in sections if t not in SECTION_TITLES)

    step_lines = [ln.rstrip() for ln in by_title["Step"].splitlines() if ln.strip()]
    if not step_lines:
        raise BadStep("")
    step = WorkflowStep.from_token(step_lines[0])
    source_project = ""
    if len(step_lines) > 1:
        m = _SOURCE_RE.match(step_lines[1])
        if not m or len(step_lines) > 2:
            raise BadStep(" ".join(step_lines[1:]))
        source_project = m["project"].strip()

    entry_lines = [ln.rstrip() for ln in by_title["Entrypoint"].splitlines() if ln.strip()]
    if len(entry_lines) != 1:
        raise MalformedSection("Entrypoint", "expected exactly one command line")

    return Skill(
        name=name,
        step=step,
        function_desc=by_title["Function"],
        constraints=tuple(_parse_bullets("Constraints", by_title["Constraints"])),
        entrypoint=entry_lines[0],
        io_spec=_parse_io(by_title["Input/Output"]),
        schema=_parse_schema(by_title["Schema"]),
        done_criteria=tuple(_parse_bullets("Done Criteria", by_title["Done Criteria"])),
        source_project=source_project,
        extras=extras,
    )


def _render_bullets(items: Iterable[str]) -> str:
    items = list(items)
    if not items:
        return "none"
    return "\n".join(f"- {item}" for item in items)


def _render_io_fields(fields: Iterable[IoField]) -> str:
    fields = list(fields)
    if not fields:
        return "none"
    return "\n".join(
        f"- {f.name} ({f.kind}): {f.description}".rstrip() for f in fields
    )


def render_skill(skill: Skill) -> str:
    """Render a skill to its canonical markdown document.

    The output is byte-stable: parse_skill(render_skill(s)) == s. Raises
    InvalidSkill if the skill fails validation.
    """
    violations = validate_skill(skill)
    if violations:
        raise InvalidSkill(violations)

    step_body = skill.step.value
    if skill.source_project:
        step_body += f"\nSource: {skill.source_project}"

    schema_body = _render_bullets(
        f"{e.path} ({e.type_tag}, {'required' if e.required else 'optional'})"
        for e in skill.schema.entries
    )
    io_body = (
        "Inputs:\n"
        + _render_io_fields(skill.io_spec.inputs)
        + "\nOutputs:\n"
        + _render_io_fields(skill.io_spec.outputs)
    )

    parts = [
        f"# {skill.name}",
        "## Step\n" + step_body,
        "## Function\n" + skill.function_desc,
        "## Constraints\n" + _render_bullets(skill.constraints),
        "## Entrypoint\n" + skill.entrypoint,
        "## Input/Output\n" + io_body,
        "## Schema\n" + schema_body,
        "## Done Criteria\n" + _render_bullets(skill.done_criteria),
    ]
    for title, body in skill.extras:
        parts.append(f"## {title}\n{body}" if body else f"## {title}")
    return "\n\n".join(parts) + "\n"


def _check_single_line(items: Iterable[str], field_name: str, out: list[Violation]) -> None:
    for item in items:
        if not item.strip():
            out.append(Violation(field_name, "nonempty", "blank item"))
        elif "\n" in item:
            out.append(Violation(field_name, "single-line", repr(item)))


def validate_skill(skill: Skill) -> list[Violation]:
    """Check every skill invariant; an empty list means the skill is valid."""
    out: list[Violation] = []

    if not SKILL_NAME_RE.match(skill.name):
        out.append(Violation("name", "pattern", skill.name))
    if not skill.function_desc.strip():
        out.append(Violation("function_desc", "nonempty"))
    for line in skill.function_desc.splitlines():
        if line.startswith("#"):
            out.append(Violation("function_desc", "no-heading-lines", repr(line)))
    if not skill.entrypoint.strip():
        out.append(Violation("entrypoint", "nonempty"))
    elif "\n" in skill.entrypoint:
        out.append(Violation("entrypoint", "single-line"))
    for token in _PLACEHOLDER_RE.findall(skill.entrypoint):
        if token not in ALLOWED_PLACEHOLDERS:
            out.append(Violation("entrypoint", "placeholder-set", "{%s}" % token))
    if not skill.done_criteria:
        out.append(Violation("done_criteria", "nonempty"))
    _check_single_line(skill.done_criteria, "done_criteria", out)
    _check_single_line(skill.constraints, "constraints", out)

    for side, fields in (("inputs", skill.io_spec.inputs), ("outputs", skill.io_spec.outputs)):
        names = [f.name for f in fields]
        if len(names) != len(set(names)):
            out.append(Violation(f"io_spec.{side}", "unique-names"))
        for f in fields:
            if f.kind not in IO_KINDS:
                out.append(Violation(f"io_spec.{side}", "kind", f"{f.name}: {f.kind}"))
            if "\n" in f.description:
                out.append(Violation(f"io_spec.{side}", "single-line", f.name))

    paths = [e.path for e in skill.schema.entries]
    if len(paths) != len(set(paths)):
        out.append(Violation("schema", "unique-paths"))
    for e in skill.schema.entries:
        if e.type_tag not in SCHEMA_TYPE_TAGS:
            out.append(Violation("schema", "type-tag", f"{e.path}: {e.type_tag}"))
        if e.required and not e.path:
            out.append(Violation("schema", "required-path-nonempty"))

    if not isinstance(skill.step, WorkflowStep):
        out.append(Violation("step", "member-of-taxonomy", repr(skill.step)))
    return out
