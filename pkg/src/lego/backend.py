"""Contract for invoking an external code agent, plus deterministic prompt
assembly and a scripted replay double for reproducible runs.

The subprocess backend launches the request's resolved command with the
prompt on standard input (prompts exceed argv limits and argv leaks into
process listings) and reports written files from a before/after workspace
snapshot rather than trusting agent output.
"""

from __future__ import annotations

import hashlib
import json
import os
import shlex
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

from .eda import SpawnError, Timeout
from .skill import Skill

if TYPE_CHECKING:  # pragma: no cover
    from .orchestrator import ArtifactSet

EXCERPT_LIMIT = 8000


class ReplayMismatch(Exception):
    def __init__(self, expected: str, got: str):
        self.expected = expected
        self.got = got
        super().__init__(f"replay expected {expected!r}, got {got!r}")


class ReplayExhausted(Exception):
    pass


@dataclass(frozen=True)
class AgentRequest:
    skill: str
    prompt: str
    workspace: Path
    entrypoint: str
    timeout: float
    expected_outputs: tuple[str, ...] = ()

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if "{" in self.entrypoint and "}" in self.entrypoint:
            raise ValueError(f"entrypoint has unresolved placeholders: {self.entrypoint}")


@dataclass(frozen=True)
class AgentResponse:
    exit_status: int
    stdout: str
    stderr: str
    files_written: tuple[str, ...]
    duration: float


def _excerpt(path: Path) -> str:
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError:
        return "(unreadable)"
    if len(text) > EXCERPT_LIMIT:
        return text[:EXCERPT_LIMIT] + "\n[truncated]"
    return text


def assemble_prompt(
    skill: Skill,
    artifacts: "ArtifactSet | None",
    problem: str,
    fixes: str | None = None,
) -> str:
    """Deterministic prompt: skill function, constraints, done criteria,
    problem statement, then excerpts of the artifact kinds the skill declares
    as inputs (newest iteration first), and finally any fix block."""
    parts = [f"=== Skill: {skill.name} ===\n{skill.function_desc}"]
    if skill.constraints:
        parts.append("=== Constraints ===\n" + "\n".join(f"- {c}" for c in skill.constraints))
    parts.append("=== Done criteria ===\n" + "\n".join(f"- {g}" for g in skill.done_criteria))
    parts.append(f"=== Problem ===\n{problem}")
    if artifacts is not None:
        for io_field in skill.io_spec.inputs:
            for entry in reversed(artifacts.history(io_field.name)):
                parts.append(
                    f"=== Artifact: {io_field.name} (iteration {entry.iteration}) ===\n"
                    + _excerpt(entry.path)
                )
    if fixes:
        parts.append(f"=== Fixes ===\n{fixes}")
    return "\n\n".join(parts)


def resolve_entrypoint(
    template: str,
    workspace: Path,
    config: Path | str = "",
) -> str:
    """Substitute the allowed placeholder set into a command template."""
    return template.format(
        workspace=str(workspace),
        config=str(config),
        input=str(Path(workspace) / "input"),
        output=str(Path(workspace) / "output"),
    )


def _snapshot(workspace: Path) -> dict[str, str]:
    digest: dict[str, str] = {}
    for path in sorted(Path(workspace).rglob("*")):
        if path.is_file():
            digest[path.relative_to(workspace).as_posix()] = hashlib.sha256(
                path.read_bytes()
            ).hexdigest()
    return digest


class SubprocessBackend:
    """Launches the request's resolved command as a child process."""

    def invoke(self, request: AgentRequest) -> AgentResponse:
        workspace = Path(request.workspace)
        before = _snapshot(workspace)
        start = time.monotonic()
        env = dict(os.environ)
        env["WORKSPACE"] = str(workspace)
        env["LEGO_SKILL"] = request.skill
        try:
            proc = subprocess.run(
                shlex.split(request.entrypoint),
                cwd=workspace,
                input=request.prompt,
                capture_output=True,
                text=True,
                timeout=request.timeout,
                env=env,
            )
        except FileNotFoundError as exc:
            raise SpawnError(f"{request.entrypoint!r}: {exc}") from exc
        except subprocess.TimeoutExpired as exc:
            raise Timeout(request.timeout) from exc
        after = _snapshot(workspace)
        written = tuple(
            sorted(p for p, h in after.items() if before.get(p) != h)
        )
        return AgentResponse(
            exit_status=proc.returncode,
            stdout=proc.stdout,
            stderr=proc.stderr,
            files_written=written,
            duration=time.monotonic() - start,
        )


@dataclass(frozen=True)
class ReplayEntry:
    skill: str
    expect_prompt_contains: tuple[str, ...] = ()
    exit_status: int = 0
    stdout: str = ""
    stderr: str = ""
    write: tuple[tuple[str, str], ...] = ()

    @classmethod
    def from_obj(cls, obj: dict) -> "ReplayEntry":
        return cls(
            skill=obj["skill"],
            expect_prompt_contains=tuple(obj.get("expect_prompt_contains", ())),
            exit_status=int(obj.get("exit_status", 0)),
            stdout=obj.get("stdout", ""),
            stderr=obj.get("stderr", ""),
            write=tuple(sorted(obj.get("write", {}).items())),
        )


class ReplayBackend:
    """Deterministic scripted stand-in for a live code agent.

    The script is an ordered list so the same skill can answer differently
    across loop iterations. Each instance owns a cursor; use ``fresh()`` to
    start a new run on the same script.
    """

    def __init__(self, entries: tuple[ReplayEntry, ...]):
        self.entries = tuple(entries)
        self.cursor = 0
        self.requests: list[AgentRequest] = []

    @classmethod
    def from_file(cls, path: Path | str) -> "ReplayBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(tuple(ReplayEntry.from_obj(e) for e in data))

    @classmethod
    def from_objs(cls, objs: list[dict]) -> "ReplayBackend":
        return cls(tuple(ReplayEntry.from_obj(e) for e in objs))

    def fresh(self) -> "ReplayBackend":
        return ReplayBackend(self.entries)

    def invoke(self, request: AgentRequest) -> AgentResponse:
        self.requests.append(request)
        if self.cursor >= len(self.entries):
            raise ReplayExhausted(f"script exhausted after {len(self.entries)} entries")
        entry = self.entries[self.cursor]
        if entry.skill != request.skill:
            raise ReplayMismatch(expected=entry.skill, got=request.skill)
        for needle in entry.expect_prompt_contains:
            if needle not in request.prompt:
                raise ReplayMismatch(expected=f"prompt containing {needle!r}", got="absent")
        self.cursor += 1

        workspace = Path(request.workspace).resolve()
        for name, content in entry.write:
            target = (workspace / name).resolve()
            if not target.is_relative_to(workspace):
                raise ValueError(f"replay write escapes workspace: {name}")
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(content, encoding="utf-8")
        return AgentResponse(
            exit_status=entry.exit_status,
            stdout=entry.stdout,
            stderr=entry.stderr,
            files_written=tuple(sorted(name for name, _ in entry.write)),
            duration=0.0,
        )
