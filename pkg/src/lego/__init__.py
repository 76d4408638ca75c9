"""Skill-based workflow platform for LLM-assisted digital front-end design.

The package bundles a markdown skill model, a skill library registry, an
append-only debugging-experience store with two-stage retrieval, a six-step
workflow state machine with EDA feedback loops, agent backends (subprocess
and deterministic replay), an EDA tool harness, a skill builder pipeline,
and a pass@k benchmark harness. The ``lego`` command exposes all of it.
"""

from importlib.resources import files
from pathlib import Path

from .skill import (
    IoField,
    IoSpec,
    SchemaDef,
    SchemaEntry,
    Skill,
    Violation,
    WorkflowStep,
    parse_skill,
    render_skill,
    validate_skill,
)
from .registry import (
    CompositionPlan,
    SkillGroup,
    SkillRegistry,
    compose,
    load_library,
    stats,
)

__version__ = "0.1.0"


def seed_library_path() -> Path:
    """Location of the bundled skill library."""
    return Path(str(files("lego").joinpath("data/seed_library")))
