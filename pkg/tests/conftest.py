import sys
from pathlib import Path

import pytest

from lego import seed_library_path
from lego.bench import Problem
from lego.eda import ToolConfig
from lego.skill import IoField, IoSpec, SchemaDef, SchemaEntry, Skill, WorkflowStep

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def seed_path() -> Path:
    return seed_library_path()


@pytest.fixture(scope="session")
def fake_tool_config() -> ToolConfig:
    tools = FIXTURES / "tools"
    return ToolConfig(
        compile_cmd=f"{sys.executable} {tools / 'fake_iverilog.py'} -o {{out}} {{sources}}",
        sim_cmd=f"{sys.executable} {tools / 'fake_vvp.py'} {{binary}}",
        timeout_seconds=10.0,
    )


def make_skill(
    name: str = "demo_skill",
    step: WorkflowStep = WorkflowStep.RTL_GEN,
    inputs=(),
    outputs=(("rtl_code", "file", "generated design"),),
    **overrides,
) -> Skill:
    io_spec = IoSpec(
        inputs=tuple(IoField(*f) for f in inputs),
        outputs=tuple(IoField(*f) for f in outputs),
    )
    schema = SchemaDef(
        entries=tuple(SchemaEntry(f.name, "string", True) for f in io_spec.outputs)
    )
    base = dict(
        name=name,
        step=step,
        function_desc="Generate the design artifact for this stage.",
        constraints=("Keep outputs deterministic.",),
        entrypoint="lego-agent --workspace {workspace}",
        io_spec=io_spec,
        schema=schema,
        done_criteria=("declared outputs exist and are nonempty",),
        source_project="demo",
    )
    base.update(overrides)
    return Skill(**base)


def make_problem(problem_id: str = "p001", tb: str | None = None) -> Problem:
    return Problem(
        id=problem_id,
        spec="Implement a 3-bit adder producing a 4-bit sum.",
        module_header="module top_module(input [2:0] a, input [2:0] b, output [3:0] sum);",
        ref_testbench=tb,
    )
