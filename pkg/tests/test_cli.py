"""Command-line surface: exit codes, outputs, file artifacts."""

import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from lego.cli import main
from lego.skill import render_skill

from conftest import FIXTURES, make_skill

TOOLS_DIR = FIXTURES / "tools"


def run_cli(*argv) -> int:
    try:
        return main(list(argv))
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)


def write_tools_config(tmp_path: Path) -> Path:
    path = tmp_path / "tools.json"
    path.write_text(json.dumps({
        "compile_cmd": f"{sys.executable} {TOOLS_DIR / 'fake_iverilog.py'} -o {{out}} {{sources}}",
        "sim_cmd": f"{sys.executable} {TOOLS_DIR / 'fake_vvp.py'} {{binary}}",
        "timeout_seconds": 10,
    }))
    return path


def write_problem(root: Path, pid: str, tb_marker: str = "") -> None:
    d = root / pid
    d.mkdir(parents=True)
    (d / "spec.md").write_text(f"Implement problem {pid}.")
    (d / "header.v").write_text("module top_module();")
    (d / "tb.v").write_text(f"// bench for {pid} {tb_marker}\n")


def write_run_config(tmp_path: Path, script: list, max_loops: int = 0) -> Path:
    script_path = tmp_path / "script.json"
    script_path.write_text(json.dumps(script))
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "name": "cli-fixture",
        "steps": {
            "rtl-gen": ["mage_rtl_generate"],
            "eda-tool": ["iverilog_compile", "iverilog_simulator"],
        },
        "max_loops": max_loops,
        "backend": {"kind": "replay", "script_path": str(script_path),
                    "timeout_seconds": 10},
        "workspace_root": str(tmp_path / "runs"),
    }))
    return config


GOOD_GEN_ENTRY = {"skill": "mage_rtl_generate", "write": {"rtl.v": "module top; endmodule"}}


class TestValidate:
    def test_seed_library(self, seed_path, capsys):
        assert run_cli("validate", str(seed_path)) == 0
        assert "42 skills, 24 groups, 6 steps" in capsys.readouterr().out

    def test_library_with_bad_name(self, tmp_path, capsys):
        good = make_skill(name="demo_gen")
        (tmp_path / "demo_gen.md").write_text(render_skill(good))
        bad_text = render_skill(good).replace("# demo_gen", "# demo_gen_other")
        (tmp_path / "demo_bad.md").write_text(bad_text)
        assert run_cli("validate", str(tmp_path)) == 1
        out = capsys.readouterr().out
        assert "demo_bad.md" in out

    def test_nonexistent_path(self, tmp_path):
        assert run_cli("validate", str(tmp_path / "ghost")) == 3


class TestRun:
    def test_two_problems_both_solved(self, tmp_path, capsys):
        problems = tmp_path / "problems"
        write_problem(problems, "p001")
        write_problem(problems, "p002")
        config = write_run_config(tmp_path, [GOOD_GEN_ENTRY])
        out = tmp_path / "out"
        code = run_cli(
            "run", "--config", str(config), "--problems", str(problems),
            "--out", str(out), "--tools", str(write_tools_config(tmp_path)),
        )
        assert code == 0
        assert "solved 2 / 2" in capsys.readouterr().out
        assert (out / "results.jsonl").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["solved"] == 2 and summary["total"] == 2
        assert "Solved: 2 / 2" in (out / "summary.md").read_text()

    def test_one_problem_fails(self, tmp_path, capsys):
        problems = tmp_path / "problems"
        write_problem(problems, "p001")
        write_problem(problems, "p002", tb_marker="BUG_MARKER")
        config = write_run_config(tmp_path, [GOOD_GEN_ENTRY])
        code = run_cli(
            "run", "--config", str(config), "--problems", str(problems),
            "--out", str(tmp_path / "out"), "--tools", str(write_tools_config(tmp_path)),
        )
        assert code == 1
        assert "solved 1 / 2" in capsys.readouterr().out

    def test_unknown_group_is_usage_error(self, tmp_path):
        problems = tmp_path / "problems"
        write_problem(problems, "p001")
        script_path = tmp_path / "script.json"
        script_path.write_text("[]")
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "name": "bad",
            "groups": ["Z9"],
            "backend": {"kind": "replay", "script_path": str(script_path)},
        }))
        code = run_cli(
            "run", "--config", str(config), "--problems", str(problems),
            "--out", str(tmp_path / "out"),
        )
        assert code == 2

    def test_malformed_config(self, tmp_path):
        problems = tmp_path / "problems"
        write_problem(problems, "p001")
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"name": "x"}))  # no composition
        assert run_cli(
            "run", "--config", str(config), "--problems", str(problems),
            "--out", str(tmp_path / "out"),
        ) == 2

    def test_relative_paths_from_user_cwd(self, tmp_path, monkeypatch, capsys):
        problems = tmp_path / "problems"
        write_problem(problems, "p001")
        config = write_run_config(tmp_path, [GOOD_GEN_ENTRY])
        tools = write_tools_config(tmp_path)
        monkeypatch.chdir(tmp_path)
        code = run_cli(
            "run", "--config", config.name, "--problems", "problems",
            "--out", "out", "--tools", tools.name,
        )
        assert code == 0
        assert "solved 1 / 1" in capsys.readouterr().out

    def test_malformed_problem_is_usage_error(self, tmp_path):
        problems = tmp_path / "problems"
        (problems / "p001").mkdir(parents=True)
        (problems / "p001" / "spec.md").write_text("spec without header stub")
        config = write_run_config(tmp_path, [GOOD_GEN_ENTRY])
        assert run_cli(
            "run", "--config", str(config), "--problems", str(problems),
            "--out", str(tmp_path / "out"),
        ) == 2

    def test_missing_replay_script_is_environment_error(self, tmp_path):
        problems = tmp_path / "problems"
        write_problem(problems, "p001")
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "name": "x",
            "groups": ["G2"],
            "backend": {"kind": "replay", "script_path": str(tmp_path / "ghost.json")},
        }))
        assert run_cli(
            "run", "--config", str(config), "--problems", str(problems),
            "--out", str(tmp_path / "out"),
        ) == 3

    def test_groups_composition_with_seed_library(self, tmp_path, capsys):
        problems = tmp_path / "problems"
        write_problem(problems, "p001")
        script_path = tmp_path / "script.json"
        script_path.write_text(json.dumps([
            GOOD_GEN_ENTRY,
            {"skill": "spec2rtl_closed_loop_waveform_feedback",
             "write": {"report.md": "no mismatch narrative needed"}},
            {"skill": "verilogcoder_waveform_trace",
             "write": {"report.md": "trace table"}},
        ]))
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "name": "G2E3",
            "groups": ["G2", "E3"],
            "backend": {"kind": "replay", "script_path": str(script_path),
                        "timeout_seconds": 10},
        }))
        code = run_cli(
            "run", "--config", str(config), "--problems", str(problems),
            "--out", str(tmp_path / "out"), "--tools", str(write_tools_config(tmp_path)),
        )
        assert code == 0
        assert "solved 1 / 1" in capsys.readouterr().out

    def test_subprocess_backend_end_to_end(self, tmp_path, capsys):
        problems = tmp_path / "problems"
        write_problem(problems, "p001")
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "name": "subprocess-fixture",
            "steps": {
                "rtl-gen": ["mage_rtl_generate"],
                "eda-tool": ["iverilog_compile", "iverilog_simulator"],
            },
            "backend": {
                "kind": "subprocess",
                "command": f"{sys.executable} {TOOLS_DIR / 'fake_agent.py'}",
                "timeout_seconds": 20,
            },
        }))
        code = run_cli(
            "run", "--config", str(config), "--problems", str(problems),
            "--out", str(tmp_path / "out"), "--tools", str(write_tools_config(tmp_path)),
        )
        assert code == 0
        assert "solved 1 / 1" in capsys.readouterr().out

    def test_missing_backend_command_is_environment_error(self, tmp_path):
        problems = tmp_path / "problems"
        write_problem(problems, "p001")
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "name": "x",
            "groups": ["G2"],
            "backend": {"kind": "subprocess", "command": "not-a-real-agent-binary"},
        }))
        assert run_cli(
            "run", "--config", str(config), "--problems", str(problems),
            "--out", str(tmp_path / "out"),
        ) == 3

    def test_multi_run_and_jobs(self, tmp_path):
        problems = tmp_path / "problems"
        write_problem(problems, "p001")
        config = write_run_config(tmp_path, [GOOD_GEN_ENTRY])
        out = tmp_path / "out"
        code = run_cli(
            "run", "--config", str(config), "--problems", str(problems),
            "--out", str(out), "--tools", str(write_tools_config(tmp_path)),
            "--runs", "3", "--jobs", "2",
        )
        assert code == 0
        lines = (out / "results.jsonl").read_text().splitlines()
        assert len(lines) == 3


class TestRag:
    def test_add_then_query(self, tmp_path, capsys):
        store = tmp_path / "store"
        code = run_cli(
            "rag", "add", "--store", str(store), "--step", "eda-tool",
            "--description", "blocking assignment in sequential block",
            "--symptom", "state lags by one cycle",
            "--root-cause", "blocking assignment",
            "--fix-strategy", "use nonblocking assignments",
        )
        assert code == 0
        assert "id: 1" in capsys.readouterr().out

        code = run_cli(
            "rag", "query", "--store", str(store), "--step", "eda-tool",
            "--query", "blocking assignment", "--full",
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "[1]" in out
        assert "use nonblocking assignments" in out

    def test_query_empty_store(self, tmp_path, capsys):
        assert run_cli(
            "rag", "query", "--store", str(tmp_path / "s"), "--step", "rtl-gen",
            "--query", "anything",
        ) == 0
        assert "no hits" in capsys.readouterr().out

    def test_missing_required_flag_is_usage_error(self, tmp_path):
        code = run_cli(
            "rag", "add", "--store", str(tmp_path / "s"), "--step", "eda-tool",
            "--description", "d", "--symptom", "s", "--root-cause", "r",
        )  # --fix-strategy omitted
        assert code == 2


class TestBuildSkills:
    def setup_inputs(self, tmp_path, script):
        project = tmp_path / "autobench"
        (project / "src").mkdir(parents=True)
        (project / "src" / "gen.py").write_text("pass\n")
        paper = tmp_path / "notes.md"
        paper.write_text("reference notes")
        script_path = tmp_path / "builder_script.json"
        script_path.write_text(json.dumps(script))
        backend = tmp_path / "backend.json"
        backend.write_text(json.dumps({"kind": "replay", "script_path": str(script_path)}))
        return project, paper, backend

    def capability(self, i):
        return {
            "title": f"cap {i}",
            "summary": f"summary {i}",
            "evidence": [],
            "suggested_step": "rtl-gen",
        }

    def extraction(self, name, desc):
        return {
            "skill": "skill_builder_extract",
            "stdout": json.dumps({
                "name": name,
                "function_desc": desc,
                "constraints": [],
                "entrypoint": "lego-agent --workspace {workspace}",
                "inputs": [{"name": "problem", "kind": "text"}],
                "outputs": [{"name": "rtl_code", "kind": "file"}],
            }),
        }

    def test_three_capabilities_three_files(self, tmp_path):
        script = [
            {"skill": "skill_builder_summarize",
             "stdout": json.dumps([self.capability(i) for i in range(3)])},
            self.extraction("one_gen", "first distinct generator"),
            self.extraction("two_gen", "second unrelated planner"),
            self.extraction("three_gen", "third separate checker"),
        ]
        project, paper, backend = self.setup_inputs(tmp_path, script)
        out = tmp_path / "skills"
        assert run_cli(
            "build-skills", "--project", str(project), "--paper", str(paper),
            "--backend", str(backend), "--out", str(out),
        ) == 0
        assert len(list(out.glob("autobench_*.md"))) == 3
        report = json.loads((out / "builder_report.json").read_text())
        assert report["dropped"] == []
        assert (out / "groups.json").exists()

    def test_duplicate_names_collapse(self, tmp_path):
        script = [
            {"skill": "skill_builder_summarize",
             "stdout": json.dumps([self.capability(i) for i in range(2)])},
            self.extraction("one_gen", "first distinct generator"),
            self.extraction("one_gen", "completely different wording here"),
        ]
        project, paper, backend = self.setup_inputs(tmp_path, script)
        out = tmp_path / "skills"
        assert run_cli(
            "build-skills", "--project", str(project), "--paper", str(paper),
            "--backend", str(backend), "--out", str(out),
        ) == 0
        assert len(list(out.glob("*.md"))) == 1
        report = json.loads((out / "builder_report.json").read_text())
        assert len(report["dropped"]) == 1

    def test_unreadable_project(self, tmp_path):
        _, paper, backend = self.setup_inputs(tmp_path, [])
        assert run_cli(
            "build-skills", "--project", str(tmp_path / "ghost"), "--paper", str(paper),
            "--backend", str(backend), "--out", str(tmp_path / "skills"),
        ) == 3

    def test_backend_failure_is_environment_error(self, tmp_path):
        script = [{"skill": "skill_builder_summarize", "stdout": "[]", "exit_status": 3}]
        project, paper, backend = self.setup_inputs(tmp_path, script)
        assert run_cli(
            "build-skills", "--project", str(project), "--paper", str(paper),
            "--backend", str(backend), "--out", str(tmp_path / "skills"),
        ) == 3


def write_results(path: Path, scheme: str, ids, solved_ids, loops=None):
    loops = loops or {}
    with path.open("w") as fh:
        for pid in ids:
            fh.write(json.dumps({
                "scheme": scheme, "problem_id": pid, "run_index": 0,
                "solved": pid in solved_ids, "loop_count": loops.get(pid, 0),
            }) + "\n")


class TestReport:
    IDS = [f"prob{i:03d}" for i in range(41)]

    def test_two_schemes_table_and_heatmap(self, tmp_path):
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        write_results(a, "baseline", self.IDS, set())
        write_results(b, "G1E3", self.IDS, set(self.IDS[:33]), loops={"prob000": 2})
        out = tmp_path / "report"
        assert run_cli(
            "report", str(a), str(b), "--baseline", "baseline", "--out", str(out)
        ) == 0
        md = (out / "summary.md").read_text()
        assert "| Solved | 33 / 41 | 0 / 41 |" in md or "| Solved | 0 / 41 | 33 / 41 |" in md
        assert "+80.5%" in md
        heatmap = (out / "heatmap.csv").read_text().splitlines()
        assert heatmap[0].startswith("scheme,prob000")
        g1e3_row = next(ln for ln in heatmap[1:] if ln.startswith("G1E3"))
        assert g1e3_row.split(",")[1] == "1:2"

    def test_disjoint_problem_sets(self, tmp_path):
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        write_results(a, "s1", ["p1", "p2"], set())
        write_results(b, "s2", ["p3", "p4"], set())
        assert run_cli(
            "report", str(a), str(b), "--baseline", "s1", "--out", str(tmp_path / "r")
        ) == 2

    def test_scheme_against_itself_gains_zero(self, tmp_path):
        a = tmp_path / "a.jsonl"
        write_results(a, "solo", self.IDS, set(self.IDS))
        out = tmp_path / "r"
        assert run_cli("report", str(a), "--baseline", "solo", "--out", str(out)) == 0
        assert "+0.0%" in (out / "summary.md").read_text()

    def test_rerun_overwrites_deterministically(self, tmp_path):
        a = tmp_path / "a.jsonl"
        write_results(a, "solo", self.IDS, set(self.IDS[:10]), loops={"prob001": 1})
        out = tmp_path / "r"
        assert run_cli("report", str(a), "--baseline", "solo", "--out", str(out)) == 0
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        assert run_cli("report", str(a), "--baseline", "solo", "--out", str(out)) == 0
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert first == second


class TestPassk:
    def test_value_printed(self, capsys):
        assert run_cli("passk", "--n", "10", "--c", "3", "--k", "3") == 0
        out = capsys.readouterr().out
        assert "17/24" in out and "0.708333" in out

    def test_domain_error_is_usage_error(self):
        assert run_cli("passk", "--n", "1", "--c", "2", "--k", "1") == 2


class TestHelp:
    @pytest.mark.parametrize("cmd", [
        [], ["validate"], ["run"], ["rag"], ["rag", "add"], ["rag", "query"],
        ["build-skills"], ["report"], ["passk"],
    ])
    def test_help_exits_zero(self, cmd):
        assert run_cli(*cmd, "--help") == 0

    def test_installed_entrypoint(self, seed_path):
        exe = shutil.which("lego")
        if exe is None:
            pytest.skip("console script not on PATH")
        proc = subprocess.run(
            [exe, "validate", str(seed_path)], capture_output=True, text=True
        )
        assert proc.returncode == 0
        assert "42 skills" in proc.stdout
