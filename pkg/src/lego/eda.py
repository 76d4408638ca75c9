"""EDA tool integration: compile and simulate Verilog through configurable
external commands, parse compiler diagnostics and VCD waveforms into
structured records, and inject seeded single-operator faults.

Tool commands are configuration. The defaults target the Icarus Verilog
pair (``iverilog`` / ``vvp``) but any compiler/simulator with compatible
command-line shapes can be substituted, including test doubles.
"""

from __future__ import annotations

import random
import re
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

DIAG_SEVERITIES = ("error", "warning", "note")


class SpawnError(Exception):
    pass


class Timeout(Exception):
    def __init__(self, seconds: float):
        self.seconds = seconds
        super().__init__(f"tool exceeded {seconds}s")


class VcdSyntax(Exception):
    def __init__(self, line: int, reason: str = ""):
        self.line = line
        super().__init__(f"VCD syntax error at line {line}" + (f": {reason}" if reason else ""))


class NoMutationSite(Exception):
    pass


@dataclass(frozen=True)
class Diagnostic:
    """One structured compiler/simulator message."""

    file: str
    line: int
    severity: str
    message: str
    raw: str


@dataclass(frozen=True)
class CompileResult:
    success: bool
    diagnostics: tuple[Diagnostic, ...]
    output_binary: Path | None
    log: str

    def errors(self) -> tuple[Diagnostic, ...]:
        return tuple(d for d in self.diagnostics if d.severity == "error")


@dataclass(frozen=True)
class SimResult:
    status: str  # pass | mismatch | tool_error | timeout
    mismatch_count: int | None
    log: str


@dataclass(frozen=True)
class PassRule:
    """One ordered classification rule applied to the simulator log."""

    regex: str
    status: str
    count_group: int | None = None


DEFAULT_PASS_RULES = (
    PassRule(regex=r"Mismatches:\s*0\s+in\s+\d+\s+samples", status="pass"),
    PassRule(
        regex=r"Mismatches:\s*(\d+)\s+in\s+\d+\s+samples",
        status="mismatch",
        count_group=1,
    ),
    PassRule(regex=r"(?i)assert(?:ion)?\s+fail|\$fatal|\bFAILED\b", status="mismatch"),
)


@dataclass(frozen=True)
class ToolConfig:
    compile_cmd: str = "iverilog -g2012 -o {out} {sources}"
    sim_cmd: str = "vvp {binary}"
    timeout_seconds: float = 60.0
    pass_rules: tuple[PassRule, ...] = DEFAULT_PASS_RULES

    @classmethod
    def from_json(cls, data: dict) -> "ToolConfig":
        rules = tuple(
            PassRule(r["regex"], r["status"], r.get("count_group"))
            for r in data.get("pass_rules", [])
        ) or DEFAULT_PASS_RULES
        return cls(
            compile_cmd=data.get("compile_cmd", cls.compile_cmd),
            sim_cmd=data.get("sim_cmd", cls.sim_cmd),
            timeout_seconds=float(data.get("timeout_seconds", cls.timeout_seconds)),
            pass_rules=rules,
        )


_DIAG_RE = re.compile(
    r"^(?P<file>[^:\s][^:]*):(?P<line>\d+):\s*(?P<sev>error|warning|note)\s*:\s*(?P<msg>.*)$"
)
_SYNTAX_RE = re.compile(r"^(?P<file>[^:\s][^:]*):(?P<line>\d+):\s*(?P<msg>syntax error.*)$")


def parse_diagnostics(stderr: str) -> list[Diagnostic]:
    """Parse tool stderr into structured diagnostics.

    Recognizes ``file:line: severity: message`` and ``file:line: syntax
    error`` (which defaults to error severity). Any other nonempty line
    becomes a note with line 0, so the parser is total over arbitrary text.
    """
    out: list[Diagnostic] = []
    for raw in stderr.splitlines():
        if not raw.strip():
            continue
        m = _DIAG_RE.match(raw)
        if m:
            out.append(
                Diagnostic(m["file"], int(m["line"]), m["sev"], m["msg"].strip(), raw)
            )
            continue
        m = _SYNTAX_RE.match(raw)
        if m:
            out.append(Diagnostic(m["file"], int(m["line"]), "error", m["msg"].strip(), raw))
            continue
        out.append(Diagnostic("", 0, "note", raw.strip(), raw))
    return out


def _run(cmd: str, workdir: Path, timeout: float) -> subprocess.CompletedProcess:
    try:
        return subprocess.run(
            shlex.split(cmd),
            cwd=workdir,
            capture_output=True,
            text=True,
            timeout=timeout,
        )
    except FileNotFoundError as exc:
        raise SpawnError(f"{cmd!r}: {exc}") from exc
    except subprocess.TimeoutExpired as exc:
        raise Timeout(timeout) from exc


def compile(
    sources: list[Path],
    workdir: Path,
    tool_config: ToolConfig = ToolConfig(),
    out_name: str = "sim.out",
) -> CompileResult:
    """Compile sources in workdir; success requires exit 0 and a produced
    binary. Raises SpawnError/Timeout; compile failures are results."""
    if not sources:
        raise ValueError("compile requires at least one source file")
    for src in sources:
        if not Path(src).exists():
            raise ValueError(f"source does not exist: {src}")
    workdir = Path(workdir)
    out_path = workdir / out_name
    cmd = tool_config.compile_cmd.format(
        out=shlex.quote(str(out_path)),
        sources=" ".join(shlex.quote(str(s)) for s in sources),
    )
    proc = _run(cmd, workdir, tool_config.timeout_seconds)
    log = proc.stdout + proc.stderr
    diagnostics = parse_diagnostics(proc.stderr)
    success = proc.returncode == 0 and out_path.exists()
    if not success and not any(d.severity == "error" for d in diagnostics):
        reason = f"compiler exited {proc.returncode} without an error diagnostic"
        diagnostics.append(Diagnostic("", 0, "note", reason, reason))
    return CompileResult(
        success=success,
        diagnostics=tuple(diagnostics),
        output_binary=out_path if success else None,
        log=log,
    )


def simulate(
    binary: Path,
    workdir: Path,
    tool_config: ToolConfig = ToolConfig(),
) -> SimResult:
    """Run the simulator and classify its log with the ordered pass rules.

    First matching rule wins. Without a match, nonzero exit means
    tool_error and clean exit means pass. A wall-clock overrun maps to
    status ``timeout`` instead of raising.
    """
    binary = Path(binary)
    if not binary.exists():
        raise ValueError(f"simulation binary does not exist: {binary}")
    cmd = tool_config.sim_cmd.format(binary=shlex.quote(str(binary)))
    try:
        proc = _run(cmd, Path(workdir), tool_config.timeout_seconds)
    except Timeout:
        return SimResult(status="timeout", mismatch_count=None, log="")
    log = proc.stdout + proc.stderr
    for rule in tool_config.pass_rules:
        m = re.search(rule.regex, log)
        if not m:
            continue
        count = None
        if rule.count_group is not None:
            count = int(m.group(rule.count_group))
            if rule.status == "mismatch" and count == 0:
                continue
        return SimResult(status=rule.status, mismatch_count=count, log=log)
    if proc.returncode != 0:
        return SimResult(status="tool_error", mismatch_count=None, log=log)
    return SimResult(status="pass", mismatch_count=None, log=log)


class EdaHarness:
    """Bundles one tool configuration behind the compile/simulate pair the
    workflow runner calls."""

    def __init__(self, tool_config: ToolConfig = ToolConfig()):
        self.tool_config = tool_config

    def compile(self, sources: list[Path], workdir: Path) -> CompileResult:
        return compile(sources, workdir, self.tool_config)

    def simulate(self, binary: Path, workdir: Path) -> SimResult:
        return simulate(binary, workdir, self.tool_config)


# --- VCD parsing -----------------------------------------------------------

_SCALAR_VALUES = frozenset("01xXzZ")


@dataclass(frozen=True)
class Waveform:
    timescale: tuple[int, str]
    signals: dict[str, list[tuple[int, str]]]
    change_count: int = 0


def _vcd_tokens(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        for tok in line.split():
            yield tok, lineno


def parse_vcd(text: str) -> Waveform:
    """Parse the textual VCD subset: timescale, scopes, scalar/vector vars,
    value changes. ``$comment`` bodies are skipped; ``$dumpvars`` markers are
    transparent so initial values land at the current time."""
    if not text.strip():
        raise VcdSyntax(1, "empty input")

    tokens = list(_vcd_tokens(text))
    pos = 0

    def next_token() -> tuple[str, int]:
        nonlocal pos
        if pos >= len(tokens):
            raise VcdSyntax(tokens[-1][1] if tokens else 1, "unexpected end of input")
        tok = tokens[pos]
        pos += 1
        return tok

    def skip_to_end(start_line: int) -> list[str]:
        body = []
        while True:
            tok, _ = next_token()
            if tok == "$end":
                return body
            body.append(tok)

    timescale = (1, "s")
    scope: list[str] = []
    code_to_names: dict[str, list[str]] = {}
    signals: dict[str, list[tuple[int, str]]] = {}
    current_time = 0
    change_count = 0
    in_header = True

    def record(code: str, value: str, lineno: int) -> None:
        nonlocal change_count
        names = code_to_names.get(code)
        if names is None:
            raise VcdSyntax(lineno, f"value change for undeclared id {code!r}")
        change_count += 1
        for name in names:
            series = signals[name]
            if series and series[-1][0] == current_time:
                series[-1] = (current_time, value)
            else:
                series.append((current_time, value))

    while pos < len(tokens):
        tok, lineno = next_token()
        if tok == "$comment":
            skip_to_end(lineno)
        elif tok == "$timescale":
            body = skip_to_end(lineno)
            joined = "".join(body)
            m = re.fullmatch(r"(\d+)\s*(s|ms|us|ns|ps|fs)", joined)
            if not m:
                raise VcdSyntax(lineno, f"bad timescale {joined!r}")
            timescale = (int(m.group(1)), m.group(2))
        elif tok == "$scope":
            body = skip_to_end(lineno)
            if len(body) != 2:
                raise VcdSyntax(lineno, "scope expects type and name")
            scope.append(body[1])
        elif tok == "$upscope":
            skip_to_end(lineno)
            if not scope:
                raise VcdSyntax(lineno, "upscope without open scope")
            scope.pop()
        elif tok == "$var":
            body = skip_to_end(lineno)
            if len(body) < 4:
                raise VcdSyntax(lineno, "var expects type, width, id, name")
            _, width, code, name = body[0], body[1], body[2], body[3]
            if not width.isdigit():
                raise VcdSyntax(lineno, f"bad var width {width!r}")
            full = ".".join(scope + [name])
            code_to_names.setdefault(code, []).append(full)
            signals.setdefault(full, [])
        elif tok == "$enddefinitions":
            skip_to_end(lineno)
            in_header = False
        elif tok in ("$dumpvars", "$dumpall", "$dumpoff", "$dumpon", "$end"):
            continue
        elif tok.startswith("$"):
            skip_to_end(lineno)
        elif tok.startswith("#"):
            if in_header or not tok[1:].isdigit():
                raise VcdSyntax(lineno, f"bad time marker {tok!r}")
            current_time = int(tok[1:])
        elif tok[0] in _SCALAR_VALUES and len(tok) >= 2:
            if in_header:
                raise VcdSyntax(lineno, "value change before $enddefinitions")
            record(tok[1:], tok[0].lower(), lineno)
        elif tok[0] in "bB":
            bits = tok[1:].lower()
            if in_header or not bits or any(c not in "01xz" for c in bits):
                raise VcdSyntax(lineno, f"bad vector change {tok!r}")
            code, _ = next_token()
            record(code, bits, lineno)
        else:
            raise VcdSyntax(lineno, f"unrecognized token {tok!r}")

    if in_header:
        raise VcdSyntax(tokens[-1][1], "missing $enddefinitions")
    return Waveform(timescale=timescale, signals=signals, change_count=change_count)


def signal_window(
    waveform: Waveform, name: str, start: int, end: int
) -> list[tuple[int, str]]:
    """Changes of one signal with start <= time <= end."""
    series = waveform.signals.get(name)
    if series is None:
        raise KeyError(name)
    return [(t, v) for t, v in series if start <= t <= end]


# --- Fault injection -------------------------------------------------------


@dataclass(frozen=True)
class FaultDescription:
    operator: str
    position: int
    original: str


_COMMENT_OR_STRING_RE = re.compile(
    r"//[^\n]*|/\*.*?\*/|\"(?:[^\"\\]|\\.)*\"", re.DOTALL
)

_TOKEN_SWAPS = (
    ("and_to_or", re.compile(r"(?<!&)&(?!&)"), "|"),
    ("or_to_and", re.compile(r"(?<!\|)\|(?!\|)"), "&"),
    ("eq_to_neq", re.compile(r"(?<![=!<>])==(?!=)"), "!="),
    ("neq_to_eq", re.compile(r"(?<!=)!=(?!=)"), "=="),
    ("plus_to_minus", re.compile(r"\+"), "-"),
    ("minus_to_plus", re.compile(r"-"), "+"),
)


def _masked(rtl: str) -> str:
    """Blank out comments and strings, preserving offsets."""
    return _COMMENT_OR_STRING_RE.sub(lambda m: " " * len(m.group()), rtl)


def _always_spans(masked: str) -> list[tuple[int, int]]:
    spans = []
    for m in re.finditer(r"\balways\b", masked):
        begin = re.compile(r"\bbegin\b|\bend\b|;").search(masked, m.end())
        if begin is None:
            continue
        if begin.group() != "begin":
            spans.append((m.end(), begin.end()))
            continue
        depth = 1
        pos = begin.end()
        for b in re.finditer(r"\bbegin\b|\bend\b", masked[begin.end():]):
            depth += 1 if b.group() == "begin" else -1
            if depth == 0:
                pos = begin.end() + b.end()
                break
        spans.append((m.end(), pos))
    return spans


def _if_condition_span(masked: str, open_paren: int) -> int | None:
    depth = 0
    for i in range(open_paren, len(masked)):
        if masked[i] == "(":
            depth += 1
        elif masked[i] == ")":
            depth -= 1
            if depth == 0:
                return i
    return None


def _mutation_sites(rtl: str) -> list[tuple[str, int, int, str]]:
    """(operator, start, end, replacement) for every mutable token."""
    masked = _masked(rtl)
    sites: list[tuple[str, int, int, str]] = []
    for op, pattern, replacement in _TOKEN_SWAPS:
        for m in pattern.finditer(masked):
            if op in ("plus_to_minus", "minus_to_plus"):
                nxt = masked[m.end(): m.end() + 1]
                if nxt == ":":  # keep part-selects intact
                    continue
            sites.append((op, m.start(), m.end(), replacement))

    for m in re.finditer(r"\bif\s*\(", masked):
        open_paren = m.end() - 1
        close = _if_condition_span(masked, open_paren)
        if close is not None:
            cond = rtl[open_paren + 1: close]
            sites.append(("negate_if", open_paren + 1, close, f"!({cond})"))

    for start, end in _always_spans(masked):
        segment = masked[start:end]
        for m in re.finditer(r"<=", segment):
            sites.append(("nonblocking_to_blocking", start + m.start(), start + m.end(), "="))
        for m in re.finditer(r"(?<![=!<>])=(?!=)", segment):
            if segment[m.start() - 1: m.start()] == "<":
                continue
            sites.append(("blocking_to_nonblocking", start + m.start(), start + m.end(), "<="))

    sites.sort(key=lambda s: (s[1], s[0]))
    return sites


def inject_fault(rtl: str, seed: int) -> tuple[str, FaultDescription]:
    """Apply exactly one seeded operator mutation to the RTL text.

    Deterministic per (rtl, seed). Raises NoMutationSite when the text
    contains no token from the mutation operator set.
    """
    sites = _mutation_sites(rtl)
    if not sites:
        raise NoMutationSite("no mutable operator found")
    op, start, end, replacement = sites[random.Random(seed).randrange(len(sites))]
    mutated = rtl[:start] + replacement + rtl[end:]
    return mutated, FaultDescription(operator=op, position=start, original=rtl[start:end])
