"""Append-only debugging-experience store with two-stage lazy retrieval.

Each workflow step owns one JSONL log (``rag_<step>.jsonl``). A record's
leading fields are id and description; the detailed body fields follow.
Stage 1 ranks entries using only an in-memory description index, so it never
touches body fields; stage 2 loads one full record on demand by seeking to
its byte offset.

Matching is embedding-free: lowercase tokens weighted by inverse document
frequency, scored as the weighted overlap between query and description.
"""

from __future__ import annotations

import json
import math
import re
import time
from dataclasses import dataclass, replace
from pathlib import Path

from .skill import WorkflowStep

MAX_DESCRIPTION_LEN = 200
DEFAULT_K = 3
DEFAULT_TAU = 0.2
MIN_TOKEN_LEN = 2

# Fixed 40-word stopword list; tokens shorter than MIN_TOKEN_LEN are dropped
# before this filter applies.
STOPWORDS = frozenset(
    """a an the and or not of in on at to for with by from as is are was were
    be been it its this that these those then than but if when while all any
    each into over under""".split()
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class StorageError(Exception):
    pass


class NotFound(Exception):
    def __init__(self, unit_id: int):
        self.unit_id = unit_id
        super().__init__(f"no knowledge unit with id {unit_id}")


class EmptyHits(Exception):
    pass


@dataclass(frozen=True)
class KnowledgeUnit:
    """One recorded piece of debugging experience."""

    id: int
    step: WorkflowStep
    description: str
    symptom_pattern: str
    root_cause: str
    fix_strategy: str
    applicable_conditions: str = ""
    created_at: str = ""

    def check(self) -> None:
        if not self.description.strip():
            raise ValueError("description must be nonempty")
        if len(self.description) > MAX_DESCRIPTION_LEN:
            raise ValueError(
                f"description exceeds {MAX_DESCRIPTION_LEN} characters"
            )
        if not self.symptom_pattern.strip():
            raise ValueError("symptom_pattern must be nonempty")
        if not self.fix_strategy.strip():
            raise ValueError("fix_strategy must be nonempty")


@dataclass(frozen=True)
class RetrievalHit:
    id: int
    step: WorkflowStep
    score: float
    description: str


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric tokens, short and stopword tokens removed."""
    return [
        t
        for t in _TOKEN_RE.findall(text.lower())
        if len(t) >= MIN_TOKEN_LEN and t not in STOPWORDS
    ]


@dataclass(frozen=True)
class IdfTable:
    """Document frequencies over one step store's descriptions."""

    unit_count: int
    doc_freq: dict[str, int]

    def weight(self, token: str) -> float:
        df = self.doc_freq.get(token, 0)
        return math.log(1.0 + self.unit_count / (1.0 + df))


def score(query: str, description: str, idf: IdfTable) -> float:
    """Weighted token overlap in [0, 1]; 0 when the query has no tokens."""
    q_tokens = set(tokenize(query))
    if not q_tokens:
        return 0.0
    d_tokens = set(tokenize(description))
    denom = sum(idf.weight(t) for t in sorted(q_tokens))
    if denom == 0.0:
        return 0.0
    num = sum(idf.weight(t) for t in sorted(q_tokens & d_tokens))
    return num / denom


@dataclass(frozen=True)
class _IndexEntry:
    unit_id: int
    description: str
    tokens: frozenset[str]
    offset: int


class _StepIndex:
    """In-memory description index for one step log: ids, token sets, and an
    inverted token -> entry map for sub-millisecond stage-1 scans."""

    def __init__(self):
        self.entries: list[_IndexEntry] = []
        self.by_id: dict[int, _IndexEntry] = {}
        self.postings: dict[str, list[_IndexEntry]] = {}
        self.doc_freq: dict[str, int] = {}

    def add(self, unit_id: int, description: str, offset: int) -> None:
        tokens = frozenset(tokenize(description))
        entry = _IndexEntry(unit_id, description, tokens, offset)
        self.entries.append(entry)
        self.by_id[unit_id] = entry
        for t in tokens:
            self.postings.setdefault(t, []).append(entry)
            self.doc_freq[t] = self.doc_freq.get(t, 0) + 1

    @property
    def next_id(self) -> int:
        return self.entries[-1].unit_id + 1 if self.entries else 1

    def idf(self) -> IdfTable:
        return IdfTable(unit_count=len(self.entries), doc_freq=self.doc_freq)


class RagStore:
    """Append-only store rooted at a directory, one log per workflow step.

    Appends are serialized through one owner handle; readers opened on the
    same root observe a consistent prefix of each log.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(str(exc)) from exc
        self._indexes: dict[WorkflowStep, _StepIndex] = {}

    def log_path(self, step: WorkflowStep) -> Path:
        return self.root / f"rag_{step.value}.jsonl"

    def _index(self, step: WorkflowStep) -> _StepIndex:
        index = self._indexes.get(step)
        if index is None:
            index = _StepIndex()
            path = self.log_path(step)
            if path.exists():
                try:
                    offset = 0
                    with path.open("rb") as fh:
                        for raw in fh:
                            record = json.loads(raw.decode("utf-8"))
                            index.add(record["id"], record["description"], offset)
                            offset += len(raw)
                except (OSError, json.JSONDecodeError, KeyError) as exc:
                    raise StorageError(f"{path}: {exc}") from exc
            self._indexes[step] = index
        return index

    def append_unit(self, unit: KnowledgeUnit) -> int:
        """Append one unit to its step log; returns the assigned id."""
        unit.check()
        index = self._index(unit.step)
        unit = replace(
            unit,
            id=index.next_id,
            created_at=unit.created_at or time.strftime("%Y-%m-%dT%H:%M:%S"),
        )
        record = {
            "id": unit.id,
            "description": unit.description,
            "symptom_pattern": unit.symptom_pattern,
            "root_cause": unit.root_cause,
            "fix_strategy": unit.fix_strategy,
            "applicable_conditions": unit.applicable_conditions,
            "created_at": unit.created_at,
        }
        line = json.dumps(record, ensure_ascii=False) + "\n"
        path = self.log_path(unit.step)
        try:
            offset = path.stat().st_size if path.exists() else 0
            with path.open("a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
        except OSError as exc:
            raise StorageError(str(exc)) from exc
        index.add(unit.id, unit.description, offset)
        return unit.id

    def stage1_retrieve(
        self,
        step: WorkflowStep,
        query: str,
        k: int = DEFAULT_K,
        tau: float = DEFAULT_TAU,
    ) -> list[RetrievalHit]:
        """Rank entries by description overlap; returns at most k hits with
        score >= tau, sorted by (score desc, id asc). Body fields are never
        read."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must be within [0, 1]")
        index = self._index(step)
        q_tokens = sorted(set(tokenize(query)))
        if not q_tokens or not index.entries:
            return []

        idf = index.idf()
        denom = sum(idf.weight(t) for t in q_tokens)
        if denom == 0.0:
            return []
        acc: dict[int, float] = {}
        for t in q_tokens:
            w = idf.weight(t)
            for entry in index.postings.get(t, ()):
                acc[entry.unit_id] = acc.get(entry.unit_id, 0.0) + w

        hits = [
            RetrievalHit(
                id=uid,
                step=step,
                score=total / denom,
                description=index.by_id[uid].description,
            )
            for uid, total in acc.items()
            if total / denom >= tau
        ]
        hits.sort(key=lambda h: (-h.score, h.id))
        return hits[:k]

    def _load_record_at(self, step: WorkflowStep, offset: int) -> dict:
        """Read one full record from disk. Stage 1 must never call this."""
        path = self.log_path(step)
        try:
            with path.open("rb") as fh:
                fh.seek(offset)
                raw = fh.readline()
            return json.loads(raw.decode("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise StorageError(f"{path} at offset {offset}: {exc}") from exc

    def stage2_load(self, step: WorkflowStep, unit_id: int) -> KnowledgeUnit:
        """Load the complete knowledge unit behind a stage-1 hit."""
        index = self._index(step)
        entry = index.by_id.get(unit_id)
        if entry is None:
            raise NotFound(unit_id)
        record = self._load_record_at(step, entry.offset)
        return KnowledgeUnit(
            id=record["id"],
            step=step,
            description=record["description"],
            symptom_pattern=record["symptom_pattern"],
            root_cause=record["root_cause"],
            fix_strategy=record["fix_strategy"],
            applicable_conditions=record.get("applicable_conditions", ""),
            created_at=record.get("created_at", ""),
        )


def build_fix_prompt(units: list[KnowledgeUnit], context: str) -> str:
    """Render retrieved units as an explicit instruction block, one labeled
    paragraph per unit in hit order, with the triggering context last."""
    if not units:
        raise EmptyHits("no knowledge units to render")
    blocks = ["Recorded fixes for similar failures:"]
    for i, unit in enumerate(units, start=1):
        blocks.append(
            f"[{i}]\n"
            f"Symptom pattern: {unit.symptom_pattern}\n"
            f"Root cause: {unit.root_cause}\n"
            f"Fix strategy: {unit.fix_strategy}\n"
            f"Applicable conditions: {unit.applicable_conditions}"
        )
    blocks.append(f"Current failure context:\n{context}")
    return "\n\n".join(blocks)
